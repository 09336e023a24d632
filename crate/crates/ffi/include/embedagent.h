/* C interface to the embedagent runtime. */

#ifndef EMBEDAGENT_H
#define EMBEDAGENT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum EaStatus {
  EA_STATUS_OK = 0,
  EA_STATUS_NULL_POINTER = 1,
  EA_STATUS_INVALID_UTF8 = 2,
  EA_STATUS_INVALID_JSON = 3,
  EA_STATUS_INVALID_REGISTRY = 4,
  EA_STATUS_INVALID_MESSAGE = 5,
  EA_STATUS_UNKNOWN_FUNCTION = 6,
  EA_STATUS_INVALID_CALL = 7,
  EA_STATUS_INVALID_INPUT = 8,
  EA_STATUS_IO = 9,
  EA_STATUS_PANIC = 10,
} EaStatus;

/**
 * Opaque function registry.
 */
typedef struct EaRegistry EaRegistry;

/**
 * Opaque running gateway with its own runtime.
 */
typedef struct EaServer EaServer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ea_version(void);

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *ea_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ea_string_free(char *s);

/**
 * Builds a registry from a JSON array of function specs and an optional JSON
 * object mapping page patterns to function names.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum EaStatus ea_registry_new(const char *skillset_json,
                              const char *page_map_json,
                              struct EaRegistry **out);

/**
 * # Safety
 * `reg` must come from [`ea_registry_new`] and not have been freed.
 */
void ea_registry_free(struct EaRegistry *reg);

/**
 * Number of registered functions, or 0 for a null handle.
 *
 * # Safety
 * `reg` must be null or a live registry.
 */
size_t ea_registry_len(const struct EaRegistry *reg);

/**
 * Writes the JSON array of function specs visible at `url`, in registration
 * order.
 *
 * # Safety
 * `reg` must be a live registry; `url` NUL-terminated; `out_json` writable.
 */
enum EaStatus ea_registry_filter(const struct EaRegistry *reg, const char *url, char **out_json);

/**
 * Checks `args_json` (a JSON object) against the named function's schema.
 *
 * # Safety
 * `reg` must be a live registry; strings NUL-terminated.
 */
enum EaStatus ea_registry_validate_call(const struct EaRegistry *reg,
                                        const char *name,
                                        const char *args_json);

/**
 * Decodes and validates one wire frame. On success writes the message kind
 * to `out_kind` when it is not null. On failure the error message starts
 * with the protocol error code, e.g. `unknown_kind: ...`.
 *
 * # Safety
 * `frame` must point to `len` readable bytes.
 */
enum EaStatus ea_message_validate(const uint8_t *frame, size_t len, char **out_kind);

/**
 * Writes `{"is_pfas": bool, "evidence": [..]}` for a SMILES string.
 *
 * # Safety
 * `smiles` must be NUL-terminated; `out_json` writable.
 */
enum EaStatus ea_pfas_classify(const char *smiles, char **out_json);

/**
 * Renders a snapshot (`{"url": .., "elements": [..]}`) as prompt text. When
 * `filter` is true, elements outside the default tag allowlist are dropped
 * first.
 *
 * # Safety
 * `snapshot_json` must be NUL-terminated; `out_text` writable.
 */
enum EaStatus ea_observation_render(const char *snapshot_json, bool filter, char **out_text);

/**
 * Starts a gateway from a TOML config file. `bind` overrides the configured
 * address when not null; port 0 picks a free port.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` writable. Must not be called from
 * inside an async runtime.
 */
enum EaStatus ea_server_start(const char *config_path, const char *bind, struct EaServer **out);

/**
 * Bound TCP port, or 0 for a null handle.
 *
 * # Safety
 * `srv` must be null or a live server.
 */
uint16_t ea_server_port(const struct EaServer *srv);

/**
 * Writes the WebSocket URL clients connect to.
 *
 * # Safety
 * `srv` must be a live server; `out_url` writable.
 */
enum EaStatus ea_server_ws_url(const struct EaServer *srv, char **out_url);

/**
 * Stops the gateway and releases the handle. Null is ignored.
 *
 * # Safety
 * `srv` must come from [`ea_server_start`] and not have been stopped.
 */
void ea_server_stop(struct EaServer *srv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMBEDAGENT_H */
