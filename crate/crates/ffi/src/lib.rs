//! C ABI over the embedagent core.
//!
//! Every fallible call returns an [`EaStatus`]. On failure,
//! [`ea_last_error_message`] describes the cause for the calling thread.
//! Strings handed out through out-pointers belong to the caller and are
//! released with [`ea_string_free`]. Handles are released with their `_free`
//! or `_stop` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use embedagent::config::ServerConfig;
use embedagent::gateway::{Gateway, RunningServer};
use embedagent::observation::{filter_by_tag, render_observation, AriaSnapshot, TagAllowlist};
use embedagent::registry::{build_registry, filter_for_url, validate_call, FunctionSpec, PageFunctionMap, Registry};
use embedagent::tools::pfas_classify;
use embedagent::wire::decode_message;
use serde_json::{Map, Value};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    InvalidRegistry = 4,
    InvalidMessage = 5,
    UnknownFunction = 6,
    InvalidCall = 7,
    InvalidInput = 8,
    Io = 9,
    Panic = 10,
}

/// Opaque function registry.
pub struct EaRegistry {
    inner: Registry,
}

/// Opaque running gateway with its own runtime.
pub struct EaServer {
    runtime: tokio::runtime::Runtime,
    server: Option<RunningServer>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EaStatus, String);

impl Failure {
    fn new(status: EaStatus, message: impl std::fmt::Display) -> Self {
        Self(status, message.to_string())
    }
}

fn set_last_error(message: Option<String>) {
    let message = message.map(|m| CString::new(m.replace('\0', "\\0")).expect("NUL bytes were escaped"));
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            EaStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(Some(message));
            status
        }
        Err(_) => {
            set_last_error(Some("internal panic".into()));
            EaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(EaStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(EaStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn json_arg<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::new(EaStatus::InvalidJson, format!("{what}: {e}")))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(EaStatus::NullPointer, "output pointer is null"));
    }
    let c = CString::new(s).map_err(|_| Failure::new(EaStatus::InvalidInput, "result contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(EaStatus::NullPointer, format!("{what} is null")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ea_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn ea_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ea_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a registry from a JSON array of function specs and an optional JSON
/// object mapping page patterns to function names.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ea_registry_new(
    skillset_json: *const c_char,
    page_map_json: *const c_char,
    out: *mut *mut EaRegistry,
) -> EaStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(EaStatus::NullPointer, "output pointer is null"));
        }
        let skillset: Vec<FunctionSpec> = json_arg(str_arg(skillset_json, "skillset_json")?, "skillset_json")?;
        let map = if page_map_json.is_null() {
            PageFunctionMap::new()
        } else {
            PageFunctionMap {
                entries: json_arg(str_arg(page_map_json, "page_map_json")?, "page_map_json")?,
            }
        };
        let inner = build_registry(skillset, map).map_err(|e| Failure::new(EaStatus::InvalidRegistry, e))?;
        *out = Box::into_raw(Box::new(EaRegistry { inner }));
        Ok(())
    })
}

/// # Safety
/// `reg` must come from [`ea_registry_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ea_registry_free(reg: *mut EaRegistry) {
    if !reg.is_null() {
        drop(Box::from_raw(reg));
    }
}

/// Number of registered functions, or 0 for a null handle.
///
/// # Safety
/// `reg` must be null or a live registry.
#[no_mangle]
pub unsafe extern "C" fn ea_registry_len(reg: *const EaRegistry) -> usize {
    reg.as_ref().map_or(0, |r| r.inner.len())
}

/// Writes the JSON array of function specs visible at `url`, in registration
/// order.
///
/// # Safety
/// `reg` must be a live registry; `url` NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ea_registry_filter(
    reg: *const EaRegistry,
    url: *const c_char,
    out_json: *mut *mut c_char,
) -> EaStatus {
    guard(|| {
        let reg = handle(reg, "registry")?;
        let url = str_arg(url, "url")?;
        let visible = filter_for_url(&reg.inner, url);
        write_string(out_json, serde_json::to_string(&visible).expect("specs serialize"))
    })
}

/// Checks `args_json` (a JSON object) against the named function's schema.
///
/// # Safety
/// `reg` must be a live registry; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ea_registry_validate_call(
    reg: *const EaRegistry,
    name: *const c_char,
    args_json: *const c_char,
) -> EaStatus {
    guard(|| {
        let reg = handle(reg, "registry")?;
        let name = str_arg(name, "name")?;
        let args: Map<String, Value> = json_arg(str_arg(args_json, "args_json")?, "args_json")?;
        let spec = reg
            .inner
            .get(name)
            .ok_or_else(|| Failure::new(EaStatus::UnknownFunction, format!("unknown function `{name}`")))?;
        validate_call(spec, &args).map_err(|e| Failure::new(EaStatus::InvalidCall, e))
    })
}

/// Decodes and validates one wire frame. On success writes the message kind
/// to `out_kind` when it is not null. On failure the error message starts
/// with the protocol error code, e.g. `unknown_kind: ...`.
///
/// # Safety
/// `frame` must point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn ea_message_validate(frame: *const u8, len: usize, out_kind: *mut *mut c_char) -> EaStatus {
    guard(|| {
        if frame.is_null() {
            return Err(Failure::new(EaStatus::NullPointer, "frame is null"));
        }
        let bytes = std::slice::from_raw_parts(frame, len);
        let msg = decode_message(bytes).map_err(|e| Failure::new(EaStatus::InvalidMessage, format!("{}: {e}", e.code())))?;
        if out_kind.is_null() {
            Ok(())
        } else {
            write_string(out_kind, msg.kind().to_string())
        }
    })
}

/// Writes `{"is_pfas": bool, "evidence": [..]}` for a SMILES string.
///
/// # Safety
/// `smiles` must be NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ea_pfas_classify(smiles: *const c_char, out_json: *mut *mut c_char) -> EaStatus {
    guard(|| {
        let smiles = str_arg(smiles, "smiles")?;
        let v = pfas_classify(smiles).map_err(|e| Failure::new(EaStatus::InvalidInput, e))?;
        let json = serde_json::json!({"is_pfas": v.is_pfas, "evidence": v.evidence});
        write_string(out_json, json.to_string())
    })
}

/// Renders a snapshot (`{"url": .., "elements": [..]}`) as prompt text. When
/// `filter` is true, elements outside the default tag allowlist are dropped
/// first.
///
/// # Safety
/// `snapshot_json` must be NUL-terminated; `out_text` writable.
#[no_mangle]
pub unsafe extern "C" fn ea_observation_render(
    snapshot_json: *const c_char,
    filter: bool,
    out_text: *mut *mut c_char,
) -> EaStatus {
    guard(|| {
        let snapshot: AriaSnapshot = json_arg(str_arg(snapshot_json, "snapshot_json")?, "snapshot_json")?;
        for el in &snapshot.elements {
            el.check().map_err(|e| Failure::new(EaStatus::InvalidInput, e))?;
        }
        let snapshot = if filter {
            filter_by_tag(&snapshot, &TagAllowlist::default())
        } else {
            snapshot
        };
        write_string(out_text, render_observation(&snapshot))
    })
}

/// Starts a gateway from a TOML config file. `bind` overrides the configured
/// address when not null; port 0 picks a free port.
///
/// # Safety
/// Strings must be NUL-terminated; `out` writable. Must not be called from
/// inside an async runtime.
#[no_mangle]
pub unsafe extern "C" fn ea_server_start(
    config_path: *const c_char,
    bind: *const c_char,
    out: *mut *mut EaServer,
) -> EaStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(EaStatus::NullPointer, "output pointer is null"));
        }
        let mut config =
            ServerConfig::load(str_arg(config_path, "config_path")?).map_err(|e| Failure::new(EaStatus::Io, e))?;
        if !bind.is_null() {
            config.bind = str_arg(bind, "bind")?.to_owned();
        }
        let addr = config.bind.clone();
        let gateway = Gateway::from_config(config).map_err(|e| Failure::new(EaStatus::Io, e))?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(|e| Failure::new(EaStatus::Io, e))?;
        let server = runtime
            .block_on(gateway.spawn(&addr))
            .map_err(|e| Failure::new(EaStatus::Io, format!("binding {addr}: {e}")))?;
        *out = Box::into_raw(Box::new(EaServer {
            runtime,
            server: Some(server),
        }));
        Ok(())
    })
}

/// Bound TCP port, or 0 for a null handle.
///
/// # Safety
/// `srv` must be null or a live server.
#[no_mangle]
pub unsafe extern "C" fn ea_server_port(srv: *const EaServer) -> u16 {
    srv.as_ref().and_then(|s| s.server.as_ref()).map_or(0, |s| s.addr.port())
}

/// Writes the WebSocket URL clients connect to.
///
/// # Safety
/// `srv` must be a live server; `out_url` writable.
#[no_mangle]
pub unsafe extern "C" fn ea_server_ws_url(srv: *const EaServer, out_url: *mut *mut c_char) -> EaStatus {
    guard(|| {
        let srv = handle(srv, "server")?;
        let server = srv.server.as_ref().ok_or_else(|| Failure::new(EaStatus::InvalidInput, "server stopped"))?;
        write_string(out_url, server.ws_url())
    })
}

/// Stops the gateway and releases the handle. Null is ignored.
///
/// # Safety
/// `srv` must come from [`ea_server_start`] and not have been stopped.
#[no_mangle]
pub unsafe extern "C" fn ea_server_stop(srv: *mut EaServer) {
    if srv.is_null() {
        return;
    }
    let mut srv = Box::from_raw(srv);
    if let Some(server) = srv.server.take() {
        srv.runtime.block_on(server.stop());
    }
}
