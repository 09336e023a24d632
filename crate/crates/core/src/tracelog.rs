//! JSON-lines event log and the post-hoc grounding check over it.
//!
//! Every event is one JSON object with at least `event` and `session`. The
//! grounding check needs three of them:
//!
//! - `register`: `{skillset, page_map}` as received.
//! - `observation_applied`: `{snapshot_seq, snapshot}` with the tag-filtered
//!   snapshot the session now holds.
//! - `action_dispatched`: `{function, args, correlation_id, snapshot_seq}`
//!   where `snapshot_seq` names the snapshot the deciding step saw.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::observation::{extract_nav_links, AriaSnapshot};
use crate::registry::{build_registry, filter_for_url, synthesize_navigation_fn, validate_call, FunctionSpec, PageFunctionMap, Registry};

#[derive(Default)]
struct Inner {
    events: Mutex<Vec<Value>>,
    file: Option<Mutex<BufWriter<File>>>,
}

/// Shared append-only event log. Clones write to the same log.
#[derive(Clone, Default)]
pub struct EventLog {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog").field("events", &self.len()).finish()
    }
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Also appends every event as one line to `path`.
    pub fn with_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner: Arc::new(Inner {
                events: Mutex::new(Vec::new()),
                file: Some(Mutex::new(BufWriter::new(file))),
            }),
        })
    }

    pub fn record(&self, event: Value) {
        tracing::debug!(target: "embedagent::trace", "{event}");
        if let Some(file) = &self.inner.file {
            let mut w = file.lock().expect("log file lock poisoned");
            let _ = serde_json::to_writer(&mut *w, &event);
            let _ = w.write_all(b"\n");
            let _ = w.flush();
        }
        self.inner.events.lock().expect("log lock poisoned").push(event);
    }

    pub fn events(&self) -> Vec<Value> {
        self.inner.events.lock().expect("log lock poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.inner.events.lock().expect("log lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Events of one session, in log order.
    pub fn session_events(&self, session: &str) -> Vec<Value> {
        self.events()
            .into_iter()
            .filter(|e| e.get("session").and_then(Value::as_str) == Some(session))
            .collect()
    }
}

pub fn read_jsonl(path: impl AsRef<Path>) -> std::io::Result<Vec<Value>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroundingViolation {
    pub session: String,
    pub function: String,
    pub snapshot_seq: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GroundingReport {
    pub actions_checked: usize,
    pub violations: Vec<GroundingViolation>,
}

impl GroundingReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Default)]
struct Replay {
    registry: Option<Registry>,
    snapshots: HashMap<u64, AriaSnapshot>,
}

/// Recomputes the active set for each dispatched action from the logged
/// registry and the logged snapshot it names, and reports any action that was
/// not a member or whose arguments do not validate against it.
pub fn check_grounding(events: &[Value]) -> GroundingReport {
    let mut sessions: HashMap<String, Replay> = HashMap::new();
    let mut report = GroundingReport::default();

    for ev in events {
        let (Some(kind), Some(session)) = (
            ev.get("event").and_then(Value::as_str),
            ev.get("session").and_then(Value::as_str),
        ) else {
            continue;
        };
        let replay = sessions.entry(session.to_owned()).or_default();
        match kind {
            "register" => {
                let skillset: Vec<FunctionSpec> = ev
                    .get("skillset")
                    .and_then(|v| serde_json::from_value(v.clone()).ok())
                    .unwrap_or_default();
                let page_map: PageFunctionMap = ev
                    .get("page_map")
                    .and_then(|v| serde_json::from_value(v.clone()).ok())
                    .unwrap_or_default();
                replay.registry = build_registry(skillset, page_map).ok();
            }
            "observation_applied" => {
                let seq = ev.get("snapshot_seq").and_then(Value::as_u64).unwrap_or(0);
                if let Some(snap) = ev.get("snapshot").and_then(|v| serde_json::from_value(v.clone()).ok()) {
                    replay.snapshots.insert(seq, snap);
                }
            }
            "action_dispatched" => {
                report.actions_checked += 1;
                let function = ev.get("function").and_then(Value::as_str).unwrap_or("").to_owned();
                let seq = ev.get("snapshot_seq").and_then(Value::as_u64).unwrap_or(0);
                let args: Map<String, Value> = ev
                    .get("args")
                    .and_then(Value::as_object)
                    .cloned()
                    .unwrap_or_default();
                let violation = |reason: String| GroundingViolation {
                    session: session.to_owned(),
                    function: function.clone(),
                    snapshot_seq: seq,
                    reason,
                };
                let Some(registry) = &replay.registry else {
                    report.violations.push(violation("no registry logged before the action".into()));
                    continue;
                };
                let Some(snap) = replay.snapshots.get(&seq) else {
                    report.violations.push(violation(format!("snapshot {seq} was never applied")));
                    continue;
                };
                let mut active = filter_for_url(registry, &snap.url);
                active.push(synthesize_navigation_fn(&extract_nav_links(snap)));
                match active.iter().find(|f| f.name == function) {
                    None => report
                        .violations
                        .push(violation(format!("`{function}` is not active on {}", snap.url))),
                    Some(spec) => {
                        if let Err(e) = validate_call(spec, &args) {
                            report.violations.push(violation(format!("arguments rejected: {e}")));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    report
}
