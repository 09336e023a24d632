//! Frontend ↔ backend message envelope and codec.
//!
//! Every WebSocket text frame carries one JSON object:
//!
//! ```text
//! {"session_id": "...", "seq": 3, "kind": "chat_request", "correlation_id": "...", "payload": {...}}
//! ```
//!
//! `correlation_id` is omitted when absent. `seq` starts at 1 and strictly
//! increases per direction on a connection ([`SeqGuard`]). Unknown payload
//! fields are ignored; unknown kinds and missing required fields are errors.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::observation::{AriaElement, AriaSnapshot};
use crate::registry::{FunctionSpec, PageFunctionMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Hello,
    Register,
    Observation,
    ChatRequest,
    ActionRequest,
    ActionResult,
    ChatResponse,
    AgentStatus,
    Error,
}

impl Kind {
    pub const ALL: [Kind; 9] = [
        Kind::Hello,
        Kind::Register,
        Kind::Observation,
        Kind::ChatRequest,
        Kind::ActionRequest,
        Kind::ActionResult,
        Kind::ChatResponse,
        Kind::AgentStatus,
        Kind::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Hello => "hello",
            Kind::Register => "register",
            Kind::Observation => "observation",
            Kind::ChatRequest => "chat_request",
            Kind::ActionRequest => "action_request",
            Kind::ActionResult => "action_result",
            Kind::ChatResponse => "chat_response",
            Kind::AgentStatus => "agent_status",
            Kind::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Top-level payload fields that must be present for this kind.
    pub fn required_fields(self) -> &'static [&'static str] {
        match self {
            Kind::Hello => &["session_id", "resumed"],
            Kind::Register => &["app_id", "skillset", "page_map"],
            Kind::Observation => &["url", "elements"],
            Kind::ChatRequest => &["text"],
            Kind::ActionRequest => &["function_name", "arguments", "correlation_id"],
            Kind::ActionResult => &["correlation_id", "status"],
            Kind::ChatResponse => &["text"],
            Kind::AgentStatus => &["agent", "step", "state"],
            Kind::Error => &["code", "detail"],
        }
    }

    /// Which side sends this kind.
    pub fn sender(self) -> Direction {
        match self {
            Kind::Register | Kind::Observation | Kind::ChatRequest | Kind::ActionResult => Direction::Inbound,
            _ => Direction::Outbound,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inbound = frontend → backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Inbound,
    Outbound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloPayload {
    pub session_id: String,
    pub resumed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisterPayload {
    pub app_id: String,
    pub skillset: Vec<FunctionSpec>,
    pub page_map: PageFunctionMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationPayload {
    pub url: String,
    pub elements: Vec<AriaElement>,
}

impl ObservationPayload {
    pub fn into_snapshot(self, seq: u64) -> AriaSnapshot {
        AriaSnapshot {
            url: self.url,
            elements: self.elements,
            captured_seq: seq,
        }
    }
}

impl From<&AriaSnapshot> for ObservationPayload {
    fn from(s: &AriaSnapshot) -> Self {
        Self {
            url: s.url.clone(),
            elements: s.elements.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequestPayload {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRequestPayload {
    pub function_name: String,
    pub arguments: Map<String, Value>,
    pub correlation_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResultPayload {
    pub correlation_id: String,
    pub status: ActionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ActionResultPayload {
    pub fn ok(correlation_id: impl Into<String>) -> Self {
        Self {
            correlation_id: correlation_id.into(),
            status: ActionStatus::Ok,
            detail: None,
        }
    }

    pub fn failed(correlation_id: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            correlation_id: correlation_id.into(),
            status: ActionStatus::Failed,
            detail: Some(detail.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponsePayload {
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentName {
    Router,
    Web,
    Analysis,
    Chat,
}

impl fmt::Display for AgentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentName::Router => "router",
            AgentName::Web => "web",
            AgentName::Analysis => "analysis",
            AgentName::Chat => "chat",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusState {
    Started,
    Step,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStatusPayload {
    pub agent: AgentName,
    pub step: u32,
    pub state: StatusState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offending_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Hello(HelloPayload),
    Register(RegisterPayload),
    Observation(ObservationPayload),
    ChatRequest(ChatRequestPayload),
    ActionRequest(ActionRequestPayload),
    ActionResult(ActionResultPayload),
    ChatResponse(ChatResponsePayload),
    AgentStatus(AgentStatusPayload),
    Error(ErrorPayload),
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Hello(_) => Kind::Hello,
            Payload::Register(_) => Kind::Register,
            Payload::Observation(_) => Kind::Observation,
            Payload::ChatRequest(_) => Kind::ChatRequest,
            Payload::ActionRequest(_) => Kind::ActionRequest,
            Payload::ActionResult(_) => Kind::ActionResult,
            Payload::ChatResponse(_) => Kind::ChatResponse,
            Payload::AgentStatus(_) => Kind::AgentStatus,
            Payload::Error(_) => Kind::Error,
        }
    }

    fn to_value(&self) -> Value {
        let v = match self {
            Payload::Hello(p) => serde_json::to_value(p),
            Payload::Register(p) => serde_json::to_value(p),
            Payload::Observation(p) => serde_json::to_value(p),
            Payload::ChatRequest(p) => serde_json::to_value(p),
            Payload::ActionRequest(p) => serde_json::to_value(p),
            Payload::ActionResult(p) => serde_json::to_value(p),
            Payload::ChatResponse(p) => serde_json::to_value(p),
            Payload::AgentStatus(p) => serde_json::to_value(p),
            Payload::Error(p) => serde_json::to_value(p),
        };
        v.expect("payload types serialize infallibly")
    }

    fn from_value(kind: Kind, v: Value) -> Result<Payload, serde_json::Error> {
        Ok(match kind {
            Kind::Hello => Payload::Hello(serde_json::from_value(v)?),
            Kind::Register => Payload::Register(serde_json::from_value(v)?),
            Kind::Observation => Payload::Observation(serde_json::from_value(v)?),
            Kind::ChatRequest => Payload::ChatRequest(serde_json::from_value(v)?),
            Kind::ActionRequest => Payload::ActionRequest(serde_json::from_value(v)?),
            Kind::ActionResult => Payload::ActionResult(serde_json::from_value(v)?),
            Kind::ChatResponse => Payload::ChatResponse(serde_json::from_value(v)?),
            Kind::AgentStatus => Payload::AgentStatus(serde_json::from_value(v)?),
            Kind::Error => Payload::Error(serde_json::from_value(v)?),
        })
    }

    /// Correlation id carried inside the payload, for the kinds that have one.
    pub fn correlation_id(&self) -> Option<&str> {
        match self {
            Payload::ActionRequest(p) => Some(&p.correlation_id),
            Payload::ActionResult(p) => Some(&p.correlation_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub session_id: String,
    pub seq: u64,
    pub correlation_id: Option<String>,
    pub payload: Payload,
}

impl WireMessage {
    /// Builds a message, copying the payload's correlation id (if any) onto
    /// the envelope.
    pub fn new(session_id: impl Into<String>, seq: u64, payload: Payload) -> Self {
        Self {
            session_id: session_id.into(),
            seq,
            correlation_id: payload.correlation_id().map(str::to_owned),
            payload,
        }
    }

    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }

    /// Checks the per-kind invariants that the serde shape alone cannot
    /// express.
    pub fn validate(&self) -> Result<(), WireError> {
        let kind = self.kind();
        let violation = |reason: &str| WireError::SchemaViolation {
            kind: Some(kind),
            reason: reason.to_owned(),
        };
        if self.seq == 0 {
            return Err(violation("seq starts at 1"));
        }
        if let (Some(env), Some(inner)) = (&self.correlation_id, self.payload.correlation_id()) {
            if env != inner {
                return Err(violation("envelope correlation_id differs from payload correlation_id"));
            }
        }
        match &self.payload {
            Payload::Hello(p) if p.session_id.is_empty() => Err(violation("hello.session_id is empty")),
            Payload::Register(p) => {
                let mut names = std::collections::HashSet::new();
                for spec in &p.skillset {
                    if !names.insert(spec.name.as_str()) {
                        return Err(violation(&format!("duplicate function `{}` in skillset", spec.name)));
                    }
                }
                for (pattern, listed) in &p.page_map.entries {
                    if let Some(missing) = listed.iter().find(|n| !names.contains(n.as_str())) {
                        return Err(violation(&format!(
                            "page_map `{pattern}` lists `{missing}` which is not in the skillset"
                        )));
                    }
                }
                Ok(())
            }
            Payload::Observation(p) => {
                if p.url.is_empty() {
                    return Err(violation("observation.url is empty"));
                }
                for el in &p.elements {
                    el.check().map_err(|e| violation(&e))?;
                }
                Ok(())
            }
            Payload::ChatRequest(p) if p.text.trim().is_empty() => Err(violation("chat_request.text is empty")),
            Payload::ActionRequest(p) => {
                if p.function_name.is_empty() {
                    Err(violation("action_request.function_name is empty"))
                } else if p.correlation_id.is_empty() {
                    Err(violation("action_request.correlation_id is empty"))
                } else {
                    Ok(())
                }
            }
            Payload::ActionResult(p) => {
                if p.correlation_id.is_empty() {
                    Err(violation("action_result.correlation_id is empty"))
                } else if p.status == ActionStatus::Failed && p.detail.as_deref().unwrap_or("").is_empty() {
                    Err(violation("failed action_result needs a non-empty detail"))
                } else {
                    Ok(())
                }
            }
            Payload::Error(p) if p.code.is_empty() => Err(violation("error.code is empty")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown message kind `{0}`")]
    UnknownKind(String),
    #[error("schema violation{}: {reason}", kind.map(|k| format!(" in {k}")).unwrap_or_default())]
    SchemaViolation { kind: Option<Kind>, reason: String },
    #[error("sequence regression: got {got} after {last}")]
    SequenceRegression { last: u64, got: u64 },
}

impl WireError {
    /// Short machine-readable code used in error frames.
    pub fn code(&self) -> &'static str {
        match self {
            WireError::MalformedFrame(_) => "malformed_frame",
            WireError::UnknownKind(_) => "unknown_kind",
            WireError::SchemaViolation { .. } => "bad_payload",
            WireError::SequenceRegression { .. } => "sequence_regression",
        }
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    session_id: &'a str,
    seq: u64,
    kind: Kind,
    #[serde(skip_serializing_if = "Option::is_none")]
    correlation_id: Option<&'a str>,
    payload: Value,
}

pub fn encode_message(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    msg.validate()?;
    let env = EnvelopeOut {
        session_id: &msg.session_id,
        seq: msg.seq,
        kind: msg.kind(),
        correlation_id: msg.correlation_id.as_deref(),
        payload: msg.payload.to_value(),
    };
    Ok(serde_json::to_vec(&env).expect("envelope serializes infallibly"))
}

/// Text form of [`encode_message`], for WebSocket text frames.
pub fn encode_text(msg: &WireMessage) -> Result<String, WireError> {
    encode_message(msg).map(|b| String::from_utf8(b).expect("serde_json emits UTF-8"))
}

pub fn decode_message(frame: &[u8]) -> Result<WireMessage, WireError> {
    let text = std::str::from_utf8(frame).map_err(|e| WireError::MalformedFrame(e.to_string()))?;
    let value: Value = serde_json::from_str(text).map_err(|e| WireError::MalformedFrame(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(WireError::SchemaViolation {
            kind: None,
            reason: "frame is not a JSON object".into(),
        });
    };

    let kind = match obj.get("kind") {
        Some(Value::String(k)) => Kind::parse(k).ok_or_else(|| WireError::UnknownKind(k.clone()))?,
        _ => {
            return Err(WireError::SchemaViolation {
                kind: None,
                reason: "missing string field `kind`".into(),
            })
        }
    };
    let violation = |reason: String| WireError::SchemaViolation { kind: Some(kind), reason };

    let session_id = match obj.remove("session_id") {
        Some(Value::String(s)) => s,
        _ => return Err(violation("missing string field `session_id`".into())),
    };
    let seq = obj
        .get("seq")
        .and_then(Value::as_u64)
        .ok_or_else(|| violation("missing unsigned integer field `seq`".into()))?;
    let correlation_id = match obj.remove("correlation_id") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s),
        Some(_) => return Err(violation("`correlation_id` must be a string".into())),
    };
    let payload = match obj.remove("payload") {
        Some(v @ Value::Object(_)) => v,
        _ => return Err(violation("missing object field `payload`".into())),
    };
    let payload = Payload::from_value(kind, payload).map_err(|e| violation(e.to_string()))?;

    let msg = WireMessage {
        session_id,
        seq,
        correlation_id,
        payload,
    };
    msg.validate()?;
    Ok(msg)
}

/// Best-effort `seq` extraction from a frame that failed to decode, so error
/// frames can point at the offending message.
pub fn peek_seq(frame: &[u8]) -> Option<u64> {
    serde_json::from_slice::<Value>(frame).ok()?.get("seq")?.as_u64()
}

/// Tracks the last sequence number seen in one direction.
#[derive(Debug, Clone, Default)]
pub struct SeqGuard {
    last: u64,
}

impl SeqGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last(&self) -> u64 {
        self.last
    }

    pub fn check(&mut self, seq: u64) -> Result<(), WireError> {
        if seq <= self.last {
            return Err(WireError::SequenceRegression { last: self.last, got: seq });
        }
        self.last = seq;
        Ok(())
    }
}

/// Hands out sequence numbers for one sending direction, starting at 1.
#[derive(Debug, Default)]
pub struct SeqCounter(std::sync::atomic::AtomicU64);

impl SeqCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next(&self) -> u64 {
        self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1
    }
}

/// One representative message per kind, modeled on the chemistry demo. These
/// back the golden frames under `testdata/frames/` and the protocol reference.
pub fn sample_messages() -> Vec<WireMessage> {
    use crate::registry::{Granularity, ParamKind, ParamSpec};

    let sid = "3f2a9c1e5b7d4e8f9a0b1c2d3e4f5a6b";
    let type_fn = FunctionSpec {
        name: "type".into(),
        description: "Enter text into a labeled input field".into(),
        params: vec![
            ParamSpec::required("textField", ParamKind::String, "element id of the field"),
            ParamSpec::required("value", ParamKind::String, "text to enter"),
        ],
        pages: vec!["/search".into()],
        granularity: Granularity::Primitive,
    };
    let click_fn = FunctionSpec {
        name: "click".into(),
        description: "Press a labeled button".into(),
        params: vec![ParamSpec::required("target", ParamKind::String, "element id of the button")],
        pages: vec!["/search".into()],
        granularity: Granularity::Primitive,
    };
    let mut args = Map::new();
    args.insert("target".into(), Value::String("analyze".into()));

    vec![
        WireMessage::new(
            sid,
            1,
            Payload::Hello(HelloPayload {
                session_id: sid.into(),
                resumed: false,
            }),
        ),
        WireMessage::new(
            sid,
            1,
            Payload::Register(RegisterPayload {
                app_id: "chem-demo".into(),
                skillset: vec![type_fn, click_fn],
                page_map: PageFunctionMap::new().with("/search", &["type", "click"]),
            }),
        ),
        WireMessage::new(
            sid,
            2,
            Payload::Observation(ObservationPayload {
                url: "/search".into(),
                elements: vec![
                    AriaElement::new("input", "SMILES search box").with_id("smiles-input"),
                    AriaElement::new("button", "Analyze").with_id("analyze"),
                    AriaElement::link("Reports", "/reports"),
                ],
            }),
        ),
        WireMessage::new(
            sid,
            3,
            Payload::ChatRequest(ChatRequestPayload {
                text: "Check if this SMILES is a PFAS and generate a short report.".into(),
            }),
        ),
        WireMessage::new(
            sid,
            4,
            Payload::ActionRequest(ActionRequestPayload {
                function_name: "click".into(),
                arguments: args,
                correlation_id: "act-1".into(),
            }),
        ),
        WireMessage::new(sid, 4, Payload::ActionResult(ActionResultPayload::ok("act-1"))),
        WireMessage::new(
            sid,
            9,
            Payload::ChatResponse(ChatResponsePayload {
                text: "FC(F)(F)C(F)(F)C(=O)O is a PFAS: CF3 group at token 0; CF2 group at token 1.".into(),
            }),
        ),
        WireMessage::new(
            sid,
            5,
            Payload::AgentStatus(AgentStatusPayload {
                agent: AgentName::Web,
                step: 2,
                state: StatusState::Step,
                action: Some("click".into()),
                detail: None,
            }),
        ),
        WireMessage::new(
            sid,
            6,
            Payload::Error(ErrorPayload {
                code: "bad_payload".into(),
                detail: String::new(),
                offending_seq: Some(7),
            }),
        ),
    ]
}

/// Markdown protocol reference generated from the kind table and
/// [`sample_messages`].
pub fn reference_markdown() -> String {
    let mut out = String::from(
        "# Wire protocol reference\n\n\
         <!-- generated by `embedagent protocol-doc`; do not edit by hand -->\n\n\
         Each WebSocket text frame carries exactly one JSON object (UTF-8):\n\n\
         | field | type | notes |\n|---|---|---|\n\
         | `session_id` | string | assigned by the backend in `hello` |\n\
         | `seq` | integer ≥ 1 | strictly increasing per direction per connection |\n\
         | `kind` | string | one of the kinds below; unknown kinds are rejected |\n\
         | `correlation_id` | string, optional | mirrors the payload id on action kinds |\n\
         | `payload` | object | kind-specific; unknown fields are ignored |\n\n\
         Decode errors are reported back as `error` frames with codes \
         `malformed_frame`, `unknown_kind`, `bad_payload` or `sequence_regression`.\n\n\
         ## Kinds\n\n",
    );
    let samples = sample_messages();
    for kind in Kind::ALL {
        let sender = match kind.sender() {
            Direction::Inbound => "frontend → backend",
            Direction::Outbound => "backend → frontend",
        };
        out.push_str(&format!("### `{kind}`\n\nSent {sender}. Required payload fields: "));
        let fields: Vec<String> = kind.required_fields().iter().map(|f| format!("`{f}`")).collect();
        out.push_str(&fields.join(", "));
        out.push_str(".\n\n");
        if let Some(sample) = samples.iter().find(|m| m.kind() == kind) {
            let value: Value = serde_json::from_slice(&encode_message(sample).expect("samples are valid"))
                .expect("encoded frame parses");
            out.push_str("```json\n");
            out.push_str(&serde_json::to_string_pretty(&value).expect("value serializes"));
            out.push_str("\n```\n\n");
        }
    }
    out
}
