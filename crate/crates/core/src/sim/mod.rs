//! Headless frontend emulator and scenario runner.
//!
//! A run connects to the gateway like the browser shim would: it reads
//! `hello`, sends `register` and the initial observation, then drives the
//! scenario steps. Every `action_request` must be claimed by the next
//! `expect_action` step; its effect is applied to the virtual app, the result
//! is sent back, and a new observation is pushed iff the state changed.

pub mod app;
pub mod scenario;

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use futures::{SinkExt, StreamExt};
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

use crate::wire::{
    decode_message, encode_text, ActionResultPayload, AgentName, ChatRequestPayload, ObservationPayload, Payload,
    RegisterPayload, SeqGuard, StatusState, WireMessage,
};
use app::{VirtualApp, VirtualState};
use scenario::{Reply, Scenario, Step};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Pass,
    Fail,
    Skipped,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub index: usize,
    pub kind: &'static str,
    pub status: StepStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SimError {
    #[error("step {step}: expected {expected}, got {got}")]
    StepMismatch { step: usize, expected: String, got: String },
    #[error("step {step}: no {expected} within {waited_ms} ms")]
    Timeout { step: usize, expected: String, waited_ms: u64 },
    #[error("protocol error: {detail}")]
    ProtocolError { detail: String },
    #[error("cannot connect: {detail}")]
    Connect { detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservedAction {
    pub function_name: String,
    pub arguments: Map<String, Value>,
    pub correlation_id: String,
}

/// Result of one scenario. Apart from the `elapsed_ms` fields it is a pure
/// function of the scenario and the server's behavior.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub passed: bool,
    pub steps: Vec<StepReport>,
    pub actions: Vec<ObservedAction>,
    pub tool_calls: Vec<String>,
    pub chats: Vec<String>,
    pub errors: Vec<String>,
    pub observations_pushed: u32,
    pub final_state: Option<VirtualState>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<SimError>,
    pub elapsed_ms: u64,
}

impl ScenarioReport {
    /// Copy with every timing zeroed, for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.elapsed_ms = 0;
        for s in &mut r.steps {
            s.elapsed_ms = 0;
        }
        r
    }

    /// Everything the scenario saw from the server, as one searchable text.
    pub fn observed_text(&self) -> String {
        let mut out = serde_json::to_string(&self.actions).unwrap_or_default();
        for c in &self.chats {
            out.push('\n');
            out.push_str(c);
        }
        out
    }
}

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

struct Conn {
    ws: Ws,
    session_id: String,
    out_seq: u64,
    inbound: SeqGuard,
}

impl Conn {
    async fn connect(url: &str, deadline: Instant) -> Result<Self, SimError> {
        let connect = tokio_tungstenite::connect_async(url);
        let (ws, _) = tokio::time::timeout_at(deadline.into(), connect)
            .await
            .map_err(|_| SimError::Connect {
                detail: format!("timed out connecting to {url}"),
            })?
            .map_err(|e| SimError::Connect { detail: e.to_string() })?;
        let mut conn = Self {
            ws,
            session_id: String::new(),
            out_seq: 0,
            inbound: SeqGuard::new(),
        };
        match conn.recv(deadline).await? {
            Some(WireMessage {
                payload: Payload::Hello(h), ..
            }) => conn.session_id = h.session_id,
            Some(other) => {
                return Err(SimError::ProtocolError {
                    detail: format!("expected hello, got {}", other.kind()),
                })
            }
            None => {
                return Err(SimError::ProtocolError {
                    detail: "no hello before the deadline".into(),
                })
            }
        }
        Ok(conn)
    }

    async fn send(&mut self, payload: Payload) -> Result<(), SimError> {
        self.out_seq += 1;
        let msg = WireMessage::new(self.session_id.clone(), self.out_seq, payload);
        let text = encode_text(&msg).map_err(|e| SimError::ProtocolError { detail: e.to_string() })?;
        self.ws
            .send(Message::Text(text.into()))
            .await
            .map_err(|e| SimError::ProtocolError { detail: e.to_string() })
    }

    /// Next decoded frame, or `None` at the deadline.
    async fn recv(&mut self, deadline: Instant) -> Result<Option<WireMessage>, SimError> {
        loop {
            let frame = match tokio::time::timeout_at(deadline.into(), self.ws.next()).await {
                Err(_) => return Ok(None),
                Ok(None) => {
                    return Err(SimError::ProtocolError {
                        detail: "server closed the connection".into(),
                    })
                }
                Ok(Some(Err(e))) => return Err(SimError::ProtocolError { detail: e.to_string() }),
                Ok(Some(Ok(f))) => f,
            };
            let bytes = match frame {
                Message::Text(t) => t.as_bytes().to_vec(),
                Message::Binary(b) => b.to_vec(),
                Message::Close(_) => {
                    return Err(SimError::ProtocolError {
                        detail: "server closed the connection".into(),
                    })
                }
                _ => continue,
            };
            let msg = decode_message(&bytes).map_err(|e| SimError::ProtocolError { detail: e.to_string() })?;
            self.inbound
                .check(msg.seq)
                .map_err(|e| SimError::ProtocolError { detail: e.to_string() })?;
            return Ok(Some(msg));
        }
    }
}

struct Runner {
    conn: Conn,
    app: VirtualApp,
    buffer: VecDeque<WireMessage>,
    tools_seen: VecDeque<String>,
    report: ScenarioReport,
    step_timeout: Duration,
}

fn describe(msg: &WireMessage) -> String {
    match &msg.payload {
        Payload::ActionRequest(r) => format!(
            "action {}({})",
            r.function_name,
            serde_json::to_string(&r.arguments).unwrap_or_default()
        ),
        Payload::ChatResponse(c) => format!("chat_response {:?}", c.text),
        Payload::Error(e) => format!("error {} ({})", e.code, e.detail),
        _ => msg.kind().to_string(),
    }
}

impl Runner {
    async fn push_observation(&mut self) -> Result<(), SimError> {
        self.report.observations_pushed += 1;
        let obs = ObservationPayload::from(&self.app.snapshot());
        self.conn.send(Payload::Observation(obs)).await
    }

    /// Reads one frame, consuming status frames. Returns `None` for status
    /// frames so callers can re-check their condition.
    async fn read_one(&mut self, step: usize, expected: &str, deadline: Instant) -> Result<Option<WireMessage>, SimError> {
        let Some(msg) = self.conn.recv(deadline).await? else {
            return Err(SimError::Timeout {
                step,
                expected: expected.to_owned(),
                waited_ms: self.step_timeout.as_millis() as u64,
            });
        };
        match &msg.payload {
            Payload::AgentStatus(s) => {
                if s.agent == AgentName::Analysis && s.state == StatusState::Step {
                    if let Some(tool) = &s.action {
                        self.tools_seen.push_back(tool.clone());
                        self.report.tool_calls.push(tool.clone());
                    }
                }
                Ok(None)
            }
            Payload::Error(e) => {
                self.report.errors.push(e.code.clone());
                Ok(Some(msg))
            }
            Payload::ActionRequest(_) | Payload::ChatResponse(_) => Ok(Some(msg)),
            _ => Err(SimError::ProtocolError {
                detail: format!("unexpected {} frame", msg.kind()),
            }),
        }
    }

    async fn next_significant(&mut self, step: usize, expected: &str, deadline: Instant) -> Result<WireMessage, SimError> {
        if let Some(m) = self.buffer.pop_front() {
            return Ok(m);
        }
        loop {
            if let Some(m) = self.read_one(step, expected, deadline).await? {
                return Ok(m);
            }
        }
    }

    async fn run_step(&mut self, step: usize, s: &Step) -> Result<StepStatus, SimError> {
        let deadline = Instant::now() + self.step_timeout;
        let mismatch = |expected: String, got: String| SimError::StepMismatch { step, expected, got };
        match s {
            Step::SendChat(text) => {
                self.conn
                    .send(Payload::ChatRequest(ChatRequestPayload { text: text.clone() }))
                    .await?;
            }
            Step::ExpectAction(e) => {
                let expected = match &e.args {
                    Some(a) => format!("action {}({})", e.name, serde_json::to_string(a).unwrap_or_default()),
                    None => format!("action {}", e.name),
                };
                let msg = self.next_significant(step, &expected, deadline).await?;
                let Payload::ActionRequest(req) = msg.payload.clone() else {
                    return Err(mismatch(expected, describe(&msg)));
                };
                self.report.actions.push(ObservedAction {
                    function_name: req.function_name.clone(),
                    arguments: req.arguments.clone(),
                    correlation_id: req.correlation_id.clone(),
                });
                let args_ok = e.args.as_ref().is_none_or(|a| *a == req.arguments);
                if req.function_name != e.name || !args_ok {
                    return Err(mismatch(expected, describe(&msg)));
                }
                match &e.reply {
                    Reply::Withhold => {}
                    Reply::Failed(detail) => {
                        let res = ActionResultPayload::failed(req.correlation_id, detail.clone());
                        self.conn.send(Payload::ActionResult(res)).await?;
                    }
                    Reply::Auto => {
                        let outcome = self.app.apply(&req.function_name, &req.arguments);
                        let res = match outcome.result {
                            Ok(()) => ActionResultPayload::ok(req.correlation_id),
                            Err(d) => ActionResultPayload::failed(req.correlation_id, d),
                        };
                        self.conn.send(Payload::ActionResult(res)).await?;
                        if outcome.changed {
                            self.push_observation().await?;
                        }
                    }
                }
            }
            Step::ExpectTool(t) => {
                let expected = format!("tool call {}", t.name);
                loop {
                    if let Some(front) = self.tools_seen.pop_front() {
                        if front == t.name {
                            break;
                        }
                        return Err(mismatch(expected, format!("tool call {front}")));
                    }
                    if let Some(m) = self.read_one(step, &expected, deadline).await? {
                        let got = describe(&m);
                        match m.payload {
                            Payload::Error(_) => self.buffer.push_back(m),
                            Payload::ChatResponse(_) => {
                                self.buffer.push_back(m);
                                return Err(mismatch(expected, got));
                            }
                            _ => return Err(mismatch(expected, got)),
                        }
                    }
                }
            }
            Step::ExpectError(e) => {
                let expected = format!("error {}", e.code);
                let msg = self.next_significant(step, &expected, deadline).await?;
                match &msg.payload {
                    Payload::Error(p) if p.code == e.code => {}
                    Payload::ChatResponse(_) => {
                        let got = describe(&msg);
                        self.buffer.push_front(msg);
                        return Err(mismatch(expected, got));
                    }
                    _ => return Err(mismatch(expected, describe(&msg))),
                }
            }
            Step::ExpectChat(m) => {
                let expected = format!("chat_response {}", serde_json::to_string(m).unwrap_or_default());
                loop {
                    let msg = self.next_significant(step, &expected, deadline).await?;
                    match &msg.payload {
                        // agent failures precede the reply; they are recorded in `errors`
                        Payload::Error(_) => continue,
                        Payload::ChatResponse(c) => {
                            self.report.chats.push(c.text.clone());
                            m.check(&c.text).map_err(|why| mismatch(expected.clone(), why))?;
                            break;
                        }
                        _ => return Err(mismatch(expected, describe(&msg))),
                    }
                }
            }
            Step::ExpectState(want) => {
                let state = self.app.state();
                if let Some(url) = &want.url {
                    if &state.current_url != url {
                        return Err(mismatch(format!("url {url}"), format!("url {}", state.current_url)));
                    }
                }
                for (id, value) in &want.fields {
                    let got = state.fields.get(id);
                    if got != Some(value) {
                        return Err(mismatch(format!("field {id}={value:?}"), format!("field {id}={got:?}")));
                    }
                }
                for flag in &want.flags {
                    if !state.flags.contains(flag) {
                        return Err(mismatch(format!("flag {flag}"), "flag unset".into()));
                    }
                }
            }
            Step::Semantic(_) => return Ok(StepStatus::Skipped),
        }
        Ok(StepStatus::Pass)
    }
}

/// Runs one scenario against a gateway WebSocket endpoint. Failures are
/// reported in the returned report, never swallowed.
pub async fn run_scenario(endpoint: &str, scenario: &Scenario) -> ScenarioReport {
    let start = Instant::now();
    let step_timeout = Duration::from_millis(scenario.step_timeout_ms);
    let mut report = ScenarioReport {
        name: scenario.name.clone(),
        passed: false,
        steps: Vec::new(),
        actions: Vec::new(),
        tool_calls: Vec::new(),
        chats: Vec::new(),
        errors: Vec::new(),
        observations_pushed: 0,
        final_state: None,
        failure: None,
        elapsed_ms: 0,
    };
    let not_run = |from: usize| {
        scenario.steps[from..]
            .iter()
            .enumerate()
            .map(move |(i, s)| StepReport {
                index: from + i,
                kind: s.kind(),
                status: StepStatus::NotRun,
                detail: None,
                elapsed_ms: 0,
            })
    };

    let conn = match Conn::connect(endpoint, start + step_timeout).await {
        Ok(c) => c,
        Err(e) => {
            report.steps.extend(not_run(0));
            report.failure = Some(e);
            report.elapsed_ms = start.elapsed().as_millis() as u64;
            return report;
        }
    };
    let app = VirtualApp::new(scenario.app.clone());
    let mut runner = Runner {
        conn,
        app,
        buffer: VecDeque::new(),
        tools_seen: VecDeque::new(),
        report,
        step_timeout,
    };

    let setup = async {
        let def = runner.app.def().clone();
        runner
            .conn
            .send(Payload::Register(RegisterPayload {
                app_id: def.app_id.clone(),
                skillset: def.skillset(),
                page_map: def.page_map.clone(),
            }))
            .await?;
        runner.push_observation().await
    };
    let mut failure = setup.await.err();

    for (i, step) in scenario.steps.iter().enumerate() {
        if failure.is_some() {
            runner.report.steps.extend(not_run(i));
            break;
        }
        let t = Instant::now();
        let outcome = runner.run_step(i, step).await;
        let (status, detail) = match outcome {
            Ok(status) => (status, None),
            Err(e) => {
                let d = e.to_string();
                failure = Some(e);
                (StepStatus::Fail, Some(d))
            }
        };
        runner.report.steps.push(StepReport {
            index: i,
            kind: step.kind(),
            status,
            detail,
            elapsed_ms: t.elapsed().as_millis() as u64,
        });
    }

    let _ = runner.conn.ws.close(None).await;
    let mut report = runner.report;
    report.final_state = Some(runner.app.state().clone());
    report.passed = failure.is_none();
    report.failure = failure;
    report.elapsed_ms = start.elapsed().as_millis() as u64;
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Contamination {
    pub scenario: String,
    pub foreign_marker: String,
    pub owner: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchReport {
    pub passed: bool,
    pub reports: Vec<ScenarioReport>,
    pub contamination: Vec<Contamination>,
    pub elapsed_ms: u64,
}

impl BatchReport {
    pub fn failures(&self) -> Vec<&ScenarioReport> {
        self.reports.iter().filter(|r| !r.passed).collect()
    }
}

/// Finds scenarios whose observed actions or chats contain another
/// scenario's input markers. Markers that are substrings of the observer's
/// own markers are ambiguous and ignored.
pub fn cross_contamination(scenarios: &[Scenario], reports: &[ScenarioReport]) -> Vec<Contamination> {
    let mut found = Vec::new();
    for (i, (si, ri)) in scenarios.iter().zip(reports).enumerate() {
        let text = ri.observed_text();
        let own = si.markers();
        for (j, sj) in scenarios.iter().enumerate() {
            if i == j {
                continue;
            }
            for marker in sj.markers() {
                if own.iter().any(|o| o.contains(marker)) {
                    continue;
                }
                let needle = serde_json::to_string(marker).unwrap_or_default();
                let needle = needle.trim_matches('"');
                if text.contains(marker) || text.contains(needle) {
                    found.push(Contamination {
                        scenario: si.name.clone(),
                        foreign_marker: marker.to_owned(),
                        owner: sj.name.clone(),
                    });
                }
            }
        }
    }
    found
}

/// Runs scenarios on separate connections, at most `parallelism` at a time,
/// and checks that none observed another's inputs.
pub async fn run_concurrent(endpoint: &str, scenarios: &[Scenario], parallelism: usize) -> BatchReport {
    let start = Instant::now();
    let reports: Vec<ScenarioReport> = futures::stream::iter(scenarios.iter())
        .map(|s| run_scenario(endpoint, s))
        .buffered(parallelism.max(1))
        .collect()
        .await;
    let contamination = cross_contamination(scenarios, &reports);
    BatchReport {
        passed: reports.iter().all(|r| r.passed) && contamination.is_empty(),
        reports,
        contamination,
        elapsed_ms: start.elapsed().as_millis() as u64,
    }
}
