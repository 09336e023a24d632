//! WebSocket gateway: session assignment, inbound dispatch, lazy-push
//! deduplication, action correlation and per-session run queues.
//!
//! Routes:
//!
//! - `GET {path}` (default `/agent`): WebSocket upgrade. `?session_id=<id>`
//!   resumes a detached session within the grace period.
//! - `GET /health`: `{"status": "ok", "sessions": n}`.
//! - `GET /debug/sessions`: session dumps, only when `debug` is set.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::{json, Map, Value};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};

use crate::config::ServerConfig;
use crate::llm::LlmProvider;
use crate::observation::filter_by_tag;
use crate::orchestrator::{AgentConfig, DispatchError, Orchestrator, UiBridge};
use crate::registry::build_registry;
use crate::session::{ChatTurn, Session, SessionView};
use crate::tools::ToolBus;
use crate::tracelog::EventLog;
use crate::wire::{
    decode_message, encode_text, peek_seq, ActionRequestPayload, ActionResultPayload, AgentName, AgentStatusPayload,
    ChatResponsePayload, Direction, ErrorPayload, HelloPayload, Payload, SeqGuard, WireError, WireMessage,
};

struct Pending {
    correlation_id: String,
    request: ActionRequestPayload,
    reply: oneshot::Sender<ActionResultPayload>,
}

/// Live state of one session, shared by its connection, its run worker and
/// the grace-period reaper.
pub struct SessionHandle {
    id: String,
    session: Mutex<Session>,
    last_digest: Mutex<Option<String>>,
    applies: AtomicU64,
    observations: watch::Sender<u64>,
    pending: Mutex<Option<Pending>>,
    outbound: Mutex<Option<mpsc::UnboundedSender<Payload>>>,
    connection: AtomicU64,
    queue: Mutex<Option<mpsc::Sender<String>>>,
    actions: AtomicU64,
    log: EventLog,
}

impl SessionHandle {
    fn new(session: Session, log: EventLog) -> Self {
        Self {
            id: session.id().to_owned(),
            session: Mutex::new(session),
            last_digest: Mutex::new(None),
            applies: AtomicU64::new(0),
            observations: watch::channel(0).0,
            pending: Mutex::new(None),
            outbound: Mutex::new(None),
            connection: AtomicU64::new(0),
            queue: Mutex::new(None),
            actions: AtomicU64::new(0),
            log,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Number of snapshots actually applied (duplicates excluded).
    pub fn apply_count(&self) -> u64 {
        self.applies.load(Ordering::SeqCst)
    }

    pub fn dump(&self) -> Value {
        let mut d = self.session.lock().expect("session lock poisoned").dump();
        d["apply_count"] = json!(self.apply_count());
        d["attached"] = json!(self.is_attached());
        d
    }

    fn is_attached(&self) -> bool {
        self.outbound.lock().expect("outbound lock poisoned").is_some()
    }

    /// Queues a frame on the current connection. Returns false when detached.
    fn send(&self, payload: Payload) -> bool {
        match &*self.outbound.lock().expect("outbound lock poisoned") {
            Some(tx) => tx.send(payload).is_ok(),
            None => false,
        }
    }

    fn send_error(&self, code: &str, detail: impl Into<String>, offending_seq: Option<u64>) {
        let detail = detail.into();
        self.log.record(json!({"event": "protocol_error", "session": self.id, "code": code,
            "detail": detail, "offending_seq": offending_seq}));
        self.send(Payload::Error(ErrorPayload {
            code: code.to_owned(),
            detail,
            offending_seq,
        }));
    }

    fn attach(&self, tx: mpsc::UnboundedSender<Payload>) -> u64 {
        *self.outbound.lock().expect("outbound lock poisoned") = Some(tx);
        self.connection.fetch_add(1, Ordering::SeqCst) + 1
    }

    /// Detaches connection `generation` if it is still the current one. Any
    /// pending action fails with `ConnectionClosed`.
    fn detach(&self, generation: u64) -> bool {
        let mut out = self.outbound.lock().expect("outbound lock poisoned");
        if self.connection.load(Ordering::SeqCst) != generation {
            return false;
        }
        *out = None;
        self.pending.lock().expect("pending lock poisoned").take();
        true
    }

    fn handle_inbound(&self, msg: WireMessage) {
        let seq = msg.seq;
        match msg.payload {
            Payload::Register(p) => match build_registry(p.skillset.clone(), p.page_map.clone()) {
                Ok(reg) => {
                    self.session.lock().expect("session lock poisoned").set_registry(reg);
                    self.log.record(json!({"event": "register", "session": self.id, "app_id": p.app_id,
                        "skillset": p.skillset, "page_map": p.page_map}));
                }
                Err(e) => self.send_error("bad_registry", e.to_string(), Some(seq)),
            },
            Payload::Observation(p) => self.on_observation(seq, p.into_snapshot(seq)),
            Payload::ChatRequest(p) => {
                self.log.record(json!({"event": "chat_request", "session": self.id, "text": p.text}));
                let queue = self.queue.lock().expect("queue lock poisoned").clone();
                match queue.map(|q| q.try_send(p.text)) {
                    Some(Ok(())) => {}
                    Some(Err(mpsc::error::TrySendError::Full(_))) => {
                        self.send_error("queue_full", "too many chat requests queued for this session", Some(seq))
                    }
                    _ => self.send_error("session_closed", "session is shutting down", Some(seq)),
                }
            }
            Payload::ActionResult(res) => {
                let mut pending = self.pending.lock().expect("pending lock poisoned");
                match pending.take() {
                    Some(p) if p.correlation_id == res.correlation_id => {
                        drop(pending);
                        self.log.record(json!({"event": "action_result", "session": self.id,
                            "correlation_id": res.correlation_id, "status": res.status, "detail": res.detail}));
                        let _ = self
                            .session
                            .lock()
                            .expect("session lock poisoned")
                            .record_action(p.request, res.clone());
                        let _ = p.reply.send(res);
                    }
                    other => {
                        *pending = other;
                        drop(pending);
                        self.send_error(
                            "unknown_correlation",
                            format!("no pending action with correlation_id `{}`", res.correlation_id),
                            Some(seq),
                        );
                    }
                }
            }
            _ => unreachable!("outbound kinds are rejected before dispatch"),
        }
    }

    fn on_observation(&self, seq: u64, snapshot: crate::observation::AriaSnapshot) {
        let mut session = self.session.lock().expect("session lock poisoned");
        let mut filtered = filter_by_tag(&snapshot, session.allowlist());
        let digest = filtered.digest();
        let mut last = self.last_digest.lock().expect("digest lock poisoned");
        let outcome = if last.as_deref() == Some(digest.as_str()) {
            self.log.record(json!({"event": "observation_duplicate", "session": self.id,
                "wire_seq": seq, "digest": digest}));
            Ok(())
        } else {
            filtered.captured_seq = self.applies.load(Ordering::SeqCst) + 1;
            match session.apply_observation(&filtered) {
                Ok(()) => {
                    self.applies.fetch_add(1, Ordering::SeqCst);
                    self.log.record(json!({"event": "observation_applied", "session": self.id,
                        "wire_seq": seq, "snapshot_seq": filtered.captured_seq, "digest": digest,
                        "snapshot": filtered}));
                    *last = Some(digest);
                    Ok(())
                }
                Err(e) => Err(e),
            }
        };
        drop(last);
        drop(session);
        match outcome {
            Ok(()) => {
                self.observations.send_modify(|n| *n += 1);
            }
            Err(e) => self.send_error("not_registered", e.to_string(), Some(seq)),
        }
    }
}

#[async_trait]
impl UiBridge for SessionHandle {
    fn view(&self) -> SessionView {
        self.session.lock().expect("session lock poisoned").view()
    }

    fn observations_received(&self) -> u64 {
        *self.observations.borrow()
    }

    async fn wait_for_observation(&self, seen: u64, timeout: Duration) -> bool {
        let mut rx = self.observations.subscribe();
        let reached = tokio::time::timeout(timeout, async { rx.wait_for(|n| *n > seen).await.is_ok() }).await;
        reached.unwrap_or(false)
    }

    async fn dispatch_action(
        &self,
        agent: AgentName,
        function_name: &str,
        args: &Map<String, Value>,
        snapshot_seq: u64,
        timeout: Duration,
    ) -> Result<ActionResultPayload, DispatchError> {
        let correlation_id = format!("a{}", self.actions.fetch_add(1, Ordering::SeqCst) + 1);
        let request = ActionRequestPayload {
            function_name: function_name.to_owned(),
            arguments: args.clone(),
            correlation_id: correlation_id.clone(),
        };
        let (tx, rx) = oneshot::channel();
        if !self.is_attached() {
            return Err(DispatchError::ConnectionClosed);
        }
        {
            let mut pending = self.pending.lock().expect("pending lock poisoned");
            if pending.is_some() {
                return Err(DispatchError::Busy);
            }
            *pending = Some(Pending {
                correlation_id: correlation_id.clone(),
                request: request.clone(),
                reply: tx,
            });
        }
        self.log.record(json!({"event": "action_dispatched", "session": self.id, "agent": agent,
            "function": function_name, "args": args, "correlation_id": correlation_id,
            "snapshot_seq": snapshot_seq}));
        if !self.send(Payload::ActionRequest(request)) {
            self.pending.lock().expect("pending lock poisoned").take();
            return Err(DispatchError::ConnectionClosed);
        }

        match tokio::time::timeout(timeout, rx).await {
            Ok(Ok(res)) => Ok(res),
            Ok(Err(_)) => Err(DispatchError::ConnectionClosed),
            Err(_) => {
                let mut pending = self.pending.lock().expect("pending lock poisoned");
                if pending.as_ref().is_some_and(|p| p.correlation_id == correlation_id) {
                    pending.take();
                }
                drop(pending);
                self.log.record(json!({"event": "action_timeout", "session": self.id,
                    "correlation_id": correlation_id}));
                Err(DispatchError::Timeout)
            }
        }
    }

    fn status(&self, status: AgentStatusPayload) {
        self.send(Payload::AgentStatus(status));
    }

    fn append_chat(&self, turn: ChatTurn) {
        let _ = self.session.lock().expect("session lock poisoned").append_chat(turn);
    }

    fn log(&self, event: Value) {
        self.log.record(event);
    }
}

struct GatewayState {
    config: ServerConfig,
    orchestrator: Arc<Orchestrator>,
    sessions: Mutex<HashMap<String, Arc<SessionHandle>>>,
    log: EventLog,
}

impl GatewayState {
    fn create_session(self: &Arc<Self>) -> Arc<SessionHandle> {
        let handle = Arc::new(SessionHandle::new(
            Session::new(self.config.session_config()),
            self.log.clone(),
        ));
        let (qtx, mut qrx) = mpsc::channel::<String>(self.config.queue_depth);
        *handle.queue.lock().expect("queue lock poisoned") = Some(qtx);
        self.sessions
            .lock()
            .expect("sessions lock poisoned")
            .insert(handle.id.clone(), handle.clone());

        let orchestrator = self.orchestrator.clone();
        let worker = Arc::downgrade(&handle);
        tokio::spawn(async move {
            while let Some(goal) = qrx.recv().await {
                let Some(handle) = worker.upgrade() else { break };
                let report = orchestrator.handle_goal(&*handle, &goal).await;
                for err in report.errors() {
                    handle.send(Payload::Error(ErrorPayload {
                        code: err.code().to_owned(),
                        detail: err.to_string(),
                        offending_seq: None,
                    }));
                }
                handle.log.record(json!({"event": "run_finished", "session": handle.id, "goal": goal,
                    "plan": report.plan, "errors": report.errors(), "reply": report.reply}));
                handle.send(Payload::ChatResponse(ChatResponsePayload { text: report.reply }));
            }
        });
        handle
    }

    fn discard(&self, id: &str) {
        let removed = self.sessions.lock().expect("sessions lock poisoned").remove(id);
        if let Some(handle) = removed {
            handle.queue.lock().expect("queue lock poisoned").take();
            self.orchestrator.provider().forget_session(id);
            self.log.record(json!({"event": "session_discarded", "session": id}));
        }
    }
}

/// The agent server. Cheap to clone; clones share all state.
#[derive(Clone)]
pub struct Gateway {
    state: Arc<GatewayState>,
}

#[derive(Debug, Deserialize)]
struct ConnectQuery {
    session_id: Option<String>,
}

impl Gateway {
    pub fn new(config: ServerConfig, provider: Arc<dyn LlmProvider>, tools: ToolBus, log: EventLog) -> Self {
        let orchestrator = Orchestrator::new(provider, Arc::new(tools), config.agent_config());
        Self {
            state: Arc::new(GatewayState {
                config,
                orchestrator: Arc::new(orchestrator),
                sessions: Mutex::new(HashMap::new()),
                log,
            }),
        }
    }

    /// Builds provider, tools and log from the config file contents.
    pub fn from_config(config: ServerConfig) -> Result<Self, crate::config::ConfigError> {
        let provider = config.build_provider()?;
        let tools = config.build_tools()?;
        let log = match &config.trace_log {
            Some(path) => EventLog::with_file(path).map_err(|source| crate::config::ConfigError::Io {
                path: path.clone(),
                source,
            })?,
            None => EventLog::in_memory(),
        };
        Ok(Self::new(config, provider, tools, log))
    }

    pub fn agent_config(&self) -> &AgentConfig {
        self.state.orchestrator.config()
    }

    pub fn log(&self) -> &EventLog {
        &self.state.log
    }

    pub fn session_count(&self) -> usize {
        self.state.sessions.lock().expect("sessions lock poisoned").len()
    }

    pub fn session(&self, id: &str) -> Option<Arc<SessionHandle>> {
        self.state.sessions.lock().expect("sessions lock poisoned").get(id).cloned()
    }

    pub fn dump_sessions(&self) -> Value {
        let sessions = self.state.sessions.lock().expect("sessions lock poisoned");
        let mut ids: Vec<&String> = sessions.keys().collect();
        ids.sort();
        Value::Array(ids.into_iter().map(|id| sessions[id].dump()).collect())
    }

    pub fn router(&self) -> Router {
        let mut router = Router::new()
            .route(&self.state.config.path, get(ws_upgrade))
            .route("/health", get(health));
        if self.state.config.debug {
            router = router.route("/debug/sessions", get(debug_sessions));
        }
        router.with_state(self.clone())
    }

    pub async fn serve(self, listener: TcpListener) -> std::io::Result<()> {
        axum::serve(listener, self.router()).await
    }

    /// Binds `addr` (port 0 picks a free port) and serves in the background.
    pub async fn spawn(self, addr: &str) -> std::io::Result<RunningServer> {
        let listener = TcpListener::bind(addr).await?;
        let local = listener.local_addr()?;
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let router = self.router();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = stop_rx.await;
                })
                .await;
        });
        Ok(RunningServer {
            addr: local,
            gateway: self,
            stop: Some(stop_tx),
            task,
        })
    }

    async fn on_socket(self, socket: WebSocket, requested: Option<String>) {
        let state = &self.state;
        let resumable = requested.and_then(|id| {
            let handle = self.session(&id)?;
            (!handle.is_attached()).then_some(handle)
        });
        let resumed = resumable.is_some();
        let handle = resumable.unwrap_or_else(|| state.create_session());
        let (tx, mut rx) = mpsc::unbounded_channel::<Payload>();
        let generation = handle.attach(tx);
        state.log.record(json!({"event": "connected", "session": handle.id, "resumed": resumed}));
        handle.send(Payload::Hello(HelloPayload {
            session_id: handle.id.clone(),
            resumed,
        }));

        let (mut sink, mut stream) = socket.split();
        let session_id = handle.id.clone();
        let writer = tokio::spawn(async move {
            let mut seq = 0u64;
            while let Some(payload) = rx.recv().await {
                seq += 1;
                let msg = WireMessage::new(session_id.clone(), seq, payload);
                let Ok(text) = encode_text(&msg) else { continue };
                if sink.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            let _ = sink.close().await;
        });

        let mut inbound = SeqGuard::new();
        while let Some(Ok(frame)) = stream.next().await {
            let bytes: Vec<u8> = match frame {
                Message::Text(t) => t.as_bytes().to_vec(),
                Message::Binary(b) => b.to_vec(),
                Message::Close(_) => break,
                _ => continue,
            };
            let msg = match decode_message(&bytes) {
                Ok(m) => m,
                Err(e) => {
                    handle.send_error(e.code(), e.to_string(), peek_seq(&bytes));
                    continue;
                }
            };
            if let Err(e @ WireError::SequenceRegression { .. }) = inbound.check(msg.seq) {
                handle.send_error(e.code(), e.to_string(), Some(msg.seq));
                continue;
            }
            if msg.kind().sender() != Direction::Inbound {
                handle.send_error("unexpected_kind", format!("clients may not send {}", msg.kind()), Some(msg.seq));
                continue;
            }
            if msg.session_id != handle.id {
                handle.send_error(
                    "session_mismatch",
                    format!("frame addressed to session `{}`", msg.session_id),
                    Some(msg.seq),
                );
                continue;
            }
            handle.handle_inbound(msg);
        }

        if handle.detach(generation) {
            state.log.record(json!({"event": "disconnected", "session": handle.id}));
            let grace = state.config.session_grace();
            let weak_state = Arc::downgrade(state);
            let weak = Arc::downgrade(&handle);
            tokio::spawn(async move {
                tokio::time::sleep(grace).await;
                let (Some(state), Some(handle)) = (weak_state.upgrade(), weak.upgrade()) else { return };
                if handle.connection.load(Ordering::SeqCst) == generation && !handle.is_attached() {
                    state.discard(&handle.id);
                }
            });
        }
        writer.abort();
    }
}

async fn ws_upgrade(
    State(gateway): State<Gateway>,
    Query(query): Query<ConnectQuery>,
    ws: WebSocketUpgrade,
) -> impl IntoResponse {
    ws.on_upgrade(move |socket| gateway.on_socket(socket, query.session_id))
}

async fn health(State(gateway): State<Gateway>) -> Json<Value> {
    Json(json!({"status": "ok", "sessions": gateway.session_count()}))
}

async fn debug_sessions(State(gateway): State<Gateway>) -> Json<Value> {
    Json(gateway.dump_sessions())
}

/// A gateway serving in the background.
pub struct RunningServer {
    pub addr: SocketAddr,
    gateway: Gateway,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl RunningServer {
    pub fn ws_url(&self) -> String {
        format!("ws://{}{}", self.addr, self.gateway.state.config.path)
    }

    pub fn http_url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn is_running(&self) -> bool {
        !self.task.is_finished()
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if tokio::time::timeout(Duration::from_secs(2), &mut self.task).await.is_err() {
            self.task.abort();
        }
    }
}
