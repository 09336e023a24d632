//! Per-session grounding state.
//!
//! A [`Session`] is a plain value; the gateway serializes all mutations of one
//! session behind its own lock and hands agents [`SessionView`] copies.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observation::{extract_nav_links, filter_by_tag, AriaSnapshot, TagAllowlist};
use crate::registry::{filter_for_url, synthesize_navigation_fn, FunctionSpec, Registry};
use crate::wire::{ActionRequestPayload, ActionResultPayload};

pub const DEFAULT_HISTORY_LIMIT: usize = 10;

/// Milliseconds since the Unix epoch.
pub type Timestamp = u64;

pub fn now_millis() -> Timestamp {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// 128-bit random session token, hex encoded.
pub fn new_session_id() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub text: String,
    pub timestamp: Timestamp,
}

impl ChatTurn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            text: text.into(),
            timestamp: now_millis(),
        }
    }

    pub fn agent(text: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Agent,
            text: text.into(),
            timestamp: now_millis(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub request: ActionRequestPayload,
    pub result: ActionResultPayload,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("observation received before register")]
    NoRegistry,
    #[error("chat turn text is empty")]
    EmptyTurn,
    #[error("result correlation id `{result}` does not match request `{request}`")]
    CorrelationMismatch { request: String, result: String },
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub history_limit: usize,
    pub allowlist: TagAllowlist,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            history_limit: DEFAULT_HISTORY_LIMIT,
            allowlist: TagAllowlist::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    config: SessionConfig,
    current_url: String,
    latest_snapshot: Option<AriaSnapshot>,
    active_functions: Vec<FunctionSpec>,
    chat_history: VecDeque<ChatTurn>,
    action_log: Vec<ActionRecord>,
    registry: Option<Arc<Registry>>,
}

pub fn create_session() -> Session {
    Session::new(SessionConfig::default())
}

impl Session {
    pub fn new(config: SessionConfig) -> Self {
        Self::with_id(new_session_id(), config)
    }

    pub fn with_id(id: impl Into<String>, config: SessionConfig) -> Self {
        Self {
            id: id.into(),
            config,
            current_url: String::new(),
            latest_snapshot: None,
            active_functions: Vec::new(),
            chat_history: VecDeque::new(),
            action_log: Vec::new(),
            registry: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn current_url(&self) -> &str {
        &self.current_url
    }

    pub fn latest_snapshot(&self) -> Option<&AriaSnapshot> {
        self.latest_snapshot.as_ref()
    }

    pub fn active_functions(&self) -> &[FunctionSpec] {
        &self.active_functions
    }

    pub fn chat_history(&self) -> impl ExactSizeIterator<Item = &ChatTurn> {
        self.chat_history.iter()
    }

    pub fn action_log(&self) -> &[ActionRecord] {
        &self.action_log
    }

    pub fn registry(&self) -> Option<&Arc<Registry>> {
        self.registry.as_ref()
    }

    pub fn allowlist(&self) -> &TagAllowlist {
        &self.config.allowlist
    }

    /// Installs a new registry. Any snapshot already applied is re-scoped
    /// against it.
    pub fn set_registry(&mut self, registry: Registry) {
        self.registry = Some(Arc::new(registry));
        self.refresh_active();
    }

    pub fn apply_observation(&mut self, snapshot: &AriaSnapshot) -> Result<(), SessionError> {
        if self.registry.is_none() {
            return Err(SessionError::NoRegistry);
        }
        let filtered = filter_by_tag(snapshot, &self.config.allowlist);
        self.current_url = filtered.url.clone();
        self.latest_snapshot = Some(filtered);
        self.refresh_active();
        Ok(())
    }

    fn refresh_active(&mut self) {
        let (Some(reg), Some(snap)) = (&self.registry, &self.latest_snapshot) else {
            return;
        };
        let mut active = filter_for_url(reg, &self.current_url);
        active.push(synthesize_navigation_fn(&extract_nav_links(snap)));
        self.active_functions = active;
    }

    pub fn append_chat(&mut self, turn: ChatTurn) -> Result<(), SessionError> {
        if turn.text.trim().is_empty() {
            return Err(SessionError::EmptyTurn);
        }
        self.chat_history.push_back(turn);
        while self.chat_history.len() > self.config.history_limit {
            self.chat_history.pop_front();
        }
        Ok(())
    }

    pub fn record_action(&mut self, req: ActionRequestPayload, res: ActionResultPayload) -> Result<(), SessionError> {
        if req.correlation_id != res.correlation_id {
            return Err(SessionError::CorrelationMismatch {
                request: req.correlation_id,
                result: res.correlation_id,
            });
        }
        self.action_log.push(ActionRecord {
            request: req,
            result: res,
            timestamp: now_millis(),
        });
        Ok(())
    }

    /// Immutable copy handed to agents.
    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id.clone(),
            current_url: self.current_url.clone(),
            snapshot: self.latest_snapshot.clone(),
            active_functions: self.active_functions.clone(),
            chat_history: self.chat_history.iter().cloned().collect(),
            action_count: self.action_log.len(),
        }
    }

    /// JSON dump used by the debug endpoint and test assertions.
    pub fn dump(&self) -> serde_json::Value {
        serde_json::json!({
            "id": self.id,
            "current_url": self.current_url,
            "latest_snapshot": self.latest_snapshot,
            "active_functions": self.active_functions.iter().map(|f| &f.name).collect::<Vec<_>>(),
            "chat_history": self.chat_history,
            "action_log": self.action_log,
            "registered": self.registry.is_some(),
        })
    }
}

/// Read-only snapshot of a session at one point in time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionView {
    pub id: String,
    pub current_url: String,
    pub snapshot: Option<AriaSnapshot>,
    pub active_functions: Vec<FunctionSpec>,
    pub chat_history: Vec<ChatTurn>,
    pub action_count: usize,
}

impl SessionView {
    pub fn active(&self, name: &str) -> Option<&FunctionSpec> {
        self.active_functions.iter().find(|f| f.name == name)
    }

    pub fn snapshot_seq(&self) -> u64 {
        self.snapshot.as_ref().map_or(0, |s| s.captured_seq)
    }
}
