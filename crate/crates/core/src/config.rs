//! Server configuration file (TOML).
//!
//! ```toml
//! bind = "127.0.0.1:8765"
//! path = "/agent"
//! action_timeout_ms = 10000
//! session_grace_ms = 60000
//! history_limit = 10
//! queue_depth = 4
//! max_steps = 8
//! max_invalid = 2
//! observation_settle_ms = 100
//! allowlist = ["button", "a", "input"]
//! trace_log = "trace.jsonl"
//! debug = false
//!
//! [provider]
//! kind = "scripted"
//! script = "testdata/scripts/pfas-demo.json"
//!
//! # or
//! # [provider]
//! # kind = "remote"
//! # endpoint = "http://localhost:8000/v1/chat/completions"
//! # model = "some-model"
//! # api_key_env = "LLM_API_KEY"
//! # timeout_ms = 30000
//!
//! [[tools]]
//! builtin = "pfas_classify"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{LlmProvider, RemoteConfig, RemoteProvider, ScriptedProvider};
use crate::observation::TagAllowlist;
use crate::orchestrator::AgentConfig;
use crate::session::SessionConfig;
use crate::tools::{ToolBus, ToolDef};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Scripted { script: PathBuf },
    Remote(RemoteConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub path: String,
    pub action_timeout_ms: u64,
    pub session_grace_ms: u64,
    pub history_limit: usize,
    pub queue_depth: usize,
    pub max_steps: u32,
    pub max_invalid: u32,
    pub observation_settle_ms: u64,
    pub tool_timeout_ms: u64,
    pub allowlist: TagAllowlist,
    pub trace_log: Option<PathBuf>,
    pub provider: Option<ProviderConfig>,
    pub tools: Vec<ToolDef>,
    /// Serves `GET /debug/sessions` with a JSON dump of every session.
    pub debug: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8765".into(),
            path: "/agent".into(),
            action_timeout_ms: 10_000,
            session_grace_ms: 60_000,
            history_limit: 10,
            queue_depth: 4,
            max_steps: 8,
            max_invalid: 2,
            observation_settle_ms: 100,
            tool_timeout_ms: 10_000,
            allowlist: TagAllowlist::default(),
            trace_log: None,
            provider: None,
            tools: vec![ToolDef::Builtin {
                builtin: "pfas_classify".into(),
            }],
            debug: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: ServerConfig = toml::from_str(text)?;
        config.check()?;
        Ok(config)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(ProviderConfig::Scripted { script }) = &mut config.provider {
            if script.is_relative() {
                *script = base.join(&*script);
            }
        }
        if let Some(log) = &mut config.trace_log {
            if log.is_relative() {
                *log = base.join(&*log);
            }
        }
        Ok(config)
    }

    fn check(&self) -> Result<(), ConfigError> {
        if !self.path.starts_with('/') {
            return Err(ConfigError::Invalid(format!("path `{}` must start with /", self.path)));
        }
        if self.history_limit == 0 || self.queue_depth == 0 || self.max_steps == 0 || self.max_invalid == 0 {
            return Err(ConfigError::Invalid(
                "history_limit, queue_depth, max_steps and max_invalid must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            max_steps: self.max_steps,
            max_invalid: self.max_invalid,
            action_timeout: Duration::from_millis(self.action_timeout_ms),
            observation_settle: Duration::from_millis(self.observation_settle_ms),
        }
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            history_limit: self.history_limit,
            allowlist: self.allowlist.clone(),
        }
    }

    pub fn session_grace(&self) -> Duration {
        Duration::from_millis(self.session_grace_ms)
    }

    pub fn build_provider(&self) -> Result<Arc<dyn LlmProvider>, ConfigError> {
        match &self.provider {
            None => Err(ConfigError::Invalid("no [provider] block".into())),
            Some(ProviderConfig::Scripted { script }) => ScriptedProvider::from_file(script)
                .map(|p| Arc::new(p) as Arc<dyn LlmProvider>)
                .map_err(|e| ConfigError::Invalid(e.to_string())),
            Some(ProviderConfig::Remote(remote)) => RemoteProvider::new(remote.clone())
                .map(|p| Arc::new(p) as Arc<dyn LlmProvider>)
                .map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }

    pub fn build_tools(&self) -> Result<ToolBus, ConfigError> {
        ToolBus::from_defs(&self.tools, Duration::from_millis(self.tool_timeout_ms))
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ServerConfig::from_toml("").unwrap();
        assert_eq!(c.path, "/agent");
        assert_eq!(c.action_timeout_ms, 10_000);
        assert_eq!(c.session_grace_ms, 60_000);
        assert_eq!(c.history_limit, 10);
        assert_eq!(c.queue_depth, 4);
        assert_eq!(c.agent_config().max_steps, 8);
        assert_eq!(c.agent_config().max_invalid, 2);
        assert_eq!(c.allowlist, TagAllowlist::default());
        assert_eq!(c.build_tools().unwrap().specs().count(), 1);
    }

    #[test]
    fn provider_blocks() {
        let c = ServerConfig::from_toml(
            "[provider]\nkind = \"remote\"\nendpoint = \"http://x/v1\"\nmodel = \"m\"\napi_key_env = \"KEY\"\n",
        )
        .unwrap();
        let Some(ProviderConfig::Remote(r)) = c.provider else { panic!() };
        assert_eq!(r.timeout_ms, 30_000);
        assert_eq!(r.api_key_env.as_deref(), Some("KEY"));

        let c = ServerConfig::from_toml("[provider]\nkind = \"scripted\"\nscript = \"s.json\"\n").unwrap();
        assert!(matches!(c.provider, Some(ProviderConfig::Scripted { .. })));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ServerConfig::from_toml("path = \"agent\"").is_err());
        assert!(ServerConfig::from_toml("queue_depth = 0").is_err());
        assert!(ServerConfig::from_toml("bogus = 1").is_err());
        let c = ServerConfig::from_toml("allowlist = [\"button\"]\ntools = []").unwrap();
        assert!(c.allowlist.contains("button") && !c.allowlist.contains("a"));
        assert!(c.build_tools().unwrap().is_empty());
    }
}
