//! Language-model abstraction used by every agent.

mod remote;
mod scripted;

use std::fmt::Write as _;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::registry::{FunctionSpec, ParamKind};
use crate::session::{ChatRole, ChatTurn};

pub use remote::{RemoteConfig, RemoteProvider};
pub use scripted::{Script, ScriptStep, ScriptedProvider, StepResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ReactStep,
    CotAnswer,
    Route,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::ReactStep => "react_step",
            PromptMode::CotAnswer => "cot_answer",
            PromptMode::Route => "route",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentPrompt {
    pub system: String,
    pub turns: Vec<ChatTurn>,
    pub goal: String,
    pub observation_text: String,
    pub tools: Vec<FunctionSpec>,
    /// Prior steps of the current run, tool results, and similar scratch
    /// lines.
    pub context: Vec<String>,
    pub mode: PromptMode,
}

impl AgentPrompt {
    pub fn new(mode: PromptMode, system: impl Into<String>, goal: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            turns: Vec::new(),
            goal: goal.into(),
            observation_text: String::new(),
            tools: Vec::new(),
            context: Vec::new(),
            mode,
        }
    }

    /// Everything after the system text, as one deterministic document.
    pub fn render_body(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "## mode\n{}", self.mode.as_str());
        if !self.turns.is_empty() {
            out.push_str("\n## conversation\n");
            for t in &self.turns {
                let role = match t.role {
                    ChatRole::User => "user",
                    ChatRole::Agent => "agent",
                };
                let _ = writeln!(out, "{role}: {}", t.text);
            }
        }
        let _ = writeln!(out, "\n## goal\n{}", self.goal);
        if !self.observation_text.is_empty() {
            let _ = writeln!(out, "\n## observation\n{}", self.observation_text);
        }
        if !self.tools.is_empty() {
            out.push_str("\n## tools\n");
            for f in &self.tools {
                let _ = writeln!(out, "- {}: {}", signature(f), f.description);
            }
        }
        if !self.context.is_empty() {
            out.push_str("\n## progress\n");
            for (i, line) in self.context.iter().enumerate() {
                let _ = writeln!(out, "{}. {line}", i + 1);
            }
        }
        out
    }

    pub fn render(&self) -> String {
        format!("## system\n{}\n\n{}", self.system, self.render_body())
    }
}

/// `name(param: kind, opt?: kind)` signature line used in prompts.
pub fn signature(f: &FunctionSpec) -> String {
    let params: Vec<String> = f
        .params
        .iter()
        .map(|p| {
            let kind = match &p.kind {
                ParamKind::EnumOf(values) => format!("one of [{}]", values.join(", ")),
                k => k.type_name().to_owned(),
            };
            format!("{}{}: {kind}", p.name, if p.required { "" } else { "?" })
        })
        .collect();
    format!("{}({})", f.name, params.join(", "))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    ToolCall {
        name: String,
        #[serde(default)]
        args: Map<String, Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thought: Option<String>,
    },
    Final {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reasoning: Option<String>,
    },
}

impl Completion {
    pub fn final_text(text: impl Into<String>) -> Self {
        Completion::Final {
            text: text.into(),
            reasoning: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("script exhausted: {0}")]
    ScriptExhausted(String),
    #[error("provider returned an unusable response: {0}")]
    InvalidResponse(String),
}

#[async_trait]
pub trait LlmProvider: Send + Sync {
    /// One completion for `prompt` on behalf of `session_id`.
    async fn complete(&self, session_id: &str, prompt: &AgentPrompt) -> Result<Completion, ProviderError>;

    fn name(&self) -> &str;

    /// Drops any per-session state once a session is discarded.
    fn forget_session(&self, _session_id: &str) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::ParamSpec;

    #[test]
    fn render_is_sectioned_and_deterministic() {
        let mut p = AgentPrompt::new(PromptMode::ReactStep, "You operate the UI.", "Open reports");
        p.observation_text = "page: /search\nbutton | Analyze".into();
        p.tools.push(FunctionSpec {
            name: "navigate".into(),
            description: "Navigate.".into(),
            params: vec![ParamSpec::required("url", ParamKind::EnumOf(vec!["/reports".into()]), "")],
            pages: vec!["*".into()],
            granularity: Default::default(),
        });
        p.context.push("navigate {\"url\":\"/reports\"} -> ok".into());
        let text = p.render();
        assert!(text.starts_with("## system\nYou operate the UI.\n\n## mode\nreact_step\n"));
        assert!(text.contains("## goal\nOpen reports\n"));
        assert!(text.contains("- navigate(url: one of [/reports]): Navigate.\n"));
        assert!(text.contains("## progress\n1. navigate"));
        assert_eq!(text, p.clone().render());
    }

    #[test]
    fn completion_json_shape() {
        let c: Completion = serde_json::from_str(r#"{"final":{"text":"done"}}"#).unwrap();
        assert_eq!(c, Completion::final_text("done"));
        let c: Completion = serde_json::from_str(r#"{"tool_call":{"name":"click","args":{"target":"analyze"}}}"#).unwrap();
        assert!(matches!(c, Completion::ToolCall { name, .. } if name == "click"));
    }
}
