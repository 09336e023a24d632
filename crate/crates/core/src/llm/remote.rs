//! Chat-completions style HTTP provider.
//!
//! Request:
//!
//! ```json
//! {"model": "...", "messages": [{"role": "system", "content": "..."}, {"role": "user", "content": "..."}],
//!  "tools": [{"type": "function", "function": {"name": "...", "description": "...", "parameters": {...}}}]}
//! ```
//!
//! `tools` is sent only for `react_step` prompts. The first choice's message
//! is read back: a `tool_calls[0].function` becomes a tool call (its
//! `arguments` may be a JSON string or object), otherwise `content` becomes
//! the final text and `reasoning_content`, if any, the hidden reasoning.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{AgentPrompt, Completion, LlmProvider, PromptMode, ProviderError};

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

pub struct RemoteProvider {
    config: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::Client,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Result<Self, ProviderError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ProviderError::ProviderUnavailable(format!("credential variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| ProviderError::ProviderUnavailable(e.to_string()))?;
        Ok(Self { config, api_key, client })
    }

    pub fn request_body(&self, prompt: &AgentPrompt) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.render_body()},
            ],
        });
        if prompt.mode == PromptMode::ReactStep && !prompt.tools.is_empty() {
            let tools: Vec<Value> = prompt
                .tools
                .iter()
                .map(|f| {
                    json!({
                        "type": "function",
                        "function": {
                            "name": f.name,
                            "description": f.description,
                            "parameters": f.parameters_schema(),
                        }
                    })
                })
                .collect();
            body["tools"] = Value::Array(tools);
        }
        body
    }
}

pub fn parse_response(body: &Value) -> Result<Completion, ProviderError> {
    let invalid = |why: &str| ProviderError::InvalidResponse(why.to_owned());
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| invalid("missing choices[0].message"))?;

    if let Some(call) = message.pointer("/tool_calls/0/function") {
        let name = call
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| invalid("tool call without a name"))?;
        let args = match call.get("arguments") {
            None | Some(Value::Null) => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(Value::String(s)) if s.trim().is_empty() => Map::new(),
            Some(Value::String(s)) => match serde_json::from_str(s) {
                Ok(Value::Object(m)) => m,
                _ => return Err(invalid("tool call arguments are not a JSON object")),
            },
            Some(_) => return Err(invalid("tool call arguments are not a JSON object")),
        };
        return Ok(Completion::ToolCall {
            name: name.to_owned(),
            args,
            thought: message.get("content").and_then(Value::as_str).map(str::to_owned),
        });
    }

    let text = message
        .get("content")
        .and_then(Value::as_str)
        .ok_or_else(|| invalid("message has neither tool_calls nor content"))?;
    Ok(Completion::Final {
        text: text.to_owned(),
        reasoning: message
            .get("reasoning_content")
            .and_then(Value::as_str)
            .map(str::to_owned),
    })
}

#[async_trait]
impl LlmProvider for RemoteProvider {
    async fn complete(&self, _session_id: &str, prompt: &AgentPrompt) -> Result<Completion, ProviderError> {
        let mut req = self.client.post(&self.config.endpoint).json(&self.request_body(prompt));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| ProviderError::ProviderUnavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ProviderError::ProviderUnavailable(format!("HTTP {}", status.as_u16())));
        }
        let body: Value = resp
            .json()
            .await
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        parse_response(&body)
    }

    fn name(&self) -> &str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{FunctionSpec, ParamKind, ParamSpec};
    use std::time::Instant;

    #[test]
    fn parses_tool_call_with_string_arguments() {
        let body = json!({"choices": [{"message": {"content": null, "tool_calls": [{"id": "1", "type": "function",
            "function": {"name": "click", "arguments": "{\"target\":\"analyze\"}"}}]}}]});
        let Completion::ToolCall { name, args, .. } = parse_response(&body).unwrap() else { panic!() };
        assert_eq!(name, "click");
        assert_eq!(args["target"], "analyze");
    }

    #[test]
    fn parses_final_with_reasoning() {
        let body = json!({"choices": [{"message": {"content": "It is a PFAS.", "reasoning_content": "CF3 seen"}}]});
        assert_eq!(
            parse_response(&body).unwrap(),
            Completion::Final { text: "It is a PFAS.".into(), reasoning: Some("CF3 seen".into()) }
        );
        assert!(matches!(parse_response(&json!({})), Err(ProviderError::InvalidResponse(_))));
        let bad_args = json!({"choices": [{"message": {"tool_calls": [{"function": {"name": "x", "arguments": "[1]"}}]}}]});
        assert!(parse_response(&bad_args).is_err());
    }

    #[test]
    fn tools_only_on_react_steps() {
        let provider = RemoteProvider::new(RemoteConfig {
            endpoint: "http://127.0.0.1:1/v1/chat/completions".into(),
            model: "m".into(),
            api_key_env: None,
            timeout_ms: 1000,
        })
        .unwrap();
        let mut p = AgentPrompt::new(PromptMode::ReactStep, "sys", "goal");
        p.tools.push(FunctionSpec {
            name: "click".into(),
            description: "Press".into(),
            params: vec![ParamSpec::required("target", ParamKind::String, "")],
            pages: vec!["*".into()],
            granularity: Default::default(),
        });
        let body = provider.request_body(&p);
        assert_eq!(body["tools"][0]["function"]["parameters"]["required"], json!(["target"]));
        assert_eq!(body["messages"][0]["content"], "sys");
        p.mode = PromptMode::CotAnswer;
        assert!(provider.request_body(&p).get("tools").is_none());
    }

    #[test]
    fn missing_credential_variable() {
        let err = RemoteProvider::new(RemoteConfig {
            endpoint: "http://127.0.0.1:1".into(),
            model: "m".into(),
            api_key_env: Some("EMBEDAGENT_TEST_SURELY_UNSET_VAR".into()),
            timeout_ms: 1000,
        });
        assert!(matches!(err, Err(ProviderError::ProviderUnavailable(_))));
    }

    #[tokio::test]
    async fn closed_port_is_unavailable_within_timeout() {
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let config = RemoteConfig {
            endpoint: format!("http://127.0.0.1:{port}/v1/chat/completions"),
            model: "m".into(),
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
        };
        let provider = RemoteProvider::new(config).unwrap();
        let start = Instant::now();
        let res = provider
            .complete("s", &AgentPrompt::new(PromptMode::CotAnswer, "sys", "goal"))
            .await;
        assert!(matches!(res, Err(ProviderError::ProviderUnavailable(_))));
        assert!(start.elapsed() < Duration::from_millis(default_timeout_ms()));
    }
}
