//! Domain tools the analysis agent can call, in-process or over HTTP.
//!
//! HTTP tools receive `POST <endpoint>` with body
//! `{"tool": "<name>", "arguments": {...}}`. A 2xx JSON response becomes the
//! result body; a top-level `evidence` array of strings, when present, is
//! lifted into [`ToolResult::evidence`]. Any other status yields a failed
//! result whose body is `{"error": "HTTP <code>: <text>"}`.

mod pfas;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::registry::{validate_call, CallError, FunctionSpec, Granularity, ParamKind, ParamSpec, WILDCARD};

pub use pfas::{pfas_classify, PfasError, PfasVerdict};

pub const PFAS_TOOL: &str = "pfas_classify";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    InProcess,
    Http(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub transport: Transport,
}

impl ToolSpec {
    /// The tool as a page-independent function, for prompts and argument
    /// validation.
    pub fn as_function(&self) -> FunctionSpec {
        FunctionSpec {
            name: self.name.clone(),
            description: self.description.clone(),
            params: self.params.clone(),
            pages: vec![WILDCARD.into()],
            granularity: Granularity::Composite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    pub status: ToolStatus,
    pub body: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Vec<String>>,
}

impl ToolResult {
    fn failed(tool: &str, error: impl Into<String>) -> Self {
        Self {
            tool: tool.to_owned(),
            status: ToolStatus::Failed,
            body: json!({ "error": error.into() }),
            evidence: None,
        }
    }

    pub fn error(&self) -> Option<&str> {
        match self.status {
            ToolStatus::Failed => self.body.get("error").and_then(Value::as_str),
            ToolStatus::Ok => None,
        }
    }
}

/// What an in-process handler returns on success.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolOutput {
    pub body: Value,
    pub evidence: Option<Vec<String>>,
}

pub type ToolHandler = Arc<dyn Fn(&Map<String, Value>) -> Result<ToolOutput, String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("tool `{0}` is already registered")]
    DuplicateTool(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("invalid arguments for `{tool}`: {source}")]
    ArgsInvalid { tool: String, source: CallError },
    #[error("transport failure calling `{tool}`: {reason}")]
    TransportFailure { tool: String, reason: String },
    #[error("invalid tool definition `{tool}`: {reason}")]
    InvalidSpec { tool: String, reason: String },
}

enum Backend {
    Local(ToolHandler),
    Http(String),
}

struct Entry {
    spec: ToolSpec,
    backend: Backend,
}

/// Tool registry and dispatcher. Read-mostly after startup.
pub struct ToolBus {
    entries: Vec<Entry>,
    http: reqwest::Client,
}

impl Default for ToolBus {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for ToolBus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.entries.iter().map(|e| &e.spec.name)).finish()
    }
}

impl ToolBus {
    pub fn new() -> Self {
        Self::with_timeout(Duration::from_secs(30))
    }

    pub fn with_timeout(timeout: Duration) -> Self {
        Self {
            entries: Vec::new(),
            http: reqwest::Client::builder()
                .timeout(timeout)
                .build()
                .expect("reqwest client builds with default TLS-less config"),
        }
    }

    /// Bus with the demo classifier registered.
    pub fn with_demo_tools() -> Self {
        let mut bus = Self::new();
        bus.register_tool(pfas_tool_spec(), pfas_handler())
            .expect("empty bus accepts the demo tool");
        bus
    }

    pub fn register_tool(&mut self, spec: ToolSpec, handler: ToolHandler) -> Result<(), ToolError> {
        self.check_new(&spec)?;
        self.entries.push(Entry {
            spec,
            backend: Backend::Local(handler),
        });
        Ok(())
    }

    pub fn register_http_tool(&mut self, spec: ToolSpec) -> Result<(), ToolError> {
        self.check_new(&spec)?;
        let Transport::Http(endpoint) = &spec.transport else {
            return Err(ToolError::InvalidSpec {
                tool: spec.name.clone(),
                reason: "http tool needs an http transport".into(),
            });
        };
        let parsed = reqwest::Url::parse(endpoint).map_err(|e| ToolError::InvalidSpec {
            tool: spec.name.clone(),
            reason: format!("endpoint {endpoint:?}: {e}"),
        })?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(ToolError::InvalidSpec {
                tool: spec.name.clone(),
                reason: format!("endpoint {endpoint:?} is not http(s)"),
            });
        }
        let endpoint = endpoint.clone();
        self.entries.push(Entry {
            spec,
            backend: Backend::Http(endpoint),
        });
        Ok(())
    }

    fn check_new(&self, spec: &ToolSpec) -> Result<(), ToolError> {
        if spec.name.trim().is_empty() {
            return Err(ToolError::InvalidSpec {
                tool: spec.name.clone(),
                reason: "name is empty".into(),
            });
        }
        if self.get(&spec.name).is_some() {
            return Err(ToolError::DuplicateTool(spec.name.clone()));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.entries.iter().find(|e| e.spec.name == name).map(|e| &e.spec)
    }

    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.entries.iter().map(|e| &e.spec)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub async fn invoke_tool(&self, name: &str, args: &Map<String, Value>) -> Result<ToolResult, ToolError> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.spec.name == name)
            .ok_or_else(|| ToolError::UnknownTool(name.to_owned()))?;
        validate_call(&entry.spec.as_function(), args).map_err(|source| ToolError::ArgsInvalid {
            tool: name.to_owned(),
            source,
        })?;

        match &entry.backend {
            Backend::Local(handler) => Ok(match handler(args) {
                Ok(out) => ToolResult {
                    tool: name.to_owned(),
                    status: ToolStatus::Ok,
                    body: out.body,
                    evidence: out.evidence,
                },
                Err(e) => ToolResult::failed(name, e),
            }),
            Backend::Http(endpoint) => self.invoke_http(name, endpoint, args).await,
        }
    }

    async fn invoke_http(&self, name: &str, endpoint: &str, args: &Map<String, Value>) -> Result<ToolResult, ToolError> {
        let transport = |e: reqwest::Error| ToolError::TransportFailure {
            tool: name.to_owned(),
            reason: e.to_string(),
        };
        let resp = self
            .http
            .post(endpoint)
            .json(&json!({ "tool": name, "arguments": args }))
            .send()
            .await
            .map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Ok(ToolResult::failed(name, format!("HTTP {}: {}", status.as_u16(), text.trim())));
        }
        let body: Value = resp.json().await.map_err(transport)?;
        let evidence = body.get("evidence").and_then(Value::as_array).map(|items| {
            items
                .iter()
                .filter_map(|v| v.as_str().map(str::to_owned))
                .collect()
        });
        Ok(ToolResult {
            tool: name.to_owned(),
            status: ToolStatus::Ok,
            body,
            evidence,
        })
    }
}

pub fn pfas_tool_spec() -> ToolSpec {
    ToolSpec {
        name: PFAS_TOOL.into(),
        description: "Classify whether a SMILES compound is a PFAS (per- and polyfluoroalkyl substance) \
                      and return supporting evidence"
            .into(),
        params: vec![ParamSpec::required("smiles", ParamKind::String, "SMILES string of the compound")],
        transport: Transport::InProcess,
    }
}

pub fn pfas_handler() -> ToolHandler {
    Arc::new(|args| {
        let smiles = args.get("smiles").and_then(Value::as_str).unwrap_or_default();
        let verdict = pfas_classify(smiles).map_err(|e| e.to_string())?;
        Ok(ToolOutput {
            body: json!({
                "smiles": smiles,
                "is_pfas": verdict.is_pfas,
                "evidence": verdict.evidence,
            }),
            evidence: Some(verdict.evidence),
        })
    })
}

/// Tool entry as written in the server config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ToolDef {
    Builtin { builtin: String },
    Http {
        name: String,
        description: String,
        #[serde(default)]
        params: Vec<ParamSpec>,
        endpoint: String,
    },
}

impl ToolBus {
    pub fn from_defs(defs: &[ToolDef], timeout: Duration) -> Result<Self, ToolError> {
        let mut bus = Self::with_timeout(timeout);
        for def in defs {
            match def {
                ToolDef::Builtin { builtin } if builtin == PFAS_TOOL => {
                    bus.register_tool(pfas_tool_spec(), pfas_handler())?;
                }
                ToolDef::Builtin { builtin } => {
                    return Err(ToolError::InvalidSpec {
                        tool: builtin.clone(),
                        reason: "no such builtin tool".into(),
                    })
                }
                ToolDef::Http {
                    name,
                    description,
                    params,
                    endpoint,
                } => bus.register_http_tool(ToolSpec {
                    name: name.clone(),
                    description: description.clone(),
                    params: params.clone(),
                    transport: Transport::Http(endpoint.clone()),
                })?,
            }
        }
        Ok(bus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn args(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn duplicate_tool_rejected() {
        let mut bus = ToolBus::with_demo_tools();
        assert_eq!(bus.specs().count(), 1);
        assert_eq!(
            bus.register_tool(pfas_tool_spec(), pfas_handler()),
            Err(ToolError::DuplicateTool(PFAS_TOOL.into()))
        );
    }

    #[tokio::test]
    async fn classify_via_bus() {
        let bus = ToolBus::with_demo_tools();
        let r = bus
            .invoke_tool(PFAS_TOOL, &args(json!({"smiles": "FC(F)(F)C(F)(F)C(=O)O"})))
            .await
            .unwrap();
        assert_eq!(r.status, ToolStatus::Ok);
        assert_eq!(r.body["is_pfas"], true);
        assert_eq!(
            r.evidence.as_deref().unwrap(),
            ["CF3 group at token 0", "CF2 group at token 1"]
        );

        let r = bus.invoke_tool(PFAS_TOOL, &args(json!({"smiles": "CCO"}))).await.unwrap();
        assert_eq!(r.body["is_pfas"], false);
    }

    #[tokio::test]
    async fn bus_errors() {
        let bus = ToolBus::with_demo_tools();
        assert_eq!(
            bus.invoke_tool("nope", &Map::new()).await,
            Err(ToolError::UnknownTool("nope".into()))
        );
        assert!(matches!(
            bus.invoke_tool(PFAS_TOOL, &args(json!({"smiles": 3}))).await,
            Err(ToolError::ArgsInvalid { .. })
        ));
        let r = bus.invoke_tool(PFAS_TOOL, &args(json!({"smiles": ""}))).await.unwrap();
        assert_eq!(r.status, ToolStatus::Failed);
        assert_eq!(r.error(), Some("SMILES input is empty"));
    }

    #[test]
    fn http_spec_needs_valid_endpoint() {
        let mut bus = ToolBus::new();
        let spec = |endpoint: &str| ToolSpec {
            name: "remote".into(),
            description: String::new(),
            params: vec![],
            transport: Transport::Http(endpoint.into()),
        };
        assert!(matches!(bus.register_http_tool(spec("not a url")), Err(ToolError::InvalidSpec { .. })));
        assert!(matches!(bus.register_http_tool(spec("ftp://x/y")), Err(ToolError::InvalidSpec { .. })));
        bus.register_http_tool(spec("http://127.0.0.1:9/tool")).unwrap();
    }

    // One-shot HTTP responder on a background thread.
    fn serve_once(status: &'static str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 8192];
            let mut req = Vec::new();
            loop {
                let n = stream.read(&mut buf).unwrap();
                req.extend_from_slice(&buf[..n]);
                let text = String::from_utf8_lossy(&req);
                if let Some(head_end) = text.find("\r\n\r\n") {
                    let len = text[..head_end]
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if req.len() >= head_end + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            let resp = format!(
                "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
            String::from_utf8_lossy(&req).into_owned()
        });
        (format!("http://{addr}/tool"), handle)
    }

    fn http_bus(endpoint: String) -> ToolBus {
        let mut bus = ToolBus::with_timeout(Duration::from_secs(5));
        bus.register_http_tool(ToolSpec {
            name: "lookup".into(),
            description: "remote lookup".into(),
            params: vec![ParamSpec::required("q", ParamKind::String, "")],
            transport: Transport::Http(endpoint),
        })
        .unwrap();
        bus
    }

    #[tokio::test]
    async fn http_tool_success_and_failure() {
        let (endpoint, server) = serve_once("200 OK", r#"{"answer":42,"evidence":["row 7"]}"#);
        let bus = http_bus(endpoint);
        let r = bus.invoke_tool("lookup", &args(json!({"q": "x"}))).await.unwrap();
        assert_eq!(r.status, ToolStatus::Ok);
        assert_eq!(r.body["answer"], 42);
        assert_eq!(r.evidence.as_deref().unwrap(), ["row 7"]);
        let request = server.join().unwrap();
        assert!(request.starts_with("POST /tool"));
        assert!(request.contains(r#""tool":"lookup""#));
        assert!(request.contains(r#""arguments":{"q":"x"}"#));

        let (endpoint, server) = serve_once("503 Service Unavailable", r#"{"detail":"down"}"#);
        let r = http_bus(endpoint).invoke_tool("lookup", &args(json!({"q": "x"}))).await.unwrap();
        server.join().unwrap();
        assert_eq!(r.status, ToolStatus::Failed);
        assert!(r.error().unwrap().starts_with("HTTP 503"));
    }

    #[tokio::test]
    async fn http_tool_unreachable() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let bus = http_bus(format!("http://127.0.0.1:{port}/tool"));
        assert!(matches!(
            bus.invoke_tool("lookup", &args(json!({"q": "x"}))).await,
            Err(ToolError::TransportFailure { .. })
        ));
    }

    #[test]
    fn defs_from_toml() {
        let defs: Vec<ToolDef> = toml::from_str::<toml::Table>(
            r#"
            tools = [
              { builtin = "pfas_classify" },
              { name = "lookup", description = "remote", endpoint = "http://localhost:9000/lookup" },
            ]
            "#,
        )
        .unwrap()["tools"]
            .clone()
            .try_into()
            .unwrap();
        let bus = ToolBus::from_defs(&defs, Duration::from_secs(1)).unwrap();
        let names: Vec<_> = bus.specs().map(|s| s.name.as_str()).collect();
        assert_eq!(names, [PFAS_TOOL, "lookup"]);
        assert!(ToolBus::from_defs(&[ToolDef::Builtin { builtin: "x".into() }], Duration::from_secs(1)).is_err());
    }
}
