//! Declarative scenario files.
//!
//! ```json
//! {
//!   "version": 1,
//!   "name": "pfas-walkthrough",
//!   "app": "../apps/chem-demo.json",
//!   "vars": {"smiles": "FC(F)(F)C(F)(F)C(=O)O"},
//!   "step_timeout_ms": 15000,
//!   "steps": [
//!     {"send_chat": "Check if this SMILES is a PFAS. SMILES: ${smiles}"},
//!     {"expect_action": {"name": "type", "args": {"textField": "smiles-input", "value": "${smiles}"}}},
//!     {"expect_action": {"name": "click", "reply": "withhold"}},
//!     {"expect_tool": {"name": "pfas_classify"}},
//!     {"expect_error": {"code": "action_timeout"}},
//!     {"expect_chat": {"contains": "${smiles}"}},
//!     {"expect_state": {"url": "/reports", "fields": {"smiles-input": "${smiles}"}}},
//!     {"semantic": {"reference": "A short PFAS verdict."}}
//!   ]
//! }
//! ```
//!
//! `app` is a path relative to the scenario file or an inline app object.
//! `${name}` in any string is replaced from `vars` before parsing.
//! `expect_action.args`, when present, must equal the request's arguments
//! exactly. `reply` is `auto` (apply the effect and report its result),
//! `withhold` (never answer) or `{"failed": "<detail>"}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::app::AppDef;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reply {
    #[default]
    Auto,
    Withhold,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectAction {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<Map<String, Value>>,
    #[serde(default)]
    pub reply: Reply,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatMatch {
    Equals(String),
    Contains(String),
    ContainsAll(Vec<String>),
    NotContains(String),
}

impl ChatMatch {
    pub fn check(&self, text: &str) -> Result<(), String> {
        let ok = match self {
            ChatMatch::Equals(s) => text == s,
            ChatMatch::Contains(s) => text.contains(s.as_str()),
            ChatMatch::ContainsAll(all) => all.iter().all(|s| text.contains(s.as_str())),
            ChatMatch::NotContains(s) => !text.contains(s.as_str()),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("chat {text:?} does not satisfy {}", serde_json::to_string(self).unwrap_or_default()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectTool {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectError {
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExpectState {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Semantic {
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    SendChat(String),
    ExpectAction(ExpectAction),
    ExpectTool(ExpectTool),
    ExpectChat(ChatMatch),
    ExpectError(ExpectError),
    ExpectState(ExpectState),
    /// Reserved for model-judged similarity; always skipped here.
    Semantic(Semantic),
}

impl Step {
    pub fn kind(&self) -> &'static str {
        match self {
            Step::SendChat(_) => "send_chat",
            Step::ExpectAction(_) => "expect_action",
            Step::ExpectTool(_) => "expect_tool",
            Step::ExpectChat(_) => "expect_chat",
            Step::ExpectError(_) => "expect_error",
            Step::ExpectState(_) => "expect_state",
            Step::Semantic(_) => "semantic",
        }
    }
}

fn default_step_timeout() -> u64 {
    15_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub app: AppDef,
    #[serde(default)]
    pub vars: BTreeMap<String, String>,
    #[serde(default = "default_step_timeout")]
    pub step_timeout_ms: u64,
    pub steps: Vec<Step>,
}

/// Replaces `${name}` in every string of `v`. Unknown names are left as-is.
pub fn substitute_vars(v: &mut Value, vars: &BTreeMap<String, String>) {
    match v {
        Value::String(s) => {
            for (k, val) in vars {
                let pat = format!("${{{k}}}");
                if s.contains(&pat) {
                    *s = s.replace(&pat, val);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|i| substitute_vars(i, vars)),
        Value::Object(map) => map.values_mut().for_each(|i| substitute_vars(i, vars)),
        _ => {}
    }
}

impl Scenario {
    /// Parses a scenario document. A string `app` is resolved against `base`.
    pub fn from_value(mut doc: Value, base: Option<&Path>) -> Result<Self, String> {
        if let Some(Value::String(app_path)) = doc.get("app") {
            let path = base.map(|b| b.join(app_path)).unwrap_or_else(|| app_path.into());
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let app: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            doc["app"] = app;
        }
        let vars: BTreeMap<String, String> = doc
            .get("vars")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or_default();
        if let Some(steps) = doc.get_mut("steps") {
            substitute_vars(steps, &vars);
        }
        let scenario: Scenario = serde_json::from_value(doc).map_err(|e| e.to_string())?;
        if scenario.version != 1 {
            return Err(format!("unsupported scenario version {}", scenario.version));
        }
        AppDef::from_json(&serde_json::to_string(&scenario.app).map_err(|e| e.to_string())?)?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_value(doc, path.parent()).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Loads every `*.json` scenario in `dir`, sorted by file name.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<Self>, String> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| format!("{}: {e}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths.iter().map(Self::load).collect()
    }

    /// Re-reads `path` with some variables overridden, e.g. to run the same
    /// scenario with many inputs.
    pub fn load_with_vars(path: impl AsRef<Path>, name: &str, vars: &BTreeMap<String, String>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut doc: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let merged = doc.get_mut("vars").and_then(Value::as_object_mut);
        match merged {
            Some(m) => {
                for (k, v) in vars {
                    m.insert(k.clone(), Value::String(v.clone()));
                }
            }
            None => doc["vars"] = serde_json::to_value(vars).map_err(|e| e.to_string())?,
        }
        doc["name"] = Value::String(name.to_owned());
        Self::from_value(doc, path.parent())
    }

    /// Strings that identify this scenario's inputs, used for the
    /// cross-contamination check.
    pub fn markers(&self) -> Vec<&str> {
        self.vars.values().map(String::as_str).filter(|v| !v.is_empty()).collect()
    }
}
