//! Deterministic provider driven by a declarative script file.
//!
//! A script file holds named conversations. Each `route` completion selects
//! the first script whose `trigger` occurs in the goal (case-insensitive) and
//! restarts it; every later completion for that session consumes the next
//! step. A step states the mode it expects, an optional substring the
//! rendered prompt must contain, an optional regex whose named groups are
//! captured from the prompt, and the completion to return. `${name}`
//! placeholders in the response are filled from captured groups (the
//! script-level `capture` runs once against the goal). `repeat` replays a
//! step several times.
//!
//! ```json
//! {
//!   "version": 1,
//!   "scripts": [{
//!     "key": "pfas-demo",
//!     "trigger": "is a PFAS",
//!     "capture": "SMILES:\\s*(?P<smiles>\\S+)",
//!     "steps": [
//!       {"mode": "route", "respond": {"final": {"text": "web, analysis"}}},
//!       {"mode": "react_step", "expect": "page: /search",
//!        "respond": {"tool_call": {"name": "type", "args": {"textField": "smiles-input", "value": "${smiles}"}}}}
//!     ]
//!   }],
//!   "fallback": {"cot_answer": {"final": {"text": "No analysis results available."}}}
//! }
//! ```
//!
//! `fallback` answers a mode when the session has no script left to play.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AgentPrompt, Completion, LlmProvider, PromptMode, ProviderError};

pub type StepResponse = Completion;

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub mode: PromptMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<String>,
    #[serde(default = "one")]
    pub repeat: u32,
    pub respond: StepResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub key: String,
    pub trigger: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<String>,
    pub steps: Vec<ScriptStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptFile {
    pub version: u32,
    pub scripts: Vec<Script>,
    #[serde(default)]
    pub fallback: BTreeMap<PromptMode, StepResponse>,
}

struct Compiled {
    script: Script,
    capture: Option<Regex>,
    step_captures: Vec<Option<Regex>>,
}

#[derive(Debug, Default)]
struct Cursor {
    script: usize,
    step: usize,
    played: u32,
    bindings: HashMap<String, String>,
}

pub struct ScriptedProvider {
    scripts: Vec<Compiled>,
    fallback: BTreeMap<PromptMode, StepResponse>,
    cursors: Mutex<HashMap<String, Option<Cursor>>>,
}

impl std::fmt::Debug for ScriptedProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedProvider")
            .field("scripts", &self.scripts.iter().map(|c| &c.script.key).collect::<Vec<_>>())
            .finish()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptLoadError {
    #[error("reading script file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing script file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported script version {0}")]
    Version(u32),
    #[error("script `{key}`: bad capture regex: {source}")]
    Regex { key: String, source: regex::Error },
}

impl ScriptedProvider {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScriptLoadError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ScriptLoadError> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn new(file: ScriptFile) -> Result<Self, ScriptLoadError> {
        if file.version != 1 {
            return Err(ScriptLoadError::Version(file.version));
        }
        let compile = |key: &str, pattern: &Option<String>| {
            pattern
                .as_deref()
                .map(Regex::new)
                .transpose()
                .map_err(|source| ScriptLoadError::Regex {
                    key: key.to_owned(),
                    source,
                })
        };
        let scripts = file
            .scripts
            .into_iter()
            .map(|script| {
                let capture = compile(&script.key, &script.capture)?;
                let step_captures = script
                    .steps
                    .iter()
                    .map(|s| compile(&script.key, &s.capture))
                    .collect::<Result<_, _>>()?;
                Ok(Compiled {
                    script,
                    capture,
                    step_captures,
                })
            })
            .collect::<Result<_, ScriptLoadError>>()?;
        Ok(Self {
            scripts,
            fallback: file.fallback,
            cursors: Mutex::new(HashMap::new()),
        })
    }

    fn select(&self, goal: &str) -> Option<Cursor> {
        let lower = goal.to_lowercase();
        let (idx, compiled) = self
            .scripts
            .iter()
            .enumerate()
            .find(|(_, c)| lower.contains(&c.script.trigger.to_lowercase()))?;
        let mut bindings = HashMap::new();
        if let Some(re) = &compiled.capture {
            capture_into(re, goal, &mut bindings);
        }
        Some(Cursor {
            script: idx,
            bindings,
            ..Cursor::default()
        })
    }

    fn next(&self, session_id: &str, prompt: &AgentPrompt) -> Result<Completion, ProviderError> {
        let mut cursors = self.cursors.lock().expect("cursor lock poisoned");
        let slot = cursors.entry(session_id.to_owned()).or_default();
        if prompt.mode == PromptMode::Route {
            *slot = self.select(&prompt.goal);
        }

        let Some(cursor) = slot.as_mut() else {
            return self.fallback_for(prompt.mode, "no script matches this session");
        };
        let compiled = &self.scripts[cursor.script];
        let Some(step) = compiled.script.steps.get(cursor.step) else {
            *slot = None;
            return self.fallback_for(prompt.mode, &format!("script `{}` has no more steps", compiled.script.key));
        };

        let exhausted = |why: String| ProviderError::ScriptExhausted(format!("script `{}` step {}: {why}", compiled.script.key, cursor.step + 1));
        if step.mode != prompt.mode {
            return Err(exhausted(format!(
                "expects mode {}, got {}",
                step.mode.as_str(),
                prompt.mode.as_str()
            )));
        }
        let rendered = prompt.render();
        if let Some(expect) = &step.expect {
            if !rendered.contains(expect.as_str()) {
                return Err(exhausted(format!("prompt does not contain {expect:?}")));
            }
        }
        if let Some(re) = &compiled.step_captures[cursor.step] {
            if !capture_into(re, &rendered, &mut cursor.bindings) {
                return Err(exhausted(format!("capture /{re}/ found nothing in the prompt")));
            }
        }
        let response = substitute(&step.respond, &cursor.bindings).map_err(exhausted)?;

        cursor.played += 1;
        if cursor.played >= step.repeat.max(1) {
            cursor.step += 1;
            cursor.played = 0;
        }
        Ok(response)
    }

    fn fallback_for(&self, mode: PromptMode, why: &str) -> Result<Completion, ProviderError> {
        self.fallback
            .get(&mode)
            .cloned()
            .ok_or_else(|| ProviderError::ScriptExhausted(format!("{why} (mode {})", mode.as_str())))
    }
}

fn capture_into(re: &Regex, text: &str, bindings: &mut HashMap<String, String>) -> bool {
    let Some(caps) = re.captures(text) else {
        return false;
    };
    for name in re.capture_names().flatten() {
        if let Some(m) = caps.name(name) {
            bindings.insert(name.to_owned(), m.as_str().to_owned());
        }
    }
    true
}

fn substitute(response: &Completion, bindings: &HashMap<String, String>) -> Result<Completion, String> {
    fn walk(v: &mut Value, bindings: &HashMap<String, String>) -> Result<(), String> {
        match v {
            Value::String(s) => *s = fill(s, bindings)?,
            Value::Array(items) => items.iter_mut().try_for_each(|i| walk(i, bindings))?,
            Value::Object(map) => map.values_mut().try_for_each(|i| walk(i, bindings))?,
            _ => {}
        }
        Ok(())
    }
    let mut value = serde_json::to_value(response).expect("completion serializes");
    walk(&mut value, bindings)?;
    Ok(serde_json::from_value(value).expect("substitution keeps the completion shape"))
}

fn fill(template: &str, bindings: &HashMap<String, String>) -> Result<String, String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| format!("unterminated placeholder in {template:?}"))?;
        let name = &after[..end];
        let value = bindings.get(name).ok_or_else(|| format!("unbound placeholder ${{{name}}}"))?;
        out.push_str(value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[async_trait]
impl LlmProvider for ScriptedProvider {
    async fn complete(&self, session_id: &str, prompt: &AgentPrompt) -> Result<Completion, ProviderError> {
        self.next(session_id, prompt)
    }

    fn name(&self) -> &str {
        "scripted"
    }

    fn forget_session(&self, session_id: &str) {
        self.cursors.lock().expect("cursor lock poisoned").remove(session_id);
    }
}
