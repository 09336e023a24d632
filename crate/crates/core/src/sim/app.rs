//! Declarative virtual frontend.
//!
//! ```json
//! {
//!   "version": 1,
//!   "app_id": "chem-demo",
//!   "start": "/search",
//!   "functions": [
//!     {"name": "type", "description": "...", "params": [...], "pages": ["/search"],
//!      "effect": {"set_field": {"field_param": "textField", "value_param": "value"}}},
//!     {"name": "click", "description": "...", "params": [...], "pages": ["/search"],
//!      "effect": {"click": {"target_param": "target"}}}
//!   ],
//!   "page_map": {},
//!   "pages": {
//!     "/search": {
//!       "elements": [{"tag": "input", "aria_label": "SMILES", "element_id": "smiles-input"}],
//!       "buttons": {"analyze": [{"add_element": {"page": "/reports",
//!         "element": {"tag": "table", "aria_label": "Report for {field:smiles-input}"}}}]}
//!     },
//!     "/reports": {"elements": []}
//!   }
//! }
//! ```
//!
//! `navigate` is built in: it moves to any defined page. Button operations
//! are `add_element` (idempotent), `navigate` and `set_flag`. Element labels
//! may contain `{field:<id>}`, filled from the field values at the time the
//! element is added.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::observation::{AriaElement, AriaSnapshot};
use crate::registry::{FunctionSpec, Granularity, PageFunctionMap, ParamSpec, NAVIGATE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    /// Writes `args[value_param]` into the input whose id is
    /// `args[field_param]`.
    SetField { field_param: String, value_param: String },
    /// Presses the button whose id is `args[target_param]` and runs its
    /// operations.
    Click { target_param: String },
    /// Always reports failure.
    Fail { detail: String },
    /// Succeeds without changing anything.
    Noop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ButtonOp {
    AddElement {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        page: Option<String>,
        element: AriaElement,
    },
    Navigate(String),
    SetFlag(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppFunction {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    #[serde(default)]
    pub pages: Vec<String>,
    #[serde(default)]
    pub granularity: Granularity,
    pub effect: Effect,
}

impl AppFunction {
    pub fn spec(&self) -> FunctionSpec {
        FunctionSpec {
            name: self.name.clone(),
            description: self.description.clone(),
            params: self.params.clone(),
            pages: self.pages.clone(),
            granularity: self.granularity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PageDef {
    #[serde(default)]
    pub elements: Vec<AriaElement>,
    #[serde(default)]
    pub buttons: BTreeMap<String, Vec<ButtonOp>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppDef {
    pub version: u32,
    pub app_id: String,
    pub start: String,
    #[serde(default)]
    pub functions: Vec<AppFunction>,
    #[serde(default)]
    pub page_map: PageFunctionMap,
    pub pages: BTreeMap<String, PageDef>,
}

impl AppDef {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let app: AppDef = serde_json::from_str(text).map_err(|e| e.to_string())?;
        app.check()?;
        Ok(app)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn check(&self) -> Result<(), String> {
        if self.version != 1 {
            return Err(format!("unsupported app version {}", self.version));
        }
        if !self.pages.contains_key(&self.start) {
            return Err(format!("start page `{}` is not defined", self.start));
        }
        for (url, page) in &self.pages {
            for ops in page.buttons.values() {
                for op in ops {
                    match op {
                        ButtonOp::Navigate(to) | ButtonOp::AddElement { page: Some(to), .. } if !self.pages.contains_key(to) => {
                            return Err(format!("button on `{url}` refers to undefined page `{to}`"));
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    pub fn skillset(&self) -> Vec<FunctionSpec> {
        self.functions.iter().map(AppFunction::spec).collect()
    }
}

/// Mutable state of a running virtual app.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VirtualState {
    pub current_url: String,
    pub fields: BTreeMap<String, String>,
    pub flags: BTreeSet<String>,
    pub pages: BTreeMap<String, Vec<AriaElement>>,
}

#[derive(Debug, Clone)]
pub struct VirtualApp {
    def: AppDef,
    state: VirtualState,
}

/// What applying one action did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectOutcome {
    pub result: Result<(), String>,
    pub changed: bool,
}

fn arg_str<'a>(args: &'a Map<String, Value>, name: &str) -> Result<&'a str, String> {
    args.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("missing string argument `{name}`"))
}

impl VirtualApp {
    pub fn new(def: AppDef) -> Self {
        let pages = def.pages.iter().map(|(u, p)| (u.clone(), p.elements.clone())).collect();
        let state = VirtualState {
            current_url: def.start.clone(),
            fields: BTreeMap::new(),
            flags: BTreeSet::new(),
            pages,
        };
        Self { def, state }
    }

    pub fn def(&self) -> &AppDef {
        &self.def
    }

    pub fn state(&self) -> &VirtualState {
        &self.state
    }

    pub fn snapshot(&self) -> AriaSnapshot {
        AriaSnapshot::new(
            self.state.current_url.clone(),
            self.state.pages.get(&self.state.current_url).cloned().unwrap_or_default(),
        )
    }

    fn fill_label(&self, label: &str) -> String {
        let mut out = label.to_owned();
        for (id, value) in &self.state.fields {
            out = out.replace(&format!("{{field:{id}}}"), value);
        }
        out
    }

    fn current_element(&self, id: &str) -> Option<&AriaElement> {
        self.state
            .pages
            .get(&self.state.current_url)?
            .iter()
            .find(|e| e.element_id.as_deref() == Some(id))
    }

    /// Applies an action request deterministically.
    pub fn apply(&mut self, function: &str, args: &Map<String, Value>) -> EffectOutcome {
        let before = self.state.clone();
        let result = self.apply_inner(function, args);
        if result.is_err() {
            self.state = before;
            return EffectOutcome { result, changed: false };
        }
        EffectOutcome {
            changed: self.state != before,
            result,
        }
    }

    fn apply_inner(&mut self, function: &str, args: &Map<String, Value>) -> Result<(), String> {
        if function == NAVIGATE {
            let url = arg_str(args, "url")?;
            if !self.def.pages.contains_key(url) {
                return Err(format!("no page `{url}`"));
            }
            self.state.current_url = url.to_owned();
            return Ok(());
        }
        let Some(f) = self.def.functions.iter().find(|f| f.name == function) else {
            return Err(format!("unknown function `{function}`"));
        };
        match f.effect.clone() {
            Effect::Noop => Ok(()),
            Effect::Fail { detail } => Err(detail),
            Effect::SetField { field_param, value_param } => {
                let id = arg_str(args, &field_param)?;
                let value = arg_str(args, &value_param)?;
                match self.current_element(id) {
                    Some(el) if matches!(el.tag.as_str(), "input" | "textarea" | "select") => {
                        self.state.fields.insert(id.to_owned(), value.to_owned());
                        Ok(())
                    }
                    Some(el) => Err(format!("element `{id}` is a {}, not a field", el.tag)),
                    None => Err(format!("no element `{id}` on {}", self.state.current_url)),
                }
            }
            Effect::Click { target_param } => {
                let id = arg_str(args, &target_param)?.to_owned();
                match self.current_element(&id) {
                    Some(el) if matches!(el.tag.as_str(), "button" | "a") => {}
                    Some(el) => return Err(format!("element `{id}` is a {}, not clickable", el.tag)),
                    None => return Err(format!("no element `{id}` on {}", self.state.current_url)),
                }
                let ops = self
                    .def
                    .pages
                    .get(&self.state.current_url)
                    .and_then(|p| p.buttons.get(&id))
                    .cloned()
                    .unwrap_or_default();
                for op in ops {
                    match op {
                        ButtonOp::AddElement { page, element } => {
                            let page = page.unwrap_or_else(|| self.state.current_url.clone());
                            let mut element = element;
                            element.aria_label = self.fill_label(&element.aria_label);
                            let list = self.state.pages.entry(page).or_default();
                            if !list.contains(&element) {
                                list.push(element);
                            }
                        }
                        ButtonOp::Navigate(to) => self.state.current_url = to,
                        ButtonOp::SetFlag(flag) => {
                            self.state.flags.insert(flag);
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn app() -> VirtualApp {
        let def = json!({
            "version": 1, "app_id": "t", "start": "/a",
            "functions": [
                {"name": "type", "description": "Enter text", "pages": ["/a"],
                 "params": [{"name": "textField", "kind": "string", "required": true},
                            {"name": "value", "kind": "string", "required": true}],
                 "effect": {"set_field": {"field_param": "textField", "value_param": "value"}}},
                {"name": "click", "description": "Press", "pages": ["/a"],
                 "params": [{"name": "target", "kind": "string", "required": true}],
                 "effect": {"click": {"target_param": "target"}}}
            ],
            "pages": {
                "/a": {"elements": [{"tag": "input", "aria_label": "Box", "element_id": "box"},
                                    {"tag": "button", "aria_label": "Go", "element_id": "go"}],
                       "buttons": {"go": [{"add_element": {"page": "/b", "element": {"tag": "table", "aria_label": "Result {field:box}"}}},
                                          {"set_flag": "went"}]}},
                "/b": {}
            }
        });
        VirtualApp::new(AppDef::from_json(&def.to_string()).unwrap())
    }

    fn args(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn effects_are_deterministic() {
        let mut a = app();
        assert!(a.apply("type", &args(json!({"textField": "box", "value": "CCO"}))).changed);
        assert!(a.apply("click", &args(json!({"target": "go"}))).changed);
        // second identical click adds nothing new
        assert!(!a.apply("click", &args(json!({"target": "go"}))).changed);
        let out = a.apply("navigate", &args(json!({"url": "/b"})));
        assert_eq!(out, EffectOutcome { result: Ok(()), changed: true });
        assert_eq!(a.snapshot().elements[0].aria_label, "Result CCO");
        assert!(a.state().flags.contains("went"));
    }

    #[test]
    fn failures_leave_state_untouched() {
        let mut a = app();
        let before = a.state().clone();
        assert!(a.apply("click", &args(json!({"target": "box"}))).result.is_err());
        assert!(a.apply("type", &args(json!({"textField": "go", "value": "x"}))).result.is_err());
        assert!(a.apply("navigate", &args(json!({"url": "/nowhere"}))).result.is_err());
        assert!(a.apply("zoom", &Map::new()).result.is_err());
        assert_eq!(a.state(), &before);
    }

    #[test]
    fn rejects_dangling_pages() {
        let bad = json!({"version": 1, "app_id": "t", "start": "/x", "pages": {"/a": {}}});
        assert!(AppDef::from_json(&bad.to_string()).is_err());
    }
}
