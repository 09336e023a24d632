//! Skillset cache, page scoping, the synthesized `navigate` action and call
//! validation.
//!
//! A function is visible on a page when one of its patterns matches the page
//! path. Its patterns are the union of `FunctionSpec::pages` and every
//! page-function map entry that lists it. Matching strips any scheme/host,
//! query string and fragment from the URL, then applies:
//!
//! * `*` matches every page;
//! * a pattern ending in `/*` matches its base path and everything below it
//!   (`/reports/*` matches `/reports` and `/reports/2024`);
//! * anything else must equal the path exactly.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::observation::NavLink;

pub const NAVIGATE: &str = "navigate";
pub const WILDCARD: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    String,
    Number,
    Boolean,
    EnumOf(Vec<String>),
}

impl ParamKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            ParamKind::String => "string",
            ParamKind::Number => "number",
            ParamKind::Boolean => "boolean",
            ParamKind::EnumOf(_) => "enum",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

impl ParamSpec {
    pub fn required(name: impl Into<String>, kind: ParamKind, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind,
            required: true,
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Primitive,
    Composite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub pages: Vec<String>,
    #[serde(default)]
    pub granularity: Granularity,
}

impl FunctionSpec {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// JSON-schema view of the parameters, as handed to tool-calling models.
    pub fn parameters_schema(&self) -> Value {
        let mut properties = Map::new();
        let mut required = Vec::new();
        for p in &self.params {
            let mut prop = Map::new();
            match &p.kind {
                ParamKind::EnumOf(values) => {
                    prop.insert("type".into(), "string".into());
                    prop.insert("enum".into(), values.clone().into());
                }
                kind => {
                    prop.insert("type".into(), kind.type_name().into());
                }
            }
            if !p.description.is_empty() {
                prop.insert("description".into(), p.description.clone().into());
            }
            properties.insert(p.name.clone(), Value::Object(prop));
            if p.required {
                required.push(Value::String(p.name.clone()));
            }
        }
        serde_json::json!({
            "type": "object",
            "properties": properties,
            "required": required,
        })
    }
}

/// Page pattern → function names listed for that page.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PageFunctionMap {
    pub entries: BTreeMap<String, Vec<String>>,
}

impl PageFunctionMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, pattern: impl Into<String>, names: &[&str]) -> Self {
        self.entries
            .entry(pattern.into())
            .or_default()
            .extend(names.iter().map(|n| n.to_string()));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("duplicate function name `{0}`")]
    DuplicateName(String),
    #[error("page map entry `{pattern}` references unknown function `{name}`")]
    UnknownFunctionInMap { pattern: String, name: String },
    #[error("`{0}` is reserved for the synthesized navigation action")]
    ReservedName(String),
    #[error("function `{function}` is invalid: {reason}")]
    InvalidSpec { function: String, reason: String },
}

/// Immutable skillset cache built from one register message.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    specs: Vec<FunctionSpec>,
    page_map: PageFunctionMap,
    // Per function (registration order), all patterns that expose it.
    patterns: Vec<Vec<String>>,
}

impl Registry {
    pub fn specs(&self) -> &[FunctionSpec] {
        &self.specs
    }

    pub fn page_map(&self) -> &PageFunctionMap {
        &self.page_map
    }

    pub fn get(&self, name: &str) -> Option<&FunctionSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

pub fn build_registry(skillset: Vec<FunctionSpec>, map: PageFunctionMap) -> Result<Registry, RegistryError> {
    let mut index = HashMap::new();
    for (i, spec) in skillset.iter().enumerate() {
        check_spec(spec)?;
        if index.insert(spec.name.as_str(), i).is_some() {
            return Err(RegistryError::DuplicateName(spec.name.clone()));
        }
    }

    let mut patterns: Vec<Vec<String>> = skillset.iter().map(|s| s.pages.clone()).collect();
    for (pattern, names) in &map.entries {
        for name in names {
            let Some(&i) = index.get(name.as_str()) else {
                return Err(RegistryError::UnknownFunctionInMap {
                    pattern: pattern.clone(),
                    name: name.clone(),
                });
            };
            if !patterns[i].contains(pattern) {
                patterns[i].push(pattern.clone());
            }
        }
    }

    Ok(Registry {
        specs: skillset,
        page_map: map,
        patterns,
    })
}

fn check_spec(spec: &FunctionSpec) -> Result<(), RegistryError> {
    let invalid = |reason: String| RegistryError::InvalidSpec {
        function: spec.name.clone(),
        reason,
    };
    if spec.name.trim().is_empty() {
        return Err(invalid("name is empty".into()));
    }
    if spec.name == NAVIGATE {
        return Err(RegistryError::ReservedName(spec.name.clone()));
    }
    if spec.pages.is_empty() {
        return Err(invalid("no page patterns".into()));
    }
    let mut seen = HashSet::new();
    for p in &spec.params {
        if !seen.insert(p.name.as_str()) {
            return Err(invalid(format!("duplicate parameter `{}`", p.name)));
        }
        if let ParamKind::EnumOf(values) = &p.kind {
            if values.is_empty() {
                return Err(invalid(format!("parameter `{}` has an empty enum", p.name)));
            }
        }
    }
    Ok(())
}

/// Path component used for page matching: scheme/authority, query and
/// fragment removed.
pub fn page_path(url: &str) -> &str {
    let mut rest = url;
    if let Some(idx) = rest.find("://") {
        rest = &rest[idx + 3..];
        rest = rest.find('/').map_or("/", |slash| &rest[slash..]);
    }
    let end = rest.find(['?', '#']).unwrap_or(rest.len());
    &rest[..end]
}

pub fn pattern_matches(pattern: &str, url: &str) -> bool {
    if pattern == WILDCARD {
        return true;
    }
    let path = page_path(url);
    match pattern.strip_suffix("/*") {
        Some(base) => {
            path == base
                || (path.len() > base.len() && path.starts_with(base) && path.as_bytes()[base.len()] == b'/')
        }
        None => path == pattern,
    }
}

/// Functions visible at `url`, in registration order, each at most once.
pub fn filter_for_url(reg: &Registry, url: &str) -> Vec<FunctionSpec> {
    reg.specs
        .iter()
        .zip(&reg.patterns)
        .filter(|(_, patterns)| patterns.iter().any(|p| pattern_matches(p, url)))
        .map(|(spec, _)| spec.clone())
        .collect()
}

/// Builds the `navigate(url)` action whose allowed targets are exactly the
/// extracted link URLs.
pub fn synthesize_navigation_fn(links: &[NavLink]) -> FunctionSpec {
    let mut description = String::from("Navigate the application to another page.");
    if links.is_empty() {
        description.push_str(" No pages are reachable from here.");
    } else {
        description.push_str(" Reachable pages:");
        for link in links {
            description.push_str(&format!(" {} -> {};", link.label, link.url));
        }
        description.pop();
    }
    FunctionSpec {
        name: NAVIGATE.into(),
        description,
        params: vec![ParamSpec::required(
            "url",
            ParamKind::EnumOf(links.iter().map(|l| l.url.clone()).collect()),
            "Target page URL",
        )],
        pages: vec![WILDCARD.into()],
        granularity: Granularity::Primitive,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallError {
    #[error("missing required parameter `{0}`")]
    MissingParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{param}` expects {expected}, got {found}")]
    TypeMismatch {
        param: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("parameter `{param}` value {value:?} is not one of {allowed:?}")]
    EnumViolation {
        param: String,
        value: String,
        allowed: Vec<String>,
    },
}

pub fn validate_call(spec: &FunctionSpec, args: &Map<String, Value>) -> Result<(), CallError> {
    for name in args.keys() {
        if spec.param(name).is_none() {
            return Err(CallError::UnknownParam(name.clone()));
        }
    }
    for p in &spec.params {
        let Some(value) = args.get(&p.name) else {
            if p.required {
                return Err(CallError::MissingParam(p.name.clone()));
            }
            continue;
        };
        let mismatch = || CallError::TypeMismatch {
            param: p.name.clone(),
            expected: p.kind.type_name(),
            found: json_type(value),
        };
        match (&p.kind, value) {
            (ParamKind::String, Value::String(_))
            | (ParamKind::Number, Value::Number(_))
            | (ParamKind::Boolean, Value::Bool(_)) => {}
            (ParamKind::EnumOf(allowed), Value::String(s)) => {
                if !allowed.contains(s) {
                    return Err(CallError::EnumViolation {
                        param: p.name.clone(),
                        value: s.clone(),
                        allowed: allowed.clone(),
                    });
                }
            }
            _ => return Err(mismatch()),
        }
    }
    Ok(())
}

fn json_type(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn spec(name: &str, pages: &[&str], params: Vec<ParamSpec>) -> FunctionSpec {
        FunctionSpec {
            name: name.into(),
            description: format!("{name} fn"),
            params,
            pages: pages.iter().map(|p| p.to_string()).collect(),
            granularity: Granularity::Primitive,
        }
    }

    fn type_spec() -> FunctionSpec {
        spec(
            "type",
            &["/search"],
            vec![
                ParamSpec::required("textField", ParamKind::String, "field id"),
                ParamSpec::required("value", ParamKind::String, "text"),
            ],
        )
    }

    fn args(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    fn demo_registry() -> Registry {
        build_registry(
            vec![
                type_spec(),
                spec("click", &["/search"], vec![ParamSpec::required("target", ParamKind::String, "")]),
                spec("export", &["/reports"], vec![]),
            ],
            PageFunctionMap::new()
                .with("/search", &["type", "click"])
                .with("/reports", &["export"]),
        )
        .unwrap()
    }

    fn names(specs: &[FunctionSpec]) -> Vec<&str> {
        specs.iter().map(|s| s.name.as_str()).collect()
    }

    #[test]
    fn build_rejects_duplicates_and_unknown_map_entries() {
        let dup = build_registry(vec![spec("click", &["*"], vec![]), spec("click", &["*"], vec![])], PageFunctionMap::new());
        assert_eq!(dup.unwrap_err(), RegistryError::DuplicateName("click".into()));

        let unknown = build_registry(vec![spec("click", &["*"], vec![])], PageFunctionMap::new().with("/x", &["zoom"]));
        assert!(matches!(unknown.unwrap_err(), RegistryError::UnknownFunctionInMap { name, .. } if name == "zoom"));

        assert!(build_registry(vec![], PageFunctionMap::new()).unwrap().is_empty());
    }

    #[test]
    fn build_rejects_reserved_and_malformed_specs() {
        let nav = build_registry(vec![spec("navigate", &["*"], vec![])], PageFunctionMap::new());
        assert_eq!(nav.unwrap_err(), RegistryError::ReservedName("navigate".into()));
        let no_pages = build_registry(vec![spec("x", &[], vec![])], PageFunctionMap::new());
        assert!(matches!(no_pages.unwrap_err(), RegistryError::InvalidSpec { .. }));
        let empty_enum = spec("x", &["*"], vec![ParamSpec::required("k", ParamKind::EnumOf(vec![]), "")]);
        assert!(build_registry(vec![empty_enum], PageFunctionMap::new()).is_err());
    }

    #[test]
    fn filter_follows_current_page() {
        let reg = demo_registry();
        assert_eq!(names(&filter_for_url(&reg, "/search")), ["type", "click"]);
        assert_eq!(names(&filter_for_url(&reg, "/reports")), ["export"]);
        assert!(filter_for_url(&reg, "/elsewhere").is_empty());
        assert_eq!(names(&filter_for_url(&reg, "https://app.example/search?q=1#top")), ["type", "click"]);
    }

    #[test]
    fn wildcard_function_everywhere() {
        let reg = build_registry(vec![spec("help", &["*"], vec![])], PageFunctionMap::new()).unwrap();
        for url in ["/", "/search", "/a/b/c", "http://h"] {
            assert_eq!(names(&filter_for_url(&reg, url)), ["help"]);
        }
    }

    #[test]
    fn prefix_patterns() {
        assert!(pattern_matches("/reports/*", "/reports"));
        assert!(pattern_matches("/reports/*", "/reports/2024/q1"));
        assert!(!pattern_matches("/reports/*", "/reportsx"));
        assert!(!pattern_matches("/reports", "/reports/2024"));
        assert_eq!(page_path("http://host:8080"), "/");
    }

    #[test]
    fn function_listed_twice_appears_once() {
        let reg = build_registry(
            vec![spec("click", &["/a"], vec![])],
            PageFunctionMap::new().with("/a", &["click"]).with("*", &["click"]),
        )
        .unwrap();
        assert_eq!(names(&filter_for_url(&reg, "/a")), ["click"]);
    }

    #[test]
    fn navigation_fn_from_links() {
        let links = vec![NavLink { label: "Reports".into(), url: "/reports".into() }];
        let nav = synthesize_navigation_fn(&links);
        assert_eq!(nav.name, "navigate");
        assert_eq!(nav.pages, ["*"]);
        assert_eq!(nav.params[0].kind, ParamKind::EnumOf(vec!["/reports".into()]));
        assert!(nav.description.contains("Reports -> /reports"));
        assert!(validate_call(&nav, &args(json!({"url": "/reports"}))).is_ok());

        let empty = synthesize_navigation_fn(&[]);
        assert!(matches!(
            validate_call(&empty, &args(json!({"url": "/reports"}))),
            Err(CallError::EnumViolation { .. })
        ));
    }

    #[test]
    fn navigation_enum_preserves_link_order() {
        let links: Vec<_> = ["/c", "/a", "/b"]
            .iter()
            .map(|u| NavLink { label: u.to_string(), url: u.to_string() })
            .collect();
        let nav = synthesize_navigation_fn(&links);
        assert_eq!(nav.params[0].kind, ParamKind::EnumOf(vec!["/c".into(), "/a".into(), "/b".into()]));
    }

    #[test]
    fn validate_call_cases() {
        let ok = args(json!({"textField": "smiles-input", "value": "FC(F)(F)C(F)(F)C(=O)O"}));
        assert_eq!(validate_call(&type_spec(), &ok), Ok(()));

        let click = spec("click", &["*"], vec![ParamSpec::required("target", ParamKind::String, "")]);
        assert_eq!(validate_call(&click, &Map::new()), Err(CallError::MissingParam("target".into())));
        assert_eq!(
            validate_call(&click, &args(json!({"target": "a", "extra": 1}))),
            Err(CallError::UnknownParam("extra".into()))
        );
        assert!(matches!(
            validate_call(&click, &args(json!({"target": 3}))),
            Err(CallError::TypeMismatch { expected: "string", found: "number", .. })
        ));

        let nav = synthesize_navigation_fn(&[NavLink { label: "R".into(), url: "/reports".into() }]);
        assert!(matches!(
            validate_call(&nav, &args(json!({"url": "/nowhere"}))),
            Err(CallError::EnumViolation { .. })
        ));
    }

    #[test]
    fn param_kind_wire_shape() {
        let p = ParamSpec::required("url", ParamKind::EnumOf(vec!["/a".into()]), "");
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["kind"], json!({"enum_of": ["/a"]}));
        assert_eq!(serde_json::to_value(ParamKind::Number).unwrap(), json!("number"));
        assert!(serde_json::from_value::<ParamKind>(json!("object")).is_err());
    }
}
