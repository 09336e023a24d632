//! Curated ARIA observations: the element snapshot the shim pushes for the
//! current page, tag filtering, link extraction and prompt rendering.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Tags that carry an `href` worth exposing as a navigation target.
pub const LINK_TAGS: &[&str] = &["a"];

/// Tags kept by default. Everything else (icons, layout wrappers, decorative
/// `svg`/`div`/`span` nodes) is dropped before an agent sees the page.
pub const DEFAULT_ALLOWLIST: &[&str] = &[
    "button", "a", "input", "select", "textarea", "option", "form", "nav", "table",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AriaElement {
    pub tag: String,
    pub aria_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub href: Option<String>,
}

impl AriaElement {
    pub fn new(tag: impl Into<String>, aria_label: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            aria_label: aria_label.into(),
            element_id: None,
            href: None,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.element_id = Some(id.into());
        self
    }

    pub fn link(aria_label: impl Into<String>, href: impl Into<String>) -> Self {
        Self {
            tag: "a".into(),
            aria_label: aria_label.into(),
            element_id: None,
            href: Some(href.into()),
        }
    }

    pub fn is_link(&self) -> bool {
        LINK_TAGS.contains(&self.tag.as_str())
    }

    /// Checks the element invariants: a lowercase tag, a non-empty label, and
    /// an `href` only on link tags.
    pub fn check(&self) -> Result<(), String> {
        if self.tag.is_empty() || self.tag.chars().any(|c| c.is_ascii_uppercase()) {
            return Err(format!("tag {:?} must be a non-empty lowercase name", self.tag));
        }
        if self.aria_label.trim().is_empty() {
            return Err(format!("<{}> element has an empty aria_label", self.tag));
        }
        if self.href.is_some() && !self.is_link() {
            return Err(format!("href is only allowed on link tags, found on <{}>", self.tag));
        }
        Ok(())
    }
}

/// Full replacement snapshot of the labeled elements on one page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AriaSnapshot {
    pub url: String,
    pub elements: Vec<AriaElement>,
    /// Version of the snapshot within its session: the wire seq it arrived
    /// on, replaced by the gateway with a per-session apply counter.
    #[serde(default)]
    pub captured_seq: u64,
}

impl AriaSnapshot {
    pub fn new(url: impl Into<String>, elements: Vec<AriaElement>) -> Self {
        Self {
            url: url.into(),
            elements,
            captured_seq: 0,
        }
    }

    pub fn empty(url: impl Into<String>) -> Self {
        Self::new(url, Vec::new())
    }

    /// Content digest over url and elements. `captured_seq` is excluded so a
    /// resent identical snapshot hashes the same.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.url.as_bytes());
        for el in &self.elements {
            hasher.update([0u8]);
            hasher.update(el.tag.as_bytes());
            hasher.update([1u8]);
            hasher.update(el.aria_label.as_bytes());
            hasher.update([2u8]);
            if let Some(id) = &el.element_id {
                hasher.update(id.as_bytes());
            }
            hasher.update([3u8]);
            if let Some(href) = &el.href {
                hasher.update(href.as_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Set of tag names kept by [`filter_by_tag`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagAllowlist(BTreeSet<String>);

impl TagAllowlist {
    pub fn new<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(tags.into_iter().map(|t| t.into().to_ascii_lowercase()).collect())
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.0.contains(tag)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl Default for TagAllowlist {
    fn default() -> Self {
        Self::new(DEFAULT_ALLOWLIST.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NavLink {
    pub label: String,
    pub url: String,
}

pub fn filter_by_tag(snapshot: &AriaSnapshot, allowlist: &TagAllowlist) -> AriaSnapshot {
    AriaSnapshot {
        url: snapshot.url.clone(),
        elements: snapshot
            .elements
            .iter()
            .filter(|el| allowlist.contains(&el.tag))
            .cloned()
            .collect(),
        captured_seq: snapshot.captured_seq,
    }
}

/// One link per distinct href, in document order; the first label seen for an
/// href wins.
pub fn extract_nav_links(snapshot: &AriaSnapshot) -> Vec<NavLink> {
    let mut seen = HashSet::new();
    snapshot
        .elements
        .iter()
        .filter(|el| el.is_link())
        .filter_map(|el| {
            let href = el.href.as_deref().filter(|h| !h.is_empty())?;
            seen.insert(href.to_owned()).then(|| NavLink {
                label: el.aria_label.clone(),
                url: href.to_owned(),
            })
        })
        .collect()
}

/// Prompt text for a (tag-filtered) snapshot: `page: <url>` followed by one
/// `tag | label [| id]` line per element.
pub fn render_observation(snapshot: &AriaSnapshot) -> String {
    let mut out = format!("page: {}", one_line(&snapshot.url));
    for el in &snapshot.elements {
        let _ = write!(out, "\n{} | {}", one_line(&el.tag), one_line(&el.aria_label));
        if let Some(id) = &el.element_id {
            let _ = write!(out, " | {}", one_line(id));
        }
    }
    out
}

// Escapes the field separator and line breaks so distinct snapshots never
// render to the same text.
fn one_line(s: &str) -> std::borrow::Cow<'_, str> {
    if !s.contains(['\\', '|', '\n', '\r']) {
        return s.into();
    }
    let mut out = String::with_capacity(s.len() + 4);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.into()
}
