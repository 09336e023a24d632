//! Reference implementations used only as test oracles. They are written
//! independently of the library code they check.

use embedagent::registry::{FunctionSpec, PageFunctionMap};
use regex::Regex;

/// Path of `url` via a regex rather than index arithmetic.
pub fn url_path(url: &str) -> String {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^(?:[A-Za-z][A-Za-z0-9+.-]*://[^/?#]*)?([^?#]*)").unwrap());
    let p = re.captures(url).unwrap().get(1).unwrap().as_str();
    if p.is_empty() { "/".to_owned() } else { p.to_owned() }
}

/// Compiles a page pattern to an anchored regex.
pub fn pattern_regex(pattern: &str) -> Regex {
    thread_local! {
        static CACHE: std::cell::RefCell<std::collections::HashMap<String, Regex>> = Default::default();
    }
    CACHE.with(|c| c.borrow_mut().entry(pattern.to_owned()).or_insert_with(|| compile(pattern)).clone())
}

fn compile(pattern: &str) -> Regex {
    if pattern == "*" {
        return Regex::new("^.*$").unwrap();
    }
    let src = match pattern.strip_suffix("/*") {
        Some(base) => format!("^{}(/.*)?$", regex::escape(base)),
        None => format!("^{}$", regex::escape(pattern)),
    };
    Regex::new(&src).unwrap()
}

/// Names visible at `url`: a function is visible when its own pages or any
/// page-map key listing it matches.
pub fn visible_names(skillset: &[FunctionSpec], map: &PageFunctionMap, url: &str) -> Vec<String> {
    let path = url_path(url);
    skillset
        .iter()
        .filter(|f| {
            let own = f.pages.iter().any(|p| pattern_regex(p).is_match(&path));
            let mapped = map
                .entries
                .iter()
                .any(|(p, names)| names.contains(&f.name) && pattern_regex(p).is_match(&path));
            own || mapped
        })
        .map(|f| f.name.clone())
        .collect()
}

/// PFAS membership by plain substring search for the three patterns.
pub fn pfas_expected(smiles: &str) -> bool {
    ["C(F)(F)F", "C(F)(F)", "FC(F)"].iter().any(|p| smiles.contains(p))
}

/// Expected evidence strings, rebuilt from substring positions.
pub fn pfas_evidence(smiles: &str) -> Vec<String> {
    let b = smiles.as_bytes();
    let starts = |at: usize, pat: &str| smiles.get(at..).is_some_and(|r| r.starts_with(pat));
    let mut carbons = std::collections::BTreeSet::new();
    for (i, _) in smiles.match_indices("C(F)(F)") {
        carbons.insert(i);
    }
    for (i, _) in smiles.match_indices("FC(F)") {
        carbons.insert(i + 1);
    }
    carbons
        .into_iter()
        .map(|c| {
            let ordinal = (0..c).filter(|&j| b[j] == b'C' && b.get(j + 1) != Some(&b'l')).count();
            let mut n = usize::from(c > 0 && b[c - 1] == b'F');
            let mut at = c + 1;
            while starts(at, "(F)") {
                n += 1;
                at += 3;
            }
            n += usize::from(b.get(at) == Some(&b'F'));
            format!("CF{n} group at token {ordinal}")
        })
        .collect()
}

pub fn pfas_corpus() -> Vec<(String, String)> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata/pfas_corpus.tsv");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (smiles, name) = l.split_once('\t').unwrap();
            (smiles.to_owned(), name.to_owned())
        })
        .collect()
}
