//! Deterministic PFAS classifier used by the chemistry demo.
//!
//! This is a string-level mock, not cheminformatics. The SMILES text is split
//! into tokens (`Cl`, `Br`, then single characters) and each uppercase carbon
//! token is checked against three fluorination patterns:
//!
//! * `C(F)(F)F` (carbon with two fluorine branches and a trailing fluorine)
//! * `C(F)(F)` (carbon with two fluorine branches)
//! * `FC(F)` (fluorine, carbon, fluorine branch)
//!
//! A carbon matching any pattern is reported once as a `CF<n>` group, where
//! `n` counts the adjacent fluorine tokens (leading `F`, consecutive `(F)`
//! branches, trailing `F`), and its position is the zero-based ordinal of that
//! carbon among all carbon tokens. Aromatic `c`, bracket atoms, ring closures
//! and stereo marks are not interpreted.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PfasError {
    #[error("SMILES input is empty")]
    EmptyInput,
    #[error("SMILES input contains non-printable character {0:?}")]
    NonPrintable(char),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PfasVerdict {
    pub is_pfas: bool,
    pub evidence: Vec<String>,
}

pub fn pfas_classify(smiles: &str) -> Result<PfasVerdict, PfasError> {
    if smiles.trim().is_empty() {
        return Err(PfasError::EmptyInput);
    }
    if let Some(c) = smiles.chars().find(|c| c.is_control()) {
        return Err(PfasError::NonPrintable(c));
    }

    let tokens = tokenize(smiles);
    let mut evidence = Vec::new();
    let mut carbon = 0usize;
    for (i, &tok) in tokens.iter().enumerate() {
        if tok != "C" {
            continue;
        }
        if let Some(fluorines) = fluorinated_carbon(&tokens, i) {
            evidence.push(format!("CF{fluorines} group at token {carbon}"));
        }
        carbon += 1;
    }
    Ok(PfasVerdict {
        is_pfas: !evidence.is_empty(),
        evidence,
    })
}

fn tokenize(s: &str) -> Vec<&str> {
    let mut out = Vec::with_capacity(s.len());
    let mut idx = 0;
    while idx < s.len() {
        let rest = &s[idx..];
        let len = if rest.starts_with("Cl") || rest.starts_with("Br") {
            2
        } else {
            rest.chars().next().map_or(1, char::len_utf8)
        };
        out.push(&rest[..len]);
        idx += len;
    }
    out
}

const BRANCH_F: [&str; 3] = ["(", "F", ")"];

fn branch_at(tokens: &[&str], at: usize) -> bool {
    tokens.get(at..at + 3) == Some(&BRANCH_F[..])
}

/// Fluorine count on the carbon at `at`, if it matches one of the patterns.
fn fluorinated_carbon(tokens: &[&str], at: usize) -> Option<usize> {
    let leading = at > 0 && tokens[at - 1] == "F";
    let mut branches = 0;
    while branch_at(tokens, at + 1 + 3 * branches) {
        branches += 1;
    }
    let trailing = tokens.get(at + 1 + 3 * branches) == Some(&"F");

    // FC(F) needs a leading F and one branch; both C(F)(F) variants need two
    // branches.
    let matched = branches >= 2 || (leading && branches >= 1);
    matched.then(|| usize::from(leading) + branches + usize::from(trailing))
}
