//! Allocator/deallocator function summaries, classification prompts and the
//! `hints.json` file.

mod prompt;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use prompt::{
    build_batch_prompt, build_classification_prompt, parse_hints_response, select_callees, BATCH_SIZE, MAX_CALLEES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MmRole {
    Allocator,
    Deallocator,
}

impl fmt::Display for MmRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MmRole::Allocator => "Allocator",
            MmRole::Deallocator => "Deallocator",
        })
    }
}

impl FromStr for MmRole {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "Allocator" => Ok(MmRole::Allocator),
            "Deallocator" => Ok(MmRole::Deallocator),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OwnershipTarget {
    Return,
    Arg(usize),
}

impl fmt::Display for OwnershipTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OwnershipTarget::Return => f.write_str("return"),
            OwnershipTarget::Arg(i) => write!(f, "arg{i}"),
        }
    }
}

impl FromStr for OwnershipTarget {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "return" {
            return Ok(OwnershipTarget::Return);
        }
        s.strip_prefix("arg")
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|d| d.parse().ok())
            .map(OwnershipTarget::Arg)
            .ok_or_else(|| format!("unknown target {s:?}"))
    }
}

impl Serialize for OwnershipTarget {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OwnershipTarget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Provenance {
    #[default]
    ModelGenerated,
    Heuristic,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct FunctionSummary {
    pub name: String,
    pub role: MmRole,
    pub target: OwnershipTarget,
    pub provenance: Provenance,
    pub validated: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{role} summary cannot target {target}")]
pub struct PairingError {
    pub role: MmRole,
    pub target: OwnershipTarget,
}

impl FunctionSummary {
    pub fn new(name: impl Into<String>, role: MmRole, target: OwnershipTarget, provenance: Provenance) -> Result<Self, PairingError> {
        match (role, target) {
            (MmRole::Allocator, OwnershipTarget::Return) | (MmRole::Deallocator, OwnershipTarget::Arg(_)) => {
                Ok(FunctionSummary { name: name.into(), role, target, provenance, validated: false })
            }
            _ => Err(PairingError { role, target }),
        }
    }

    pub fn allocator(name: impl Into<String>) -> Self {
        FunctionSummary {
            name: name.into(),
            role: MmRole::Allocator,
            target: OwnershipTarget::Return,
            provenance: Provenance::ModelGenerated,
            validated: false,
        }
    }

    pub fn deallocator(name: impl Into<String>, arg: usize) -> Self {
        FunctionSummary {
            name: name.into(),
            role: MmRole::Deallocator,
            target: OwnershipTarget::Arg(arg),
            provenance: Provenance::ModelGenerated,
            validated: false,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn with_validated(mut self, validated: bool) -> Self {
        self.validated = validated;
        self
    }

    pub fn key(&self) -> (&str, MmRole, OwnershipTarget) {
        (&self.name, self.role, self.target)
    }
}

/// On-disk shape of one hint.
#[derive(Debug, Serialize, Deserialize)]
struct HintEntry {
    #[serde(default)]
    name: Option<String>,
    role: String,
    target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    validated: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct HintsDoc {
    hints: BTreeMap<String, Vec<HintEntry>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HintsFile {
    pub hints: BTreeMap<String, Vec<FunctionSummary>>,
}

impl HintsFile {
    /// Merges summaries on `(name, role, target)`: the first provenance wins
    /// and `validated` is the disjunction.
    pub fn from_summaries(summaries: impl IntoIterator<Item = FunctionSummary>) -> Self {
        let mut file = HintsFile::default();
        for s in summaries {
            file.insert(s);
        }
        file
    }

    pub fn insert(&mut self, s: FunctionSummary) {
        let entries = self.hints.entry(s.name.clone()).or_default();
        if let Some(existing) = entries.iter_mut().find(|e| e.role == s.role && e.target == s.target) {
            existing.validated |= s.validated;
            return;
        }
        entries.push(s);
        entries.sort_by_key(|e| (e.role, e.target));
    }

    pub fn len(&self) -> usize {
        self.hints.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn summaries(&self) -> impl Iterator<Item = &FunctionSummary> {
        self.hints.values().flatten()
    }

    pub fn is_allocator(&self, name: &str) -> bool {
        self.hints.get(name).is_some_and(|v| v.iter().any(|s| s.role == MmRole::Allocator))
    }

    pub fn freed_args(&self, name: &str) -> Vec<usize> {
        self.hints
            .get(name)
            .map(|v| {
                v.iter()
                    .filter_map(|s| match s.target {
                        OwnershipTarget::Arg(i) if s.role == MmRole::Deallocator => Some(i),
                        _ => None,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn validated_only(&self) -> HintsFile {
        HintsFile::from_summaries(self.summaries().filter(|s| s.validated).cloned())
    }

    pub fn allocator_names(&self) -> Vec<&str> {
        self.hints.iter().filter(|(n, _)| self.is_allocator(n)).map(|(n, _)| n.as_str()).collect()
    }

    /// `(name, arg)` for every deallocator summary, sorted.
    pub fn deallocator_entries(&self) -> Vec<(&str, usize)> {
        self.hints.keys().flat_map(|n| self.freed_args(n).into_iter().map(move |i| (n.as_str(), i))).collect()
    }

    pub fn to_json(&self) -> String {
        let doc = HintsDoc {
            hints: self
                .hints
                .iter()
                .map(|(name, entries)| {
                    let entries = entries
                        .iter()
                        .map(|s| HintEntry {
                            name: Some(s.name.clone()),
                            role: s.role.to_string(),
                            target: s.target.to_string(),
                            provenance: (s.provenance != Provenance::ModelGenerated).then_some(s.provenance),
                            validated: s.validated,
                        })
                        .collect();
                    (name.clone(), entries)
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("hints serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<HintsFile, HintsError> {
        let doc: HintsDoc = serde_json::from_str(text)
            .map_err(|e| HintsError::Malformed { line: e.line(), column: e.column(), message: e.to_string() })?;
        let mut file = HintsFile::default();
        for (key, entries) in doc.hints {
            for (i, e) in entries.into_iter().enumerate() {
                let at = format!("hints.{key}[{i}]");
                let name = e.name.unwrap_or_else(|| key.clone());
                if name != key {
                    return Err(HintsError::Invalid { at, message: format!("name {name:?} filed under {key:?}") });
                }
                let role: MmRole = e.role.parse().map_err(|m| HintsError::Invalid { at: at.clone(), message: m })?;
                let target: OwnershipTarget = e.target.parse().map_err(|m| HintsError::Invalid { at: at.clone(), message: m })?;
                let s = FunctionSummary::new(name, role, target, e.provenance.unwrap_or_default())
                    .map_err(|p| HintsError::Invalid { at, message: p.to_string() })?;
                file.insert(s.with_validated(e.validated));
            }
        }
        Ok(file)
    }
}

#[derive(Debug, Error)]
pub enum HintsError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed hints document at line {line}, column {column}: {message}")]
    Malformed { line: usize, column: usize, message: String },
    #[error("invalid hint at {at}: {message}")]
    Invalid { at: String, message: String },
}

pub fn write_hints(summaries: &[FunctionSummary], path: &Path) -> Result<(), HintsError> {
    let file = HintsFile::from_summaries(summaries.iter().cloned());
    fs::write(path, file.to_json()).map_err(|source| HintsError::Io { path: path.into(), source })
}

pub fn read_hints(path: &Path) -> Result<HintsFile, HintsError> {
    let text = fs::read_to_string(path).map_err(|source| HintsError::Io { path: path.into(), source })?;
    HintsFile::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden_summaries() -> Vec<FunctionSummary> {
        vec![
            FunctionSummary::allocator("freerdp_certificate_clone"),
            FunctionSummary::allocator("freerdp_certificate_new"),
            FunctionSummary::deallocator("freerdp_certificate_free", 0),
        ]
    }

    #[test]
    fn target_text_round_trips() {
        for t in ["return", "arg0", "arg12"] {
            assert_eq!(t.parse::<OwnershipTarget>().unwrap().to_string(), t);
        }
        for bad in ["arg", "arg-1", "argx", "ret", "arg1a"] {
            assert!(bad.parse::<OwnershipTarget>().is_err(), "{bad}");
        }
    }

    #[test]
    fn pairing_invariant_is_enforced() {
        assert!(FunctionSummary::new("f", MmRole::Allocator, OwnershipTarget::Arg(0), Provenance::Manual).is_err());
        assert!(FunctionSummary::new("f", MmRole::Deallocator, OwnershipTarget::Return, Provenance::Manual).is_err());
    }

    #[test]
    fn golden_hints_layout() {
        let text = HintsFile::from_summaries(golden_summaries()).to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let expected = serde_json::json!({"hints": {
            "freerdp_certificate_clone": [{"name": "freerdp_certificate_clone", "role": "Allocator", "target": "return"}],
            "freerdp_certificate_new": [{"name": "freerdp_certificate_new", "role": "Allocator", "target": "return"}],
            "freerdp_certificate_free": [{"name": "freerdp_certificate_free", "role": "Deallocator", "target": "arg0"}]
        }});
        assert_eq!(v, expected);
    }

    #[test]
    fn empty_file() {
        let v: serde_json::Value = serde_json::from_str(&HintsFile::default().to_json()).unwrap();
        assert_eq!(v, serde_json::json!({"hints": {}}));
    }

    #[test]
    fn duplicates_merge() {
        let f = HintsFile::from_summaries(vec![FunctionSummary::allocator("a"), FunctionSummary::allocator("a").with_validated(true)]);
        assert_eq!(f.len(), 1);
        assert!(f.hints["a"][0].validated);
        let back = HintsFile::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn both_deallocator_targets_are_kept() {
        let f = HintsFile::from_summaries(vec![FunctionSummary::deallocator("d", 1), FunctionSummary::deallocator("d", 0)]);
        assert_eq!(f.freed_args("d"), vec![0, 1]);
    }

    #[test]
    fn read_errors_carry_location() {
        match HintsFile::from_json("{\n  \"hints\": [\n") {
            Err(HintsError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let bad = r#"{"hints": {"f": [{"name": "f", "role": "Allocator", "target": "arg0"}]}}"#;
        match HintsFile::from_json(bad) {
            Err(HintsError::Invalid { at, .. }) => assert_eq!(at, "hints.f[0]"),
            other => panic!("{other:?}"),
        }
    }
}
