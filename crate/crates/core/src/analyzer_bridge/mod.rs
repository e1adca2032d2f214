//! Analyzer model emission, analyzer result ingestion, and the unified
//! warning model.

mod emit;
mod ingest;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::extraction::SourceSpan;

pub use emit::{emit_codeql_extension, emit_infer_flags, infer_flags_file, InferPatterns, UNMATCHABLE_PATTERN};
pub use ingest::{ingest_codeql_results, ingest_infer_results, parse_codeql_results, parse_infer_results, IngestError, Ingested, RuleAllowlist};

pub const LEAK_CATEGORY: &str = "memory leak";
/// Allocation lines closer than this are the same finding.
pub const LINE_TOLERANCE: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WarningSource {
    Internal,
    CodeQL,
    Infer,
}

impl fmt::Display for WarningSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub span: SourceSpan,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum WarningStatus {
    Raw,
    FeasibilityRetained,
    FeasibilityDiscarded,
    Triaged { verdict: bool },
    Untriaged,
}

impl WarningStatus {
    fn stage(self) -> u8 {
        match self {
            WarningStatus::Raw => 0,
            WarningStatus::FeasibilityRetained | WarningStatus::FeasibilityDiscarded => 1,
            WarningStatus::Triaged { .. } | WarningStatus::Untriaged => 2,
        }
    }

    /// Whether the warning still counts as a finding.
    pub fn is_live(self) -> bool {
        !matches!(self, WarningStatus::FeasibilityDiscarded | WarningStatus::Triaged { verdict: false })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageNote {
    pub confidence: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub source: WarningSource,
    /// Every source that reported this finding, after merging.
    pub sources: BTreeSet<WarningSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
    pub file: String,
    pub function: String,
    pub line: u32,
    pub message: String,
    pub category: String,
    pub allocation_site: Option<SourceSpan>,
    pub trace: Vec<TraceStep>,
    pub status: WarningStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triage: Option<TriageNote>,
}

impl Warning {
    pub fn new(source: WarningSource, file: impl Into<String>, function: impl Into<String>, line: u32, message: impl Into<String>) -> Self {
        Warning {
            source,
            sources: BTreeSet::from([source]),
            rule_id: None,
            file: file.into(),
            function: function.into(),
            line,
            message: message.into(),
            category: LEAK_CATEGORY.into(),
            allocation_site: None,
            trace: Vec::new(),
            status: WarningStatus::Raw,
            tags: Vec::new(),
            triage: None,
        }
    }

    /// Line of the allocation, or of the report when none is known.
    pub fn alloc_line(&self) -> u32 {
        self.allocation_site.as_ref().map_or(self.line, |s| s.start_line)
    }

    /// Moves to `next`; refuses to go back to an earlier stage.
    pub fn advance(&mut self, next: WarningStatus) -> bool {
        if next.stage() < self.status.stage() {
            return false;
        }
        self.status = next;
        true
    }

    pub fn tag(&mut self, t: &str) {
        if !self.tags.iter().any(|x| x == t) {
            self.tags.push(t.to_string());
        }
    }

    fn same_finding(&self, other: &Warning) -> bool {
        crate::extraction::same_file(&self.file, &other.file)
            && self.function == other.function
            && self.alloc_line().abs_diff(other.alloc_line()) <= LINE_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeResult {
    pub warnings: Vec<Warning>,
    /// Input warnings per source.
    pub per_source: BTreeMap<WarningSource, usize>,
    /// Merged findings per exact set of reporting sources, e.g. `CodeQL+Infer`.
    pub by_source_set: BTreeMap<String, usize>,
    /// Merged findings reported by two or more sources.
    pub overlap: usize,
}

/// Merges findings that different sources report for the same function and
/// allocation line (within the tolerance).
pub fn merge_warnings(lists: &[Vec<Warning>]) -> MergeResult {
    let mut per_source = BTreeMap::new();
    let mut merged: Vec<Warning> = Vec::new();
    for w in lists.iter().flatten() {
        *per_source.entry(w.source).or_insert(0) += 1;
        let slot = merged.iter_mut().find(|m| m.same_finding(w) && m.sources.is_disjoint(&w.sources));
        match slot {
            Some(m) => {
                m.sources.extend(w.sources.iter().copied());
                if m.trace.is_empty() {
                    m.trace = w.trace.clone();
                }
                if m.allocation_site.is_none() {
                    m.allocation_site = w.allocation_site.clone();
                }
                for t in &w.tags {
                    m.tag(t);
                }
            }
            None => merged.push(w.clone()),
        }
    }
    let mut by_source_set = BTreeMap::new();
    for m in &merged {
        let key = m.sources.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("+");
        *by_source_set.entry(key).or_insert(0) += 1;
    }
    let overlap = merged.iter().filter(|m| m.sources.len() > 1).count();
    MergeResult { warnings: merged, per_source, by_source_set, overlap }
}

fn status_label(s: WarningStatus) -> String {
    match s {
        WarningStatus::Triaged { verdict } => format!("Triaged({verdict})"),
        other => format!("{other:?}"),
    }
}

/// Fixed-width text table of warnings.
pub fn render_table(warnings: &[Warning]) -> String {
    let rows: Vec<[String; 6]> = warnings
        .iter()
        .map(|w| {
            [
                w.sources.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("+"),
                format!("{}:{}", w.file, w.line),
                w.function.clone(),
                w.alloc_line().to_string(),
                status_label(w.status),
                w.message.clone(),
            ]
        })
        .collect();
    let header = ["source", "location", "function", "alloc", "status", "message"].map(String::from);
    let mut widths = header.clone().map(|h| h.len());
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for r in std::iter::once(&header).chain(&rows) {
        let line: Vec<String> = r.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
