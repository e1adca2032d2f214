use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Manifest, Stage};
use crate::analyzer_bridge::{render_table, Warning, WarningStatus};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub extracted: usize,
    pub candidates: usize,
    pub summaries: usize,
    pub validated: usize,
    pub warnings: usize,
    pub after_feasibility: usize,
    pub after_triage: usize,
    pub untriaged: usize,
    pub llm_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub project: String,
    pub counters: Counters,
    /// Stage whose warnings the findings come from.
    pub findings_stage: Option<Stage>,
    pub findings: Vec<Warning>,
    pub status_counts: BTreeMap<String, usize>,
}

fn status_key(s: WarningStatus) -> String {
    match s {
        WarningStatus::Triaged { verdict } => format!("triaged_{verdict}"),
        other => format!("{other:?}").to_lowercase(),
    }
}

pub fn build_report(project: &str, m: &Manifest, latest: Option<(Stage, Vec<Warning>)>) -> Report {
    let c = |s, k| m.counter(s, k).unwrap_or(0);
    let counters = Counters {
        extracted: c(Stage::Extract, "extracted"),
        candidates: c(Stage::Extract, "candidates"),
        summaries: c(Stage::Summarize, "summaries"),
        validated: c(Stage::Validate, "validated"),
        warnings: c(Stage::Filter, "warnings"),
        after_feasibility: c(Stage::Filter, "after_feasibility"),
        after_triage: c(Stage::Triage, "after_triage"),
        untriaged: c(Stage::Triage, "untriaged"),
        llm_failures: c(Stage::Summarize, "llm_failures"),
    };
    let (stage, warnings) = match latest {
        Some((s, w)) => (Some(s), w),
        None => (None, Vec::new()),
    };
    let mut status_counts = BTreeMap::new();
    for w in &warnings {
        *status_counts.entry(status_key(w.status)).or_insert(0) += 1;
    }
    let findings = warnings.into_iter().filter(|w| w.status.is_live()).collect();
    Report { project: project.to_string(), counters, findings_stage: stage, findings, status_counts }
}

pub fn render_report(r: &Report) -> String {
    let c = &r.counters;
    let mut out = format!("leakscope report: {}\n\n", r.project);
    out.push_str("summary generation\n");
    out.push_str(&format!(
        "  extracted {}  ->  candidates {}  ->  summaries {}  ->  validated {}\n",
        c.extracted, c.candidates, c.summaries, c.validated
    ));
    out.push_str("warning reduction\n");
    out.push_str(&format!(
        "  warnings {}  ->  after feasibility {}  ->  after triage {} (untriaged {})\n",
        c.warnings, c.after_feasibility, c.after_triage, c.untriaged
    ));
    if c.llm_failures > 0 {
        out.push_str(&format!("  model batches failed: {}\n", c.llm_failures));
    }
    let stage = r.findings_stage.map_or_else(|| "none".to_string(), |s| s.to_string());
    out.push_str(&format!("\nfindings ({} from {stage})\n", r.findings.len()));
    if !r.findings.is_empty() {
        out.push_str(&render_table(&r.findings));
    }
    out
}
