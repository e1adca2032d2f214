//! Model review of retained warnings, one function per call.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analyzer_bridge::{TriageNote, Warning, WarningStatus, LEAK_CATEGORY};
use crate::extraction::{same_file, Codebase, FunctionRecord};
use crate::jsonx;
use crate::llm_client::Completer;

const TEMPLATE: &str = include_str!("../../assets/triage_prompt.txt");
const ISSUES_HEADER: &str = "**Reported issues (numbered 1, 2, ... for reference):**\n";
const SOURCE_HEADER: &str = "**Function source:**\n";
const SOURCE_SLOT: &str = "{source with \"// <-- reported bug\" markers on bug lines}";
pub const MARKER: &str = "// <-- reported bug";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageVerdict {
    pub verdict: bool,
    pub confidence: f64,
    pub reason: String,
    pub bug_indices: Vec<usize>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TriageParseError {
    #[error("no JSON object with verdict, confidence, reason and bug_indices")]
    NoObject,
    #[error("field `{0}` has the wrong type or range")]
    BadField(&'static str),
    #[error("verdict is false but bug_indices is not empty")]
    IndicesOnFalse,
    #[error("bug index {index} outside 1..={issues}")]
    IndexOutOfRange { index: usize, issues: usize },
}

/// Function text with the first line number it occupies in its file.
#[derive(Debug, Clone, Copy)]
pub struct FunctionSource<'a> {
    pub text: &'a str,
    pub first_line: u32,
}

impl<'a> From<&'a FunctionRecord> for FunctionSource<'a> {
    fn from(r: &'a FunctionRecord) -> Self {
        FunctionSource { text: &r.body, first_line: r.span.start_line }
    }
}

impl FunctionSource<'_> {
    fn line(&self, file_line: u32) -> Option<&str> {
        let i = file_line.checked_sub(self.first_line)?;
        self.text.lines().nth(i as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriagePrompt {
    pub text: String,
    pub diagnostics: Vec<String>,
}

fn code_or_note(src: &FunctionSource, line: u32) -> String {
    src.line(line).map_or_else(|| "(outside the function source)".to_string(), |l| l.trim().to_string())
}

fn issue_block(i: usize, w: &Warning, src: &FunctionSource) -> String {
    let site = w.allocation_site.as_ref().map_or_else(|| "unknown".to_string(), |s| format!("{}:{}", s.file, s.start_line));
    let mut out = format!("  {i}. Line {}: {}\n    allocation_site: {site}\n", w.line, w.message);
    for (k, step) in w.trace.iter().enumerate() {
        out.push_str(&format!(
            "    trace step {}: {}:{} {}\n    code at that step:\n      {}\n",
            k + 1,
            step.span.file,
            step.span.start_line,
            step.text,
            code_or_note(src, step.span.start_line)
        ));
    }
    out.push_str(&format!("    code at line {}:\n      {}\n", w.line, code_or_note(src, w.line)));
    out
}

fn marked_source(warnings: &[Warning], src: &FunctionSource, diags: &mut Vec<String>) -> String {
    let n = src.text.lines().count() as u32;
    let mut marked = std::collections::BTreeSet::new();
    for w in warnings {
        match w.line.checked_sub(src.first_line) {
            Some(i) if i < n => {
                marked.insert(i);
            }
            _ => diags.push(format!(
                "{}: line {} lies outside lines {}..{}; marker omitted",
                w.function,
                w.line,
                src.first_line,
                src.first_line + n.saturating_sub(1)
            )),
        }
    }
    src.text
        .lines()
        .enumerate()
        .map(|(i, l)| if marked.contains(&(i as u32)) { format!("{l}  {MARKER}") } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Instantiates the review template for warnings that share one function.
pub fn build_triage_prompt(warnings: &[Warning], source: FunctionSource, project: &str) -> TriagePrompt {
    let mut diagnostics = Vec::new();
    let first = warnings.first();
    let (head, rest) = TEMPLATE.split_once(ISSUES_HEADER).expect("template has an issues section");
    let (_, tail) = rest.split_once(SOURCE_HEADER).expect("template has a source section");
    let category = first.map_or(LEAK_CATEGORY, |w| w.category.as_str());
    let mut text = head
        .replace("{project_name}", project)
        .replace("{file}", first.map_or("", |w| w.file.as_str()))
        .replace("{function}", first.map_or("", |w| w.function.as_str()))
        .replace("{category}", category);
    text.push_str(ISSUES_HEADER);
    for (i, w) in warnings.iter().enumerate() {
        text.push_str(&issue_block(i + 1, w, &source));
    }
    text.push('\n');
    text.push_str(SOURCE_HEADER);
    let src = marked_source(warnings, &source, &mut diagnostics);
    text.push_str(&tail.replace(SOURCE_SLOT, &src).replace("{bug_type_desc}", category));
    TriagePrompt { text, diagnostics }
}

const KEYS: [&str; 4] = ["verdict", "confidence", "reason", "bug_indices"];

/// Strict parse: the four keys must be present with their exact types.
pub fn parse_triage_verdict(response: &str) -> Result<TriageVerdict, TriageParseError> {
    let obj = jsonx::first_object_where(response, |m| KEYS.iter().all(|k| m.contains_key(*k)))
        .ok_or(TriageParseError::NoObject)?;
    let verdict = obj["verdict"].as_bool().ok_or(TriageParseError::BadField("verdict"))?;
    let confidence = obj["confidence"]
        .as_f64()
        .filter(|c| (0.0..=1.0).contains(c))
        .ok_or(TriageParseError::BadField("confidence"))?;
    let reason = obj["reason"].as_str().ok_or(TriageParseError::BadField("reason"))?.to_string();
    let bug_indices = obj["bug_indices"]
        .as_array()
        .ok_or(TriageParseError::BadField("bug_indices"))?
        .iter()
        .map(|v| v.as_u64().filter(|&i| i >= 1).map(|i| i as usize))
        .collect::<Option<Vec<usize>>>()
        .ok_or(TriageParseError::BadField("bug_indices"))?;
    if !verdict && !bug_indices.is_empty() {
        return Err(TriageParseError::IndicesOnFalse);
    }
    Ok(TriageVerdict { verdict, confidence, reason, bug_indices })
}

impl TriageVerdict {
    pub fn check_indices(&self, issues: usize) -> Result<(), TriageParseError> {
        match self.bug_indices.iter().find(|&&i| i > issues) {
            Some(&index) => Err(TriageParseError::IndexOutOfRange { index, issues }),
            None => Ok(()),
        }
    }
}

/// Sets final statuses for one function's warnings. A verdict that names
/// no index keeps every issue.
pub fn apply_verdict(warnings: &mut [Warning], verdict: Result<&TriageVerdict, String>) {
    let checked = verdict.and_then(|v| v.check_indices(warnings.len()).map(|_| v).map_err(|e| e.to_string()));
    match checked {
        Ok(v) => {
            for (i, w) in warnings.iter_mut().enumerate() {
                let real = v.verdict && (v.bug_indices.is_empty() || v.bug_indices.contains(&(i + 1)));
                w.advance(WarningStatus::Triaged { verdict: real });
                w.triage = Some(TriageNote { confidence: v.confidence, reason: v.reason.clone() });
            }
        }
        Err(e) => {
            for w in warnings.iter_mut() {
                w.advance(WarningStatus::Untriaged);
                w.triage = Some(TriageNote { confidence: 0.0, reason: format!("untriaged: {e}") });
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriageConfig {
    pub project: String,
    /// Functions whose warnings are dismissed without a model call.
    pub suppress: Vec<String>,
    pub max_in_flight: usize,
}

impl Default for TriageConfig {
    fn default() -> Self {
        TriageConfig { project: "project".into(), suppress: Vec::new(), max_in_flight: 4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriageOutcome {
    pub warnings: Vec<Warning>,
    pub diagnostics: Vec<String>,
}

fn triage_group(mut group: Vec<Warning>, record: Option<&FunctionRecord>, client: &dyn Completer, config: &TriageConfig) -> (Vec<Warning>, Vec<String>) {
    let mut diags = Vec::new();
    if group.first().is_some_and(|w| config.suppress.contains(&w.function)) {
        let v = TriageVerdict { verdict: false, confidence: 1.0, reason: "suppressed by project configuration".into(), bug_indices: vec![] };
        apply_verdict(&mut group, Ok(&v));
        return (group, diags);
    }
    let Some(record) = record else {
        apply_verdict(&mut group, Err("function source unavailable".into()));
        return (group, diags);
    };
    let prompt = build_triage_prompt(&group, record.into(), &config.project);
    diags.extend(prompt.diagnostics);
    match client.complete(&prompt.text) {
        Ok(resp) => {
            let parsed = parse_triage_verdict(&resp).map_err(|e| e.to_string());
            if let Err(e) = &parsed {
                diags.push(format!("{}: {e}", record.name));
            }
            apply_verdict(&mut group, parsed.as_ref().map_err(Clone::clone));
        }
        Err(e) => {
            diags.push(format!("{}: {e}", record.name));
            apply_verdict(&mut group, Err(e.to_string()));
        }
    }
    (group, diags)
}

/// Reviews every live warning, grouped by function. Discarded warnings
/// pass through unchanged.
pub fn triage_warnings(warnings: Vec<Warning>, codebase: &Codebase, client: &dyn Completer, config: &TriageConfig) -> TriageOutcome {
    let mut passthrough = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<Warning>> = BTreeMap::new();
    for w in warnings {
        if w.status.is_live() {
            groups.entry((w.file.clone(), w.function.clone())).or_default().push(w);
        } else {
            passthrough.push(w);
        }
    }
    let record_for = |file: &str, function: &str| {
        codebase
            .records
            .iter()
            .find(|r| r.name == function && same_file(&r.span.file, file))
            .or_else(|| codebase.get(function))
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.max_in_flight.max(1)).build().expect("thread pool");
    let done: Vec<(Vec<Warning>, Vec<String>)> = pool.install(|| {
        groups
            .into_par_iter()
            .map(|((file, function), g)| triage_group(g, record_for(&file, &function), client, config))
            .collect()
    });
    let mut out = TriageOutcome::default();
    for (ws, ds) in done {
        out.warnings.extend(ws);
        out.diagnostics.extend(ds);
    }
    out.warnings.extend(passthrough);
    out
}

/// Accepts a value in the verdict schema, for tests and tooling.
pub fn is_verdict_object(v: &Value) -> bool {
    v.as_object().is_some_and(|m| KEYS.iter().all(|k| m.contains_key(*k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer_bridge::{TraceStep, WarningSource};
    use crate::extraction::SourceSpan;
    use crate::llm_client::ClientError;

    const SRC: &str = "int f(void) {\n  char *p = malloc(4);\n  if (!g()) return -1;\n  free(p);\n  return 0;\n}";

    fn warning(line: u32) -> Warning {
        let mut w = Warning::new(WarningSource::CodeQL, "a.c", "f", line, "leak of p");
        w.allocation_site = Some(SourceSpan::line("a.c", 11));
        w.trace = vec![
            TraceStep { span: SourceSpan::line("a.c", 11), text: "allocated".into() },
            TraceStep { span: SourceSpan::line("a.c", 12), text: "returned".into() },
        ];
        w.status = WarningStatus::FeasibilityRetained;
        w
    }

    fn src() -> FunctionSource<'static> {
        FunctionSource { text: SRC, first_line: 10 }
    }

    #[test]
    fn one_issue_with_two_steps() {
        let p = build_triage_prompt(&[warning(12)], src(), "demo");
        assert!(p.diagnostics.is_empty());
        assert!(p.text.contains("**Project:** demo"));
        assert!(p.text.contains("  1. Line 12: leak of p\n    allocation_site: a.c:11\n"));
        assert!(p.text.contains("trace step 1: a.c:11 allocated\n    code at that step:\n      char *p = malloc(4);"));
        assert!(p.text.contains("trace step 2: a.c:12"));
        assert_eq!(p.text.matches(MARKER).count(), 1);
        assert!(!p.text.contains("{source with"));
        assert!(p.text.contains("  if (!g()) return -1;  // <-- reported bug"));
        assert!(p.text.contains("actually have a memory leak?"));
    }

    #[test]
    fn two_issues_two_markers() {
        let p = build_triage_prompt(&[warning(12), warning(14)], src(), "demo");
        assert!(p.text.contains("  1. Line 12") && p.text.contains("  2. Line 14"));
        assert_eq!(p.text.matches(MARKER).count(), 2);
    }

    #[test]
    fn out_of_range_line_keeps_issue_and_reports() {
        let p = build_triage_prompt(&[warning(99)], src(), "demo");
        assert!(p.text.contains("  1. Line 99"));
        assert_eq!(p.text.matches(MARKER).count(), 0);
        assert_eq!(p.diagnostics.len(), 1);
    }

    #[test]
    fn parse_examples() {
        let v = parse_triage_verdict(r#"{"verdict": true, "confidence": 0.9, "reason": "leak on error path", "bug_indices": [1]}"#).unwrap();
        assert!(v.verdict);
        assert_eq!(v.bug_indices, vec![1]);
        let v = parse_triage_verdict("```json\n{\"verdict\": false, \"confidence\": 0.8, \"reason\": \"callee frees\", \"bug_indices\": []}\n```").unwrap();
        assert!(!v.verdict);
        assert_eq!(parse_triage_verdict(r#"{"verdict": true, "bug_indices": [1]}"#), Err(TriageParseError::NoObject));
        let bad = r#"{"verdict": "yes", "confidence": 0.5, "reason": "r", "bug_indices": []}"#;
        assert_eq!(parse_triage_verdict(bad), Err(TriageParseError::BadField("verdict")));
        let bad = r#"{"verdict": true, "confidence": 1.5, "reason": "r", "bug_indices": []}"#;
        assert_eq!(parse_triage_verdict(bad), Err(TriageParseError::BadField("confidence")));
        let bad = r#"{"verdict": false, "confidence": 0.5, "reason": "r", "bug_indices": [1]}"#;
        assert_eq!(parse_triage_verdict(bad), Err(TriageParseError::IndicesOnFalse));
    }

    #[test]
    fn apply_partitions() {
        let mut ws = vec![warning(12), warning(14)];
        let v = TriageVerdict { verdict: true, confidence: 0.7, reason: "r".into(), bug_indices: vec![2] };
        apply_verdict(&mut ws, Ok(&v));
        assert_eq!(ws[0].status, WarningStatus::Triaged { verdict: false });
        assert_eq!(ws[1].status, WarningStatus::Triaged { verdict: true });

        let mut ws = vec![warning(12)];
        let v = TriageVerdict { verdict: true, confidence: 0.7, reason: "r".into(), bug_indices: vec![3] };
        apply_verdict(&mut ws, Ok(&v));
        assert_eq!(ws[0].status, WarningStatus::Untriaged);
    }

    struct Fixed(Result<&'static str, ()>);

    impl Completer for Fixed {
        fn model_id(&self) -> &str {
            "fixed"
        }

        fn complete(&self, _: &str) -> Result<String, ClientError> {
            self.0.map(str::to_string).map_err(|_| ClientError::Permanent("down".into()))
        }
    }

    #[test]
    fn end_to_end_grouping() {
        let (rs, _, _) = crate::extraction::parse_source("a.c", &format!("{}{SRC}\n", "\n".repeat(9)), crate::Language::C);
        let cb = Codebase::from_records("/", rs, Default::default());
        let mut discarded = warning(12);
        discarded.status = WarningStatus::FeasibilityDiscarded;
        let ok = Fixed(Ok(r#"{"verdict": true, "confidence": 0.9, "reason": "r", "bug_indices": []}"#));
        let out = triage_warnings(vec![warning(12), discarded.clone()], &cb, &ok, &TriageConfig::default());
        assert_eq!(out.warnings[0].status, WarningStatus::Triaged { verdict: true });
        assert_eq!(out.warnings[1].status, WarningStatus::FeasibilityDiscarded);

        let out = triage_warnings(vec![warning(12)], &cb, &Fixed(Err(())), &TriageConfig::default());
        assert_eq!(out.warnings[0].status, WarningStatus::Untriaged);
        let cfg = TriageConfig { suppress: vec!["f".into()], ..Default::default() };
        let out = triage_warnings(vec![warning(12)], &cb, &Fixed(Err(())), &cfg);
        assert_eq!(out.warnings[0].status, WarningStatus::Triaged { verdict: false });
    }
}
