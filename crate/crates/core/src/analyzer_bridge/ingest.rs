use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{TraceStep, Warning, WarningSource};
use crate::extraction::SourceSpan;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleAllowlist {
    pub codeql: Vec<String>,
    pub infer: Vec<String>,
}

impl Default for RuleAllowlist {
    fn default() -> Self {
        RuleAllowlist {
            codeql: ["cpp/memory-never-freed", "cpp/memory-may-not-be-freed"].map(String::from).to_vec(),
            infer: ["MEMORY_LEAK", "MEMORY_LEAK_C", "MEMORY_LEAK_CPP", "PULSE_MEMORY_LEAK", "PULSE_MEMORY_LEAK_C", "PULSE_MEMORY_LEAK_CPP"]
                .map(String::from)
                .to_vec(),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed document at line {line}, column {column}: {message}")]
    Malformed { line: usize, column: usize, message: String },
    #[error("unexpected structure at {at}: {message}")]
    Schema { at: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ingested {
    pub warnings: Vec<Warning>,
    /// Results whose rule is not a memory-leak rule.
    pub skipped: usize,
    pub diagnostics: Vec<String>,
}

fn parse_json(text: &str) -> Result<Value, IngestError> {
    serde_json::from_str(text).map_err(|e| IngestError::Malformed { line: e.line(), column: e.column(), message: e.to_string() })
}

fn read(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

fn clean_uri(uri: &str) -> String {
    let s = uri.strip_prefix("file://").unwrap_or(uri);
    s.strip_prefix("./").unwrap_or(s).to_string()
}

fn str_at<'a>(v: &'a Value, ptr: &str) -> Option<&'a str> {
    v.pointer(ptr).and_then(Value::as_str)
}

fn line_at(v: &Value, ptr: &str) -> Option<u32> {
    v.pointer(ptr).and_then(Value::as_u64).map(|l| l.max(1) as u32)
}

fn sarif_location(loc: &Value) -> Option<SourceSpan> {
    let file = clean_uri(str_at(loc, "/physicalLocation/artifactLocation/uri")?);
    let start = line_at(loc, "/physicalLocation/region/startLine").unwrap_or(1);
    let end = line_at(loc, "/physicalLocation/region/endLine").unwrap_or(start).max(start);
    Some(SourceSpan::new(file, start, end))
}

fn array<'a>(v: &'a Value, key: &str, at: &str) -> Result<&'a [Value], IngestError> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(&[]),
        Some(Value::Array(a)) => Ok(a),
        Some(_) => Err(IngestError::Schema { at: format!("{at}.{key}"), message: "expected an array".into() }),
    }
}

/// Reads a SARIF results document.
pub fn parse_codeql_results(text: &str, allow: &RuleAllowlist) -> Result<Ingested, IngestError> {
    let doc = parse_json(text)?;
    if !doc.is_object() {
        return Err(IngestError::Schema { at: "$".into(), message: "expected a SARIF log object".into() });
    }
    let mut out = Ingested::default();
    for (ri, run) in array(&doc, "runs", "$")?.iter().enumerate() {
        for (i, result) in array(run, "results", &format!("$.runs[{ri}]"))?.iter().enumerate() {
            let at = format!("$.runs[{ri}].results[{i}]");
            let rule = str_at(result, "/ruleId").or_else(|| str_at(result, "/rule/id")).unwrap_or("");
            if !allow.codeql.iter().any(|r| r == rule) {
                out.skipped += 1;
                continue;
            }
            let Some(primary) = result.pointer("/locations/0").and_then(sarif_location) else {
                out.diagnostics.push(format!("{at}: no physical location, result ignored"));
                continue;
            };
            let function = str_at(result, "/locations/0/logicalLocations/0/fullyQualifiedName")
                .or_else(|| str_at(result, "/locations/0/logicalLocations/0/name"))
                .unwrap_or("");
            let message = str_at(result, "/message/text").unwrap_or("memory leak");
            let mut w = Warning::new(WarningSource::CodeQL, primary.file.clone(), function, primary.start_line, message);
            w.rule_id = Some(rule.to_string());
            let steps = result.pointer("/codeFlows/0/threadFlows/0/locations").and_then(Value::as_array);
            for step in steps.into_iter().flatten() {
                let Some(span) = step.get("location").and_then(sarif_location) else { continue };
                let text = str_at(step, "/location/message/text").unwrap_or("").to_string();
                w.trace.push(TraceStep { span, text });
            }
            w.allocation_site = w
                .trace
                .first()
                .map(|s| s.span.clone())
                .or_else(|| result.pointer("/relatedLocations/0").and_then(sarif_location));
            out.warnings.push(w);
        }
    }
    if out.skipped > 0 {
        out.diagnostics.push(format!("skipped {} results from non-leak rules", out.skipped));
    }
    Ok(out)
}

/// Reads an Infer `report.json` issue list.
pub fn parse_infer_results(text: &str, allow: &RuleAllowlist) -> Result<Ingested, IngestError> {
    let doc = parse_json(text)?;
    let issues = match &doc {
        Value::Array(a) => a.as_slice(),
        Value::Object(_) => array(&doc, "issues", "$")?,
        _ => return Err(IngestError::Schema { at: "$".into(), message: "expected an issue array".into() }),
    };
    let mut out = Ingested::default();
    for (i, issue) in issues.iter().enumerate() {
        let bug_type = str_at(issue, "/bug_type").unwrap_or("");
        if !allow.infer.iter().any(|r| r == bug_type) {
            out.skipped += 1;
            continue;
        }
        let (Some(file), Some(line)) = (str_at(issue, "/file"), line_at(issue, "/line")) else {
            out.diagnostics.push(format!("$[{i}]: missing file or line, issue ignored"));
            continue;
        };
        let procedure = str_at(issue, "/procedure").unwrap_or("");
        let function = procedure.split('(').next().unwrap_or("").to_string();
        let message = str_at(issue, "/qualifier").unwrap_or("memory leak");
        let mut w = Warning::new(WarningSource::Infer, clean_uri(file), function, line, message);
        w.rule_id = Some(bug_type.to_string());
        for step in issue.get("bug_trace").and_then(Value::as_array).into_iter().flatten() {
            let step_file = str_at(step, "/filename").map(clean_uri).unwrap_or_else(|| w.file.clone());
            let Some(l) = line_at(step, "/line_number") else { continue };
            let text = str_at(step, "/description").unwrap_or("").to_string();
            w.trace.push(TraceStep { span: SourceSpan::line(step_file, l), text });
        }
        w.allocation_site = w
            .trace
            .iter()
            .find(|s| s.text.to_ascii_lowercase().contains("alloc"))
            .or(w.trace.first())
            .map(|s| s.span.clone());
        out.warnings.push(w);
    }
    if out.skipped > 0 {
        out.diagnostics.push(format!("skipped {} issues of other bug types", out.skipped));
    }
    Ok(out)
}

pub fn ingest_codeql_results(path: &Path, allow: &RuleAllowlist) -> Result<Ingested, IngestError> {
    parse_codeql_results(&read(path)?, allow)
}

pub fn ingest_infer_results(path: &Path, allow: &RuleAllowlist) -> Result<Ingested, IngestError> {
    parse_infer_results(&read(path)?, allow)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SARIF: &str = r#"{"version":"2.1.0","runs":[{"tool":{"driver":{"name":"CodeQL"}},"results":[
      {"ruleId":"cpp/memory-never-freed","message":{"text":"leak of cert"},
       "locations":[{"physicalLocation":{"artifactLocation":{"uri":"src/a.c"},"region":{"startLine":12}},
                     "logicalLocations":[{"name":"set_cert"}]}],
       "codeFlows":[{"threadFlows":[{"locations":[
          {"location":{"physicalLocation":{"artifactLocation":{"uri":"src/a.c"},"region":{"startLine":5}},"message":{"text":"allocated"}}},
          {"location":{"physicalLocation":{"artifactLocation":{"uri":"src/a.c"},"region":{"startLine":8}},"message":{"text":"branch"}}},
          {"location":{"physicalLocation":{"artifactLocation":{"uri":"src/a.c"},"region":{"startLine":12}},"message":{"text":"return"}}}]}]}],
       "extra":{"ignored":true}},
      {"ruleId":"cpp/unused-local-variable","message":{"text":"x"},
       "locations":[{"physicalLocation":{"artifactLocation":{"uri":"src/a.c"},"region":{"startLine":3}}}]}]}]}"#;

    #[test]
    fn sarif_three_step_path() {
        let got = parse_codeql_results(SARIF, &RuleAllowlist::default()).unwrap();
        assert_eq!(got.warnings.len(), 1);
        assert_eq!(got.skipped, 1);
        assert_eq!(got.diagnostics.len(), 1);
        let w = &got.warnings[0];
        assert_eq!((w.file.as_str(), w.function.as_str(), w.line), ("src/a.c", "set_cert", 12));
        let lines: Vec<u32> = w.trace.iter().map(|s| s.span.start_line).collect();
        assert_eq!(lines, vec![5, 8, 12]);
        assert_eq!(w.alloc_line(), 5);
    }

    #[test]
    fn empty_and_malformed() {
        assert!(parse_codeql_results(r#"{"runs":[]}"#, &RuleAllowlist::default()).unwrap().warnings.is_empty());
        assert!(parse_codeql_results(r#"{}"#, &RuleAllowlist::default()).unwrap().warnings.is_empty());
        match parse_codeql_results("{\n  \"runs\": [,]}", &RuleAllowlist::default()) {
            Err(IngestError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infer_issue_list() {
        let text = r#"[{"bug_type":"MEMORY_LEAK_C","qualifier":"memory dynamically allocated by `malloc` is not freed","file":"b.c","line":9,
            "procedure":"f","bug_trace":[{"filename":"b.c","line_number":4,"description":"allocated by call to `malloc`","level":0},
            {"filename":"b.c","line_number":9,"description":"return","level":0}]},
            {"bug_type":"NULLPTR_DEREFERENCE","file":"b.c","line":2,"procedure":"g"}]"#;
        let got = parse_infer_results(text, &RuleAllowlist::default()).unwrap();
        assert_eq!(got.warnings.len(), 1);
        assert_eq!(got.skipped, 1);
        assert_eq!(got.warnings[0].alloc_line(), 4);
        assert_eq!(got.warnings[0].trace.len(), 2);
    }
}
