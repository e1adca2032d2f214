use std::collections::BTreeSet;

use serde_json::Value;

use super::{FunctionSummary, MmRole, OwnershipTarget, Provenance};
use crate::extraction::{Codebase, FunctionRecord, RecordKind};
use crate::jsonx;

pub const MAX_CALLEES: usize = 5;
pub const BATCH_SIZE: usize = 20;

const TEMPLATE: &str = include_str!("../../assets/classify_prompt.txt");

/// Up to five callee records, in first-occurrence order within the body.
pub fn select_callees<'a>(record: &FunctionRecord, codebase: &'a Codebase) -> Vec<&'a FunctionRecord> {
    record
        .callees
        .iter()
        .filter(|c| **c != record.name)
        .filter_map(|c| codebase.get(c))
        .take(MAX_CALLEES)
        .collect()
}

fn parameter_text(record: &FunctionRecord) -> String {
    if record.kind == RecordKind::Macro {
        return record.params.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join(", ");
    }
    if record.params.is_empty() {
        return "void".into();
    }
    record
        .params
        .iter()
        .map(|p| {
            if p.ty == "..." || p.name.starts_with("__arg") {
                p.ty.clone()
            } else if p.ty.ends_with('*') || p.ty.ends_with('&') {
                format!("{}{}", p.ty, p.name)
            } else {
                format!("{} {}", p.ty, p.name)
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn context_section(callees: &[&FunctionRecord]) -> String {
    if callees.is_empty() {
        return String::new();
    }
    let mut out = String::from("\n## Context: direct callees\n");
    for c in callees.iter().take(MAX_CALLEES) {
        out.push_str(&format!("\n### `{}`\n```c\n{}\n```\n", c.name, c.body));
    }
    out
}

pub fn build_classification_prompt(record: &FunctionRecord, callee_records: &[&FunctionRecord]) -> String {
    let return_type = if record.kind == RecordKind::Macro { "macro" } else { record.return_type.as_str() };
    TEMPLATE
        .replace("{func_name}", &record.name)
        .replace("{return_type}", return_type)
        .replace("{parameters}", &parameter_text(record))
        .replace("{code}", &record.body)
        .replace("{context}", &context_section(callee_records))
}

/// Concatenates per-function prompts for one combined model call.
pub fn build_batch_prompt(items: &[(&FunctionRecord, Vec<&FunctionRecord>)]) -> String {
    if items.len() == 1 {
        return build_classification_prompt(items[0].0, &items[0].1);
    }
    let n = items.len();
    let mut out = String::new();
    for (i, (record, callees)) in items.iter().enumerate() {
        out.push_str(&format!("===== FUNCTION {} of {n}: {} =====\n", i + 1, record.name));
        out.push_str(&build_classification_prompt(record, callees));
        out.push('\n');
    }
    out.push_str(&format!(
        "===== END OF BATCH =====\nReturn ONE JSON object whose `hints` array covers all {n} functions above; use each function's own name in `name`.\n"
    ));
    out
}

/// Extracts summaries from a model response. Entries that break the schema,
/// the role/target pairing, or name an unexpected function are dropped with
/// a diagnostic.
pub fn parse_hints_response(response: &str, expected_names: &BTreeSet<String>) -> (Vec<FunctionSummary>, Vec<String>) {
    let mut diags = Vec::new();
    let Some(obj) = jsonx::first_object_where(response, |m| m.get("hints").is_some_and(Value::is_array)) else {
        diags.push("no JSON object with a `hints` array in response".to_string());
        return (Vec::new(), diags);
    };
    let mut out = Vec::new();
    for (i, entry) in obj["hints"].as_array().into_iter().flatten().enumerate() {
        let field = |k: &str| entry.get(k).and_then(Value::as_str);
        let (Some(name), Some(role), Some(target)) = (field("name"), field("role"), field("target")) else {
            diags.push(format!("hint {i}: missing or non-string name/role/target"));
            continue;
        };
        if !expected_names.contains(name) {
            diags.push(format!("hint {i}: unexpected function {name:?}"));
            continue;
        }
        let role: MmRole = match role.parse() {
            Ok(r) => r,
            Err(e) => {
                diags.push(format!("hint {i}: {e}"));
                continue;
            }
        };
        let target: OwnershipTarget = match target.parse() {
            Ok(t) => t,
            Err(e) => {
                diags.push(format!("hint {i}: {e}"));
                continue;
            }
        };
        match FunctionSummary::new(name, role, target, Provenance::ModelGenerated) {
            Ok(s) => out.push(s),
            Err(e) => diags.push(format!("hint {i} ({name}): {e}")),
        }
    }
    (out, diags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::{parse_source, Language, PointerAliasTable};

    fn names(ns: &[&str]) -> BTreeSet<String> {
        ns.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_the_three_example_shapes() {
        let (s, d) = parse_hints_response(
            r#"{"hints":[{"name":"freerdp_certificate_clone","role":"Allocator","target":"return"}]}"#,
            &names(&["freerdp_certificate_clone"]),
        );
        assert_eq!(s, vec![FunctionSummary::allocator("freerdp_certificate_clone")]);
        assert!(d.is_empty());

        let (s, d) = parse_hints_response(r#"{"hints":[]}"#, &names(&[]));
        assert!(s.is_empty() && d.is_empty());

        let (s, d) = parse_hints_response(r#"{"hints":[{"name":"f","role":"Allocator","target":"arg0"}]}"#, &names(&["f"]));
        assert!(s.is_empty());
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn drops_unknown_roles_and_names() {
        let resp = r#"Here you go: {"hints":[
            {"name":"f","role":"Reallocator","target":"return"},
            {"name":"g","role":"Deallocator","target":"arg1"},
            {"name":"h","role":"Deallocator","target":"arg0"}]}"#;
        let (s, d) = parse_hints_response(resp, &names(&["f", "g"]));
        assert_eq!(s, vec![FunctionSummary::deallocator("g", 1)]);
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn garbage_yields_diagnostic_only() {
        let (s, d) = parse_hints_response("I cannot help with that", &names(&["f"]));
        assert!(s.is_empty());
        assert_eq!(d.len(), 1);
    }

    fn codebase(src: &str) -> Codebase {
        let (rs, _, _) = parse_source("x.c", src, Language::C);
        Codebase::from_records("/", rs, PointerAliasTable::default())
    }

    #[test]
    fn prompt_fills_every_placeholder() {
        let cb = codebase("T *mk(void){ return calloc(1, 4); }\nT *cl(const T *s){ T *c = mk(); return c; }\n");
        let r = cb.get("cl").unwrap();
        let p = build_classification_prompt(r, &select_callees(r, &cb));
        for ph in ["{func_name}", "{return_type}", "{parameters}", "{code}", "{context}"] {
            assert!(!p.contains(ph), "{ph}");
        }
        assert!(p.contains("**Function:** `cl`"));
        assert!(p.contains("**Parameters:** `const T *s`"));
        assert!(p.contains("T *mk(void){ return calloc(1, 4); }"));
        assert!(p.contains(r#"{"name": "cl", "role": "Allocator", "target": "return"}"#));
    }

    #[test]
    fn at_most_five_callees_in_body_order() {
        let mut src = String::new();
        for i in 0..8 {
            src.push_str(&format!("void c{i}(void){{}}\n"));
        }
        src.push_str("void *top(void){ c7(); c1(); c6(); c0(); c5(); c2(); c4(); c3(); return 0; }\n");
        let cb = codebase(&src);
        let r = cb.get("top").unwrap();
        let chosen: Vec<&str> = select_callees(r, &cb).iter().map(|c| c.name.as_str()).collect();
        assert_eq!(chosen, vec!["c7", "c1", "c6", "c0", "c5"]);
        let a = build_classification_prompt(r, &select_callees(r, &cb));
        let b = build_classification_prompt(r, &select_callees(r, &cb));
        assert_eq!(a, b);
        assert_eq!(a.matches("### `").count(), 5);
    }

    #[test]
    fn empty_context_when_no_callees() {
        let cb = codebase("int *z(void){ return 0; }\n");
        let r = cb.get("z").unwrap();
        let p = build_classification_prompt(r, &[]);
        assert!(!p.contains("## Context"));
        assert!(p.contains("```\n\n\n## Semantic Categories"));
    }
}
