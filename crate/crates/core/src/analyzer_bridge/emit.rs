use crate::summaries::HintsFile;

/// Pattern used when no function has a role; no function name is empty.
pub const UNMATCHABLE_PATTERN: &str = "^$";

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn data_block(out: &mut String, extensible: &str, rows: &[String]) {
    out.push_str("  - addsTo:\n      pack: codeql/cpp-all\n");
    out.push_str(&format!("      extensible: {extensible}\n"));
    if rows.is_empty() {
        out.push_str("    data: []\n");
        return;
    }
    out.push_str("    data:\n");
    for r in rows {
        out.push_str(&format!("      - {r}\n"));
    }
}

/// CodeQL data-extension document registering every allocator and
/// deallocator in `hints`, rows sorted by name.
pub fn emit_codeql_extension(hints: &HintsFile) -> String {
    let mut allocs: Vec<&str> = hints.allocator_names();
    allocs.sort_unstable();
    allocs.dedup();
    let mut deallocs = hints.deallocator_entries();
    deallocs.sort_unstable();
    deallocs.dedup();
    let alloc_rows: Vec<String> =
        allocs.iter().map(|n| format!("[\"\", \"\", false, {}, \"\", \"\", \"\", true]", quoted(n))).collect();
    let free_rows: Vec<String> =
        deallocs.iter().map(|(n, i)| format!("[\"\", \"\", false, {}, \"{i}\"]", quoted(n))).collect();
    let mut out = String::from("extensions:\n");
    data_block(&mut out, "allocationFunctionModel", &alloc_rows);
    data_block(&mut out, "deallocationFunctionModel", &free_rows);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferPatterns {
    pub alloc: String,
    pub free: String,
}

fn alternation(mut names: Vec<&str>) -> String {
    names.sort_unstable();
    names.dedup();
    if names.is_empty() {
        return UNMATCHABLE_PATTERN.into();
    }
    let escaped: Vec<String> = names.iter().map(|n| regex::escape(n)).collect();
    format!("^({})$", escaped.join("|"))
}

/// Anchored alternations for Pulse's allocation and free model flags.
pub fn emit_infer_flags(hints: &HintsFile) -> InferPatterns {
    InferPatterns {
        alloc: alternation(hints.allocator_names()),
        free: alternation(hints.deallocator_entries().into_iter().map(|(n, _)| n).collect()),
    }
}

/// Two-line flag file: `alloc=<pattern>` and `free=<pattern>`.
pub fn infer_flags_file(p: &InferPatterns) -> String {
    format!("alloc={}\nfree={}\n", p.alloc, p.free)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summaries::FunctionSummary;

    #[test]
    fn empty_hints() {
        let h = HintsFile::default();
        let doc = emit_codeql_extension(&h);
        assert_eq!(doc.matches("data: []").count(), 2);
        let p = emit_infer_flags(&h);
        assert_eq!(p.alloc, UNMATCHABLE_PATTERN);
        let re = regex::Regex::new(&p.free).unwrap();
        assert!(!re.is_match("free") && !re.is_match("x"));
    }

    #[test]
    fn metacharacters_are_escaped() {
        let h = HintsFile::from_summaries([FunctionSummary::allocator("op+new")]);
        let p = emit_infer_flags(&h);
        assert_eq!(p.alloc, r"^(op\+new)$");
        let re = regex::Regex::new(&p.alloc).unwrap();
        assert!(re.is_match("op+new"));
        assert!(!re.is_match("oppnew") && !re.is_match("opnew") && !re.is_match("xop+new"));
    }

    #[test]
    fn single_allocator() {
        let h = HintsFile::from_summaries([FunctionSummary::allocator("f")]);
        assert_eq!(emit_infer_flags(&h).alloc, "^(f)$");
        assert_eq!(infer_flags_file(&emit_infer_flags(&h)), "alloc=^(f)$\nfree=^$\n");
    }

    #[test]
    fn stable_under_reordering() {
        let a = vec![FunctionSummary::allocator("b"), FunctionSummary::deallocator("z", 1), FunctionSummary::allocator("a")];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(emit_codeql_extension(&HintsFile::from_summaries(a)), emit_codeql_extension(&HintsFile::from_summaries(b)));
    }
}
