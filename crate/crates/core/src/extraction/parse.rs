use std::sync::OnceLock;

use regex::Regex;
use tree_sitter::Node;

use super::{Diagnostic, FileExtract, FunctionRecord, Param, RecordKind, SourceSpan};
use crate::syntax::{self, named_children, squash_whitespace, text, Language};

pub(crate) fn extract_file(rel: &str, source: &str, language: Language) -> FileExtract {
    let mut out = FileExtract::default();
    let Some(tree) = syntax::parse(source, language) else {
        out.diagnostics.push(Diagnostic { file: rel.into(), line: None, message: "skipped: parser gave no tree".into() });
        return out;
    };
    let root = tree.root_node();
    if root.has_error() {
        out.diagnostics.push(Diagnostic {
            file: rel.into(),
            line: first_error_line(root),
            message: "syntax errors; extraction continues around them".into(),
        });
    }
    walk(root, rel, source, language, &mut out);
    out
}

fn first_error_line(node: Node<'_>) -> Option<u32> {
    if node.is_error() || node.is_missing() {
        return Some(node.start_position().row as u32 + 1);
    }
    let mut cursor = node.walk();
    let found = node.children(&mut cursor).filter(|c| c.has_error()).find_map(first_error_line);
    found
}

fn walk(node: Node<'_>, rel: &str, src: &str, language: Language, out: &mut FileExtract) {
    match node.kind() {
        "function_definition" => {
            match function_record(node, rel, src, language) {
                Some(r) => out.records.push(r),
                None => out.diagnostics.push(Diagnostic {
                    file: rel.into(),
                    line: Some(node.start_position().row as u32 + 1),
                    message: "function definition without a recognizable declarator".into(),
                }),
            }
            return;
        }
        "preproc_function_def" => {
            if let Some(r) = macro_record(node, rel, src, language) {
                out.records.push(r);
            }
            return;
        }
        "type_definition" => {
            typedefs(node, src, out);
            return;
        }
        "alias_declaration" => {
            if let (Some(name), Some(ty)) = (node.child_by_field_name("name"), node.child_by_field_name("type")) {
                let under = squash_whitespace(text(ty, src));
                let direct = under.contains('*');
                out.typedefs.push((text(name, src).to_string(), under, direct));
            }
            return;
        }
        _ => {}
    }
    for child in named_children(node) {
        walk(child, rel, src, language, out);
    }
}

pub(crate) fn span_of(node: Node<'_>, file: &str, line_offset: u32) -> SourceSpan {
    let start = node.start_position();
    let end = node.end_position();
    let mut end_row = end.row;
    if end.column == 0 && end_row > start.row {
        end_row -= 1;
    }
    SourceSpan::new(file, start.row as u32 + line_offset, end_row as u32 + line_offset)
}

const DECL_WRAPPERS: &[&str] = &["pointer_declarator", "reference_declarator", "parenthesized_declarator", "attributed_declarator"];

/// Walks down declarator wrappers to the function declarator, counting
/// pointer and reference levels on the way.
fn find_function_declarator(mut node: Node<'_>) -> Option<(Node<'_>, String)> {
    let mut suffix = String::new();
    loop {
        match node.kind() {
            "function_declarator" => return Some((node, suffix)),
            k if DECL_WRAPPERS.contains(&k) => {
                if k == "pointer_declarator" {
                    suffix.push('*');
                } else if k == "reference_declarator" {
                    suffix.push('&');
                }
                node = node.child_by_field_name("declarator").or_else(|| node.named_child(0))?;
            }
            _ => return None,
        }
    }
}

const NON_TYPE_PREFIX: &[&str] = &[
    "storage_class_specifier",
    "attribute_specifier",
    "attribute_declaration",
    "ms_declspec_modifier",
    "virtual",
    "explicit",
    "comment",
];

fn function_record(node: Node<'_>, rel: &str, src: &str, language: Language) -> Option<FunctionRecord> {
    let declarator = node.child_by_field_name("declarator")?;
    let (fd, stars) = find_function_declarator(declarator)?;
    let name = squash_whitespace(text(fd.child_by_field_name("declarator")?, src));
    if name.is_empty() {
        return None;
    }
    let mut base = Vec::new();
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        if child.id() == declarator.id() {
            break;
        }
        if NON_TYPE_PREFIX.contains(&child.kind()) || child.kind() == "template_parameter_list" {
            continue;
        }
        base.push(squash_whitespace(text(child, src)));
    }
    let mut return_type = base.join(" ");
    if !stars.is_empty() {
        return_type = if return_type.is_empty() { stars } else { format!("{return_type} {stars}") };
    }
    let params = fd.child_by_field_name("parameters").map(|p| parameters(p, src)).unwrap_or_default();
    let mut callees = node.child_by_field_name("body").map(|b| call_names(b, src)).unwrap_or_default();
    // Calls through parameters or locals are function-pointer calls.
    let locals = node.child_by_field_name("body").map(|b| local_names(b, src)).unwrap_or_default();
    callees.retain(|c| !params.iter().any(|p| &p.name == c) && !locals.contains(c));
    Some(FunctionRecord {
        name,
        return_type,
        params,
        body: text(node, src).to_string(),
        callees,
        kind: RecordKind::Function,
        span: span_of(node, rel, 1),
        language,
    })
}

/// Innermost identifier of a declarator.
pub(crate) fn declarator_name<'t>(mut node: Node<'t>) -> Option<Node<'t>> {
    loop {
        match node.kind() {
            "identifier" | "field_identifier" | "type_identifier" | "qualified_identifier" | "operator_name"
            | "destructor_name" => return Some(node),
            _ => {
                node = node.child_by_field_name("declarator").or_else(|| node.named_child(0))?;
            }
        }
    }
}

fn collapse_spaces(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").replace("( ", "(").replace(" )", ")")
}

fn parameters(list: Node<'_>, src: &str) -> Vec<Param> {
    let mut out = Vec::new();
    for (i, p) in named_children(list).into_iter().enumerate() {
        match p.kind() {
            "parameter_declaration" | "optional_parameter_declaration" | "variadic_parameter_declaration" => {}
            "variadic_parameter" => {
                out.push(Param { name: "...".into(), ty: "...".into() });
                continue;
            }
            _ => continue,
        }
        let end = p.child_by_field_name("default_value").map(|d| d.start_byte()).unwrap_or(p.end_byte());
        let full = &src[p.start_byte()..end];
        let full = full.trim_end().trim_end_matches('=');
        let name_node = p.child_by_field_name("declarator").and_then(declarator_name);
        match name_node {
            Some(n) => {
                let (s, e) = (n.start_byte() - p.start_byte(), n.end_byte() - p.start_byte());
                let ty = format!("{}{}", &full[..s.min(full.len())], &full[e.min(full.len())..]);
                out.push(Param { name: text(n, src).to_string(), ty: collapse_spaces(&ty) });
            }
            None => {
                let ty = collapse_spaces(full);
                if ty == "void" && list.named_child_count() == 1 {
                    continue;
                }
                out.push(Param { name: format!("__arg{i}"), ty });
            }
        }
    }
    out
}

/// Identifiers declared anywhere inside `body`.
pub(crate) fn local_names(body: Node<'_>, src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![body];
    while let Some(n) = stack.pop() {
        if n.kind() == "declaration" {
            let mut cursor = n.walk();
            let decls: Vec<Node<'_>> = n.children_by_field_name("declarator", &mut cursor).collect();
            for d in decls {
                if let Some(name) = declarator_name(d) {
                    out.push(text(name, src).to_string());
                }
            }
        }
        stack.extend(named_children(n));
    }
    out
}

/// Direct callee names in first-occurrence order.
pub(crate) fn call_names(body: Node<'_>, src: &str) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    let mut stack = vec![body];
    let mut ordered = Vec::new();
    while let Some(n) = stack.pop() {
        if n.kind() == "call_expression" {
            if let Some(f) = n.child_by_field_name("function") {
                if let Some(name) = direct_callee(f, src) {
                    ordered.push((n.start_byte(), name));
                }
            }
        }
        let mut kids = named_children(n);
        kids.reverse();
        stack.extend(kids);
    }
    ordered.sort_by_key(|(b, _)| *b);
    for (_, name) in ordered {
        if !names.contains(&name) {
            names.push(name);
        }
    }
    names
}

pub(crate) fn direct_callee(f: Node<'_>, src: &str) -> Option<String> {
    match f.kind() {
        "identifier" | "qualified_identifier" => Some(squash_whitespace(text(f, src))),
        "template_function" => f.child_by_field_name("name").map(|n| squash_whitespace(text(n, src))),
        "parenthesized_expression" if f.named_child_count() == 1 => {
            let inner = f.named_child(0)?;
            if inner.kind() == "identifier" {
                Some(text(inner, src).to_string())
            } else {
                None
            }
        }
        _ => None,
    }
}

fn macro_call_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"([A-Za-z_][A-Za-z0-9_]*)\s*\(").expect("static regex"))
}

fn string_literal_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*'"#).expect("static regex"))
}

const NOT_CALLS: &[&str] = &[
    "if", "while", "for", "switch", "return", "sizeof", "do", "defined", "alignof", "_Alignof", "typeof", "__typeof__",
    "__attribute__", "void", "int", "char", "long", "unsigned", "signed", "short", "float", "double", "const",
];

fn macro_record(node: Node<'_>, rel: &str, src: &str, language: Language) -> Option<FunctionRecord> {
    let name = text(node.child_by_field_name("name")?, src).to_string();
    let mut params = Vec::new();
    if let Some(list) = node.child_by_field_name("parameters") {
        let mut cursor = list.walk();
        for child in list.children(&mut cursor) {
            match child.kind() {
                "identifier" => params.push(Param { name: text(child, src).to_string(), ty: String::new() }),
                "..." => params.push(Param { name: "__VA_ARGS__".into(), ty: "...".into() }),
                _ => {}
            }
        }
    }
    let value = node.child_by_field_name("value").map(|v| text(v, src)).unwrap_or("");
    let scrubbed = string_literal_regex().replace_all(value, "\"\"");
    let mut callees: Vec<String> = Vec::new();
    for cap in macro_call_regex().captures_iter(&scrubbed) {
        let c = &cap[1];
        if NOT_CALLS.contains(&c) || params.iter().any(|p| p.name == c) || callees.iter().any(|x| x == c) {
            continue;
        }
        callees.push(c.to_string());
    }
    Some(FunctionRecord {
        name,
        return_type: String::new(),
        params,
        body: text(node, src).trim_end().to_string(),
        callees,
        kind: RecordKind::Macro,
        span: span_of(node, rel, 1),
        language,
    })
}

fn typedefs(node: Node<'_>, src: &str, out: &mut FileExtract) {
    let Some(ty) = node.child_by_field_name("type") else { return };
    let base = squash_whitespace(text(ty, src));
    let mut cursor = node.walk();
    let decls: Vec<Node<'_>> = node.children_by_field_name("declarator", &mut cursor).collect();
    for d in decls {
        let Some(name) = declarator_name(d) else { continue };
        let dtext = text(d, src);
        let (s, e) = (name.start_byte() - d.start_byte(), name.end_byte() - d.start_byte());
        let rest = format!("{}{}", &dtext[..s], &dtext[e..]);
        let under = collapse_spaces(&format!("{base} {rest}"));
        let direct = rest.contains('*');
        out.typedefs.push((text(name, src).to_string(), under, direct));
    }
}
