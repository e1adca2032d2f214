//! Thin helpers over the tree-sitter C and C++ grammars.

use serde::{Deserialize, Serialize};
use tree_sitter::{Node, Parser, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    C,
    Cpp,
}

impl Language {
    /// `.c` and `.h` parse as C, every other extension as C++.
    pub fn from_extension(ext: &str) -> Language {
        match ext.to_ascii_lowercase().as_str() {
            "c" | "h" => Language::C,
            _ => Language::Cpp,
        }
    }

    fn grammar(self) -> tree_sitter::Language {
        match self {
            Language::C => tree_sitter_c::LANGUAGE.into(),
            Language::Cpp => tree_sitter_cpp::LANGUAGE.into(),
        }
    }
}

pub(crate) fn parse(source: &str, language: Language) -> Option<Tree> {
    let mut parser = Parser::new();
    parser.set_language(&language.grammar()).ok()?;
    parser.parse(source, None)
}

pub(crate) fn text<'a>(node: Node<'_>, src: &'a str) -> &'a str {
    &src[node.byte_range()]
}

pub(crate) fn named_children<'t>(node: Node<'t>) -> Vec<Node<'t>> {
    let mut cursor = node.walk();
    node.named_children(&mut cursor).collect()
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

/// Removes whitespace, keeping a single space only where two identifier
/// characters would otherwise fuse.
pub fn squash_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.chars() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space {
            if out.chars().last().is_some_and(is_ident_char) && is_ident_char(c) {
                out.push(' ');
            }
            pending_space = false;
        }
        out.push(c);
    }
    out
}

/// True when `s` is wrapped in one pair of parentheses that match each other.
fn has_outer_parens(s: &str) -> bool {
    if !(s.starts_with('(') && s.ends_with(')')) {
        return false;
    }
    let mut depth = 0i32;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 && i != s.len() - 1 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

pub fn strip_outer_parens(mut s: &str) -> &str {
    while has_outer_parens(s) {
        s = &s[1..s.len() - 1];
    }
    s
}

/// Identifier or member-access chain such as `p`, `p->f`, `s.a.b`, `$t0`.
pub fn is_access_path(s: &str) -> bool {
    if s.is_empty() {
        return false;
    }
    let mut rest = s;
    loop {
        let end = rest.find(|c: char| !is_ident_char(c)).unwrap_or(rest.len());
        if end == 0 || rest[..1].chars().next().is_some_and(|c| c.is_ascii_digit()) {
            return false;
        }
        rest = &rest[end..];
        if rest.is_empty() {
            return true;
        }
        if let Some(r) = rest.strip_prefix("->") {
            rest = r;
        } else if let Some(r) = rest.strip_prefix('.') {
            rest = r;
        } else {
            return false;
        }
    }
}

/// Leading identifier of an access path (`p` for `p->f.g`).
pub fn access_root(s: &str) -> &str {
    let end = s.find(|c: char| !is_ident_char(c)).unwrap_or(s.len());
    &s[..end]
}

pub fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with(|c: char| c.is_ascii_digit())
        && s.chars().all(is_ident_char)
}

const NULL_TOKENS: &[&str] = &["NULL", "0", "nullptr", "((void*)0)", "(void*)0"];

pub fn is_null_literal(s: &str) -> bool {
    NULL_TOKENS.contains(&s)
}

/// Strips casts and redundant parentheses, then squashes whitespace.
pub(crate) fn normalize_expr(node: Node<'_>, src: &str) -> String {
    let mut n = node;
    loop {
        match n.kind() {
            "parenthesized_expression" => match n.named_child(0) {
                Some(inner) if n.named_child_count() == 1 => n = inner,
                _ => break,
            },
            "cast_expression" => match n.child_by_field_name("value") {
                Some(inner) => n = inner,
                None => break,
            },
            _ => break,
        }
    }
    squash_whitespace(text(n, src))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_squash_keeps_token_boundaries() {
        assert_eq!(squash_whitespace("( a  ==  NULL )"), "(a==NULL)");
        assert_eq!(squash_whitespace("unsigned  int x"), "unsigned int x");
    }

    #[test]
    fn outer_parens() {
        assert_eq!(strip_outer_parens("((a))"), "a");
        assert_eq!(strip_outer_parens("(a)&&(b)"), "(a)&&(b)");
    }

    #[test]
    fn access_paths() {
        assert!(is_access_path("p"));
        assert!(is_access_path("cert->x509"));
        assert!(is_access_path("a.b->c"));
        assert!(is_access_path("$t3"));
        assert!(!is_access_path("*p"));
        assert!(!is_access_path("f(x)"));
        assert!(!is_access_path("3"));
        assert_eq!(access_root("cert->x509"), "cert");
    }

    #[test]
    fn both_grammars_load() {
        assert!(parse("int f(void){return 0;}", Language::C).is_some());
        let t = parse("void g(){ auto *p = new int; delete p; }", Language::Cpp).unwrap();
        assert!(!t.root_node().has_error());
    }
}
