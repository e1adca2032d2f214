//! Branch-condition normalization and the shared condition-variable table.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Polarity;
use crate::syntax::{is_access_path, is_null_literal, squash_whitespace, strip_outer_parens};

/// A Boolean condition variable together with the polarity a branch tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CondLit {
    pub var: usize,
    pub positive: bool,
}

impl CondLit {
    /// Literal that holds when the branch takes `arm`.
    pub fn on_arm(self, arm: Polarity) -> CondLit {
        match arm {
            Polarity::False => CondLit { var: self.var, positive: !self.positive },
            _ => self,
        }
    }
}

/// Scans `s` at parenthesis depth zero, yielding byte offsets.
fn top_level_positions(s: &str) -> Vec<(usize, char)> {
    let mut depth = 0i32;
    let mut out = Vec::new();
    let mut in_str: Option<char> = None;
    let mut prev = '\0';
    for (i, c) in s.char_indices() {
        if let Some(q) = in_str {
            if c == q && prev != '\\' {
                in_str = None;
            }
            prev = c;
            continue;
        }
        match c {
            '"' | '\'' => in_str = Some(c),
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            _ if depth == 0 => out.push((i, c)),
            _ => {}
        }
        prev = c;
    }
    out
}

/// `f(...)` or `a->b(...)` spanning the whole string.
fn is_call_like(s: &str) -> bool {
    let Some(open) = s.find('(') else { return false };
    is_access_path(&s[..open]) && s.ends_with(')') && strip_outer_parens(&s[open..]).len() + 2 == s.len() - open
}

fn is_unary_operand(s: &str) -> bool {
    if is_access_path(s) || is_call_like(s) || strip_outer_parens(s).len() < s.len() {
        return true;
    }
    s.strip_prefix('!').is_some_and(is_unary_operand)
}

/// Splits `lhs == rhs` / `lhs != rhs` when it is the only low-precedence
/// operator at the top level.
fn split_equality(s: &str) -> Option<(&str, bool, &str)> {
    let tops = top_level_positions(s);
    let bytes = s.as_bytes();
    let mut found = None;
    for &(i, c) in &tops {
        let next = bytes.get(i + 1).copied().unwrap_or(0);
        let prev = if i > 0 { bytes[i - 1] } else { 0 };
        match c {
            '&' if next == b'&' => return None,
            '|' if next == b'|' => return None,
            '?' | ',' => return None,
            '=' if next == b'=' && prev != b'=' && prev != b'!' => {
                if found.is_some() {
                    return None;
                }
                found = Some((i, true));
            }
            '!' if next == b'=' => {
                if found.is_some() {
                    return None;
                }
                found = Some((i, false));
            }
            '=' if next != b'=' && !matches!(prev, b'=' | b'!' | b'<' | b'>') => return None,
            _ => {}
        }
    }
    let (i, eq) = found?;
    Some((&s[..i], eq, &s[i + 2..]))
}

/// `p` for `p` and for `(p = expr)`.
fn value_of(side: &str) -> &str {
    let side = strip_outer_parens(side);
    if is_access_path(side) {
        return side;
    }
    for (i, c) in top_level_positions(side) {
        if c == '=' {
            let b = side.as_bytes();
            let next = b.get(i + 1).copied().unwrap_or(0);
            let prev = if i > 0 { b[i - 1] } else { 0 };
            if next != b'=' && !matches!(prev, b'=' | b'!' | b'<' | b'>' | b'+' | b'-' | b'*' | b'/' | b'&' | b'|' | b'^' | b'%') {
                let lhs = &side[..i];
                if is_access_path(lhs) {
                    return lhs;
                }
                break;
            }
        }
    }
    side
}

/// Canonical text and polarity of a condition. `!C` and `C` share text
/// with opposite polarity; `x != y` becomes `x == y` negated; null tests
/// against `NULL`, `0` or `nullptr` reduce to the tested access path.
pub fn normalize_condition(raw: &str) -> (String, bool) {
    let mut s = squash_whitespace(raw);
    let mut positive = true;
    loop {
        let t = strip_outer_parens(&s).to_string();
        if let Some(rest) = t.strip_prefix('!') {
            if !rest.starts_with('=') && is_unary_operand(rest) {
                positive = !positive;
                s = rest.to_string();
                continue;
            }
        }
        s = t;
        break;
    }
    if let Some((lhs, eq, rhs)) = split_equality(&s) {
        let (l, r) = (strip_outer_parens(lhs), strip_outer_parens(rhs));
        let pointer_side = if is_null_literal(r) {
            Some(value_of(l))
        } else if is_null_literal(l) {
            Some(value_of(r))
        } else {
            None
        };
        if let Some(p) = pointer_side.filter(|p| is_access_path(p)) {
            return (p.to_string(), if eq { !positive } else { positive });
        }
        let canon = format!("{l}=={r}");
        return (canon, if eq { positive } else { !positive });
    }
    (value_of(&s).to_string(), positive)
}

/// If the branch is a null test of an access path, the tested path and the
/// arm on which it is null.
pub fn null_check(raw: &str) -> Option<(String, Polarity)> {
    let (canon, positive) = normalize_condition(raw);
    if !is_access_path(&canon) {
        return None;
    }
    Some((canon, if positive { Polarity::False } else { Polarity::True }))
}

#[derive(Debug, Clone, Default)]
pub struct CondTable {
    share: bool,
    index: HashMap<String, usize>,
    pub names: Vec<String>,
}

impl CondTable {
    pub fn new(share: bool) -> Self {
        CondTable { share, ..Default::default() }
    }

    pub fn literal(&mut self, raw: &str) -> CondLit {
        let (canon, positive) = normalize_condition(raw);
        if self.share {
            if let Some(&var) = self.index.get(&canon) {
                return CondLit { var, positive };
            }
        }
        let var = self.names.len();
        self.names.push(canon.clone());
        self.index.insert(canon, var);
        CondLit { var, positive }
    }
}
