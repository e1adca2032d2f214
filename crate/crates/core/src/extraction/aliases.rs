use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasEntry {
    pub underlying: String,
    pub pointer_like: bool,
    /// Set when resolution hit a typedef cycle through this entry.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cyclic: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointerAliasTable {
    pub aliases: BTreeMap<String, AliasEntry>,
}

/// Strips comments and string/char literals from type text.
fn strip_comments(ty: &str) -> String {
    let mut out = String::with_capacity(ty.len());
    let mut chars = ty.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '/' if chars.peek() == Some(&'*') => {
                chars.next();
                let mut prev = ' ';
                for d in chars.by_ref() {
                    if prev == '*' && d == '/' {
                        break;
                    }
                    prev = d;
                }
                out.push(' ');
            }
            '/' if chars.peek() == Some(&'/') => {
                for d in chars.by_ref() {
                    if d == '\n' {
                        break;
                    }
                }
                out.push(' ');
            }
            '"' | '\'' => {
                let mut escaped = false;
                for d in chars.by_ref() {
                    if escaped {
                        escaped = false;
                    } else if d == '\\' {
                        escaped = true;
                    } else if d == c {
                        break;
                    }
                }
                out.push(' ');
            }
            _ => out.push(c),
        }
    }
    out
}

/// Identifier tokens that can name a typedef (tags after struct/union/enum
/// are skipped).
fn type_name_tokens(ty: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut prev_tag = false;
    let mut cur = String::new();
    let flush = |cur: &mut String, tokens: &mut Vec<String>, prev_tag: &mut bool| {
        if cur.is_empty() {
            return;
        }
        let word = std::mem::take(cur);
        if !*prev_tag && !word.starts_with(|c: char| c.is_ascii_digit()) {
            tokens.push(word.clone());
        }
        *prev_tag = matches!(word.as_str(), "struct" | "union" | "enum" | "class");
    };
    for c in ty.chars() {
        if c.is_ascii_alphanumeric() || c == '_' {
            cur.push(c);
        } else {
            flush(&mut cur, &mut tokens, &mut prev_tag);
            if !c.is_whitespace() {
                prev_tag = false;
            }
        }
    }
    flush(&mut cur, &mut tokens, &mut prev_tag);
    tokens
}

fn has_star(ty: &str) -> bool {
    strip_comments(ty).contains('*')
}

impl PointerAliasTable {
    /// Builds the table from `(name, underlying, direct_pointer)` triples.
    /// The first definition of a name wins.
    pub fn build(typedefs: Vec<(String, String, bool)>) -> Self {
        let mut raw: BTreeMap<String, (String, bool)> = BTreeMap::new();
        for (name, underlying, direct) in typedefs {
            raw.entry(name).or_insert((underlying, direct));
        }
        #[derive(Clone, Copy, PartialEq)]
        enum State {
            Todo,
            Active,
            Done(bool),
        }
        let names: Vec<String> = raw.keys().cloned().collect();
        let mut state: BTreeMap<String, State> = names.iter().map(|n| (n.clone(), State::Todo)).collect();
        let mut cyclic: BTreeMap<String, bool> = BTreeMap::new();

        fn resolve(
            name: &str,
            raw: &BTreeMap<String, (String, bool)>,
            state: &mut BTreeMap<String, State>,
            cyclic: &mut BTreeMap<String, bool>,
        ) -> bool {
            match state[name] {
                State::Done(v) => return v,
                State::Active => {
                    cyclic.insert(name.to_string(), true);
                    return false;
                }
                State::Todo => {}
            }
            state.insert(name.to_string(), State::Active);
            let (underlying, direct) = &raw[name];
            let mut pointer = *direct || has_star(underlying);
            if !pointer {
                for tok in type_name_tokens(underlying) {
                    if raw.contains_key(&tok) && resolve(&tok, raw, state, cyclic) {
                        pointer = true;
                        break;
                    }
                }
            }
            state.insert(name.to_string(), State::Done(pointer));
            pointer
        }

        for n in &names {
            resolve(n, &raw, &mut state, &mut cyclic);
        }
        let aliases = raw
            .into_iter()
            .map(|(name, (underlying, _))| {
                let pointer_like = matches!(state[&name], State::Done(true));
                let cyc = cyclic.get(&name).copied().unwrap_or(false);
                (name, AliasEntry { underlying, pointer_like, cyclic: cyc })
            })
            .collect();
        PointerAliasTable { aliases }
    }

    pub fn is_pointer_like(&self, name: &str) -> bool {
        self.aliases.get(name).is_some_and(|e| e.pointer_like)
    }

    pub fn cyclic_names(&self) -> Vec<&str> {
        self.aliases.iter().filter(|(_, e)| e.cyclic).map(|(n, _)| n.as_str()).collect()
    }

    /// A `*` outside comments and strings, or a pointer-like typedef name.
    pub fn is_pointer_type(&self, ty: &str) -> bool {
        let clean = strip_comments(ty);
        clean.contains('*') || type_name_tokens(&clean).iter().any(|t| self.is_pointer_like(t))
    }
}
