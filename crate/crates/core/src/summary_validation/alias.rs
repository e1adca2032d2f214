use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cfg::{Cfg, NodeKind};
use crate::syntax::{access_root, is_access_path};

/// Values derived from one parameter through assignments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasSet {
    pub param_index: usize,
    /// `p` itself and everything assigned from it by `v = p` chains.
    pub self_aliases: BTreeSet<String>,
    /// Fields reached through `v = p->f` chains and their copies.
    pub field_derivations: BTreeSet<String>,
}

impl AliasSet {
    pub fn is_self_alias(&self, expr: &str) -> bool {
        self.self_aliases.contains(expr)
    }

    /// A field access rooted in the parameter's aliases, or a copy of one.
    pub fn is_field_derivation(&self, expr: &str) -> bool {
        self.field_derivations.contains(expr) || is_field_of(expr, &self.self_aliases, &self.field_derivations)
    }
}

fn is_field_of(expr: &str, selfs: &BTreeSet<String>, fields: &BTreeSet<String>) -> bool {
    if !is_access_path(expr) {
        return false;
    }
    let root = access_root(expr);
    root.len() < expr.len() && (selfs.contains(root) || fields.contains(root))
}

fn assignments(cfg: &Cfg) -> Vec<(&str, &str)> {
    cfg.nodes
        .iter()
        .filter_map(|n| match &n.kind {
            NodeKind::Assign { lhs, rhs } => Some((lhs.as_str(), rhs.as_str())),
            _ => None,
        })
        .collect()
}

/// Flow-insensitive closure of `seed` under `v = x` assignments.
pub fn self_closure(cfg: &Cfg, seed: &str) -> BTreeSet<String> {
    let assigns = assignments(cfg);
    let mut set = BTreeSet::from([seed.to_string()]);
    loop {
        let before = set.len();
        for &(lhs, rhs) in &assigns {
            if set.contains(rhs) {
                set.insert(lhs.to_string());
            }
        }
        if set.len() == before {
            return set;
        }
    }
}

pub fn compute_alias_set(cfg: &Cfg, param_index: usize) -> AliasSet {
    let param = cfg.params.get(param_index).cloned().unwrap_or_else(|| format!("$arg{param_index}"));
    let self_aliases = self_closure(cfg, &param);
    let assigns = assignments(cfg);
    let mut fields = BTreeSet::new();
    loop {
        let before = fields.len();
        for &(lhs, rhs) in &assigns {
            if is_field_of(rhs, &self_aliases, &fields) {
                fields.insert(rhs.to_string());
                fields.insert(lhs.to_string());
            } else if fields.contains(rhs) {
                fields.insert(lhs.to_string());
            }
        }
        if fields.len() == before {
            break;
        }
    }
    let fields = fields.into_iter().filter(|f| !self_aliases.contains(f)).collect();
    AliasSet { param_index, self_aliases, field_derivations: fields }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{edge, node, Polarity};

    fn straight(assigns: &[(&str, &str)]) -> Cfg {
        let mut nodes = vec![node(NodeKind::Entry, 1)];
        for (l, r) in assigns {
            nodes.push(node(NodeKind::Assign { lhs: l.to_string(), rhs: r.to_string() }, 2));
        }
        nodes.push(node(NodeKind::Return { value: None }, 3));
        let edges = (0..nodes.len() - 1).map(|i| edge(i, i + 1, Polarity::Unconditional)).collect();
        let mut cfg = Cfg::new("f", nodes, edges, true).unwrap();
        cfg.params = vec!["p".into()];
        cfg
    }

    fn set(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn copy_chain() {
        let a = compute_alias_set(&straight(&[("tmp", "p")]), 0);
        assert_eq!(a.self_aliases, set(&["p", "tmp"]));
        assert!(a.field_derivations.is_empty());
    }

    #[test]
    fn no_assignments() {
        let a = compute_alias_set(&straight(&[]), 0);
        assert_eq!(a.self_aliases, set(&["p"]));
    }

    #[test]
    fn field_chain_stays_field() {
        let a = compute_alias_set(&straight(&[("q", "p->f"), ("r", "q")]), 0);
        assert_eq!(a.self_aliases, set(&["p"]));
        assert_eq!(a.field_derivations, set(&["p->f", "q", "r"]));
        assert!(a.is_field_derivation("p->g"));
        assert!(a.is_field_derivation("q->h"));
        assert!(!a.is_field_derivation("p"));
    }

    #[test]
    fn order_does_not_matter() {
        let a = compute_alias_set(&straight(&[("c", "b"), ("b", "a"), ("a", "p")]), 0);
        assert_eq!(a.self_aliases, set(&["a", "b", "c", "p"]));
    }
}
