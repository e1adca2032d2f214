//! Acyclic intraprocedural control-flow graphs with typed nodes.

mod build;
mod cond;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::SourceSpan;

pub use build::{build_cfg, BuildOptions, CallResolver, Primitives, SummaryResolver};
pub use cond::{normalize_condition, null_check, CondLit, CondTable};

pub const DEFAULT_PATH_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    True,
    False,
    Unconditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EscapeMode {
    ReturnedPointer,
    GlobalStore,
    SinkCall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Entry,
    Return { value: Option<String> },
    Alloc { target: String, callee: String },
    Free { arg: String, callee: String },
    Branch { cond: String },
    Assign { lhs: String, rhs: String },
    Deref { expr: String },
    Escape { mode: EscapeMode, var: String },
    Call { callee: String, args: Vec<String> },
    Other,
}

impl NodeKind {
    pub fn is_return(&self) -> bool {
        matches!(self, NodeKind::Return { .. })
    }

    pub fn is_branch(&self) -> bool {
        matches!(self, NodeKind::Branch { .. })
    }

    pub fn label(&self) -> String {
        match self {
            NodeKind::Entry => "Entry".into(),
            NodeKind::Return { value: Some(v) } => format!("Return {v}"),
            NodeKind::Return { value: None } => "Return".into(),
            NodeKind::Alloc { target, callee } => format!("Alloc {target} = {callee}()"),
            NodeKind::Free { arg, callee } => format!("Free {callee}({arg})"),
            NodeKind::Branch { cond } => format!("Branch {cond}"),
            NodeKind::Assign { lhs, rhs } => format!("Assign {lhs} = {rhs}"),
            NodeKind::Deref { expr } => format!("Deref {expr}"),
            NodeKind::Escape { mode, var } => format!("Escape {mode:?} {var}"),
            NodeKind::Call { callee, .. } => format!("Call {callee}"),
            NodeKind::Other => "Other".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub span: SourceSpan,
    /// Goto label that names this node, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Node {
    pub fn new(kind: NodeKind, span: SourceSpan) -> Self {
        Node { kind, span, label: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub polarity: Polarity,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CfgError {
    #[error("cannot parse body of {function}")]
    Unparseable { function: String },
    #[error("CFG of {function} violates an invariant: {message}")]
    Invariant { function: String, message: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct Cfg {
    pub function: String,
    /// Parameter names in declaration order, when built from source.
    #[serde(default)]
    pub params: Vec<String>,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Condition literal tested by each Branch node.
    pub branch_var: BTreeMap<usize, CondLit>,
    /// Canonical condition text per variable.
    pub cond_vars: Vec<String>,
    /// Branch nodes that null-test an access path: `(path, null arm)`.
    pub null_checks: BTreeMap<usize, (String, Polarity)>,
    #[serde(skip)]
    succ: Vec<Vec<usize>>,
    #[serde(skip)]
    pred: Vec<Vec<usize>>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapExceeded {
    pub count: u128,
    pub cap: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    pub nodes: Vec<usize>,
    /// `(branch node, took the True arm)` for each branch on the path.
    pub branch_literals: Vec<(usize, bool)>,
}

impl Path {
    pub fn last(&self) -> usize {
        *self.nodes.last().expect("paths are nonempty")
    }

    /// Condition literals the path requires.
    pub fn condition(&self, cfg: &Cfg) -> Vec<CondLit> {
        self.branch_literals
            .iter()
            .map(|&(b, t)| cfg.branch_var[&b].on_arm(if t { Polarity::True } else { Polarity::False }))
            .collect()
    }

    /// Outgoing polarity taken at position `i`.
    pub fn arm_at(&self, cfg: &Cfg, i: usize) -> Polarity {
        let (from, to) = (self.nodes[i], self.nodes[i + 1]);
        if let Some(&(_, t)) = self.branch_literals.iter().find(|(b, _)| *b == from) {
            return if t { Polarity::True } else { Polarity::False };
        }
        cfg.edges.iter().find(|e| e.from == from && e.to == to).map(|e| e.polarity).unwrap_or(Polarity::Unconditional)
    }
}

impl Cfg {
    /// Assigns condition variables and checks the structural invariants.
    pub fn new(function: impl Into<String>, nodes: Vec<Node>, edges: Vec<Edge>, share_conditions: bool) -> Result<Cfg, CfgError> {
        let function = function.into();
        let mut table = CondTable::new(share_conditions);
        let mut branch_var = BTreeMap::new();
        let mut null_checks = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if let NodeKind::Branch { cond } = &n.kind {
                branch_var.insert(i, table.literal(cond));
                if let Some(nc) = null_check(cond) {
                    null_checks.insert(i, nc);
                }
            }
        }
        let mut succ = vec![Vec::new(); nodes.len()];
        let mut pred = vec![Vec::new(); nodes.len()];
        for (ei, e) in edges.iter().enumerate() {
            if e.from >= nodes.len() || e.to >= nodes.len() {
                return Err(CfgError::Invariant { function, message: format!("edge {ei} out of range") });
            }
            succ[e.from].push(ei);
            pred[e.to].push(ei);
        }
        let cfg = Cfg {
            function,
            params: Vec::new(),
            nodes,
            edges,
            branch_var,
            cond_vars: table.names,
            null_checks,
            succ,
            pred,
            diagnostics: Vec::new(),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn invariant(&self, message: String) -> CfgError {
        CfgError::Invariant { function: self.function.clone(), message }
    }

    fn check(&self) -> Result<(), CfgError> {
        let entries: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.nodes[i].kind == NodeKind::Entry).collect();
        if entries.len() != 1 {
            return Err(self.invariant(format!("{} Entry nodes", entries.len())));
        }
        if !self.nodes.iter().any(|n| n.kind.is_return()) {
            return Err(self.invariant("no Return node".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let out: Vec<Polarity> = self.succ[i].iter().map(|&e| self.edges[e].polarity).collect();
            let ok = match &n.kind {
                NodeKind::Return { .. } => out.is_empty(),
                NodeKind::Branch { .. } => {
                    out.len() == 2 && out.contains(&Polarity::True) && out.contains(&Polarity::False)
                }
                _ => out == [Polarity::Unconditional],
            };
            if !ok {
                return Err(self.invariant(format!("node {i} ({}) has successors {out:?}", n.kind.label())));
            }
        }
        if n_topo(self).is_none() {
            return Err(self.invariant("cycle".into()));
        }
        let reach = self.reachable();
        if let Some(i) = reach.iter().position(|r| !r) {
            return Err(self.invariant(format!("node {i} unreachable from Entry")));
        }
        Ok(())
    }

    pub fn entry(&self) -> usize {
        self.nodes.iter().position(|n| n.kind == NodeKind::Entry).expect("checked")
    }

    fn reachable(&self) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.entry()];
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            stack.extend(self.succ[n].iter().map(|&e| self.edges[e].to));
        }
        seen
    }

    pub fn out_edges(&self, n: usize) -> impl Iterator<Item = &Edge> {
        self.succ[n].iter().map(move |&e| &self.edges[e])
    }

    pub fn out_edge_ids(&self, n: usize) -> &[usize] {
        &self.succ[n]
    }

    pub fn in_edge_ids(&self, n: usize) -> &[usize] {
        &self.pred[n]
    }

    pub fn returns(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].kind.is_return()).collect()
    }

    pub fn alloc_sites(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| matches!(self.nodes[i].kind, NodeKind::Alloc { .. })).collect()
    }

    /// Nodes in a topological order.
    pub fn topo_order(&self) -> Vec<usize> {
        n_topo(self).expect("acyclic by construction")
    }

    /// Same graph with one fresh condition variable per Branch node.
    pub fn unshare_conditions(&self) -> Cfg {
        let mut c = Cfg::new(self.function.clone(), self.nodes.clone(), self.edges.clone(), false).expect("same structure");
        c.diagnostics = self.diagnostics.clone();
        c.params = self.params.clone();
        c
    }

    /// Number of Entry-to-Return paths, saturating.
    pub fn count_paths(&self) -> u128 {
        let order = self.topo_order();
        let mut count = vec![0u128; self.nodes.len()];
        for &n in order.iter().rev() {
            count[n] = if self.nodes[n].kind.is_return() {
                1
            } else {
                self.out_edges(n).fold(0u128, |acc, e| acc.saturating_add(count[e.to]))
            };
        }
        count[self.entry()]
    }

    /// All Entry-to-Return paths in successor order, or `CapExceeded` when
    /// there are more than `cap`.
    pub fn enumerate_paths(&self, cap: usize) -> Result<Vec<Path>, CapExceeded> {
        let count = self.count_paths();
        if count > cap as u128 {
            return Err(CapExceeded { count, cap });
        }
        let mut out = Vec::with_capacity(count as usize);
        let mut nodes = vec![self.entry()];
        let mut lits = Vec::new();
        self.dfs(&mut nodes, &mut lits, &mut out);
        Ok(out)
    }

    fn dfs(&self, nodes: &mut Vec<usize>, lits: &mut Vec<(usize, bool)>, out: &mut Vec<Path>) {
        let n = *nodes.last().expect("nonempty");
        if self.nodes[n].kind.is_return() {
            out.push(Path { nodes: nodes.clone(), branch_literals: lits.clone() });
            return;
        }
        for &ei in &self.succ[n] {
            let e = self.edges[ei];
            nodes.push(e.to);
            let branch = e.polarity != Polarity::Unconditional;
            if branch {
                lits.push((n, e.polarity == Polarity::True));
            }
            self.dfs(nodes, lits, out);
            if branch {
                lits.pop();
            }
            nodes.pop();
        }
    }

    /// Graphviz rendering; labels are node kind plus source line.
    pub fn to_dot(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "digraph \"{}\" {{", escape_dot(&self.function));
        let _ = writeln!(s, "  node [shape=box, fontname=\"monospace\"];");
        for (i, n) in self.nodes.iter().enumerate() {
            let shape = if n.kind.is_branch() { ", shape=diamond" } else { "" };
            let mut label = format!("{}: {}\\n{}:{}", i, escape_dot(&n.kind.label()), escape_dot(&n.span.file), n.span.start_line);
            if let Some(l) = &n.label {
                label = format!("{}:\\n{label}", escape_dot(l));
            }
            let _ = writeln!(s, "  n{i} [label=\"{label}\"{shape}];");
        }
        for e in &self.edges {
            let attr = match e.polarity {
                Polarity::True => " [label=\"T\"]",
                Polarity::False => " [label=\"F\"]",
                Polarity::Unconditional => "",
            };
            let _ = writeln!(s, "  n{} -> n{}{attr};", e.from, e.to);
        }
        s.push_str("}\n");
        s
    }
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn n_topo(cfg: &Cfg) -> Option<Vec<usize>> {
    let n = cfg.nodes.len();
    let mut indeg: Vec<usize> = (0..n).map(|i| cfg.pred[i].len()).collect();
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).rev().collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop() {
        order.push(v);
        for &e in cfg.succ[v].iter().rev() {
            let t = cfg.edges[e].to;
            indeg[t] -= 1;
            if indeg[t] == 0 {
                ready.push(t);
            }
        }
    }
    (order.len() == n).then_some(order)
}

impl fmt::Display for Cfg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.nodes.iter().enumerate() {
            let outs: Vec<String> = self
                .out_edges(i)
                .map(|e| match e.polarity {
                    Polarity::True => format!("T:{}", e.to),
                    Polarity::False => format!("F:{}", e.to),
                    Polarity::Unconditional => e.to.to_string(),
                })
                .collect();
            writeln!(f, "{i:>3} {:<40} -> {}", n.kind.label(), outs.join(", "))?;
        }
        Ok(())
    }
}

/// Convenience constructor for hand-built graphs.
pub fn node(kind: NodeKind, line: u32) -> Node {
    Node::new(kind, SourceSpan::line("<graph>", line))
}

pub fn edge(from: usize, to: usize, polarity: Polarity) -> Edge {
    Edge { from, to, polarity }
}
