//! Single-path selection over a CFG as a Boolean formula, plus monotone
//! state tracks propagated along the selected path.

use crate::cfg::{Cfg, CondLit, Edge, Path, Polarity};
use crate::solver::{Formula, Lit, Model, Var};

/// How a state track behaves at one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gen {
    /// Copy the state of the chosen predecessor.
    Inherit,
    /// True when the node is reached, whatever the predecessor held.
    Start,
    /// Predecessor state, or true when the node is reached.
    Set,
    /// Always false.
    Clear,
}

#[derive(Debug, Clone)]
pub struct PathEncoding {
    pub formula: Formula,
    pub cond_vars: Vec<Var>,
    pub edge_vars: Vec<Var>,
    pub reach_vars: Vec<Var>,
}

impl PathEncoding {
    /// Edge selection with at most one incoming edge per node, reachability,
    /// no dangling selections, and branch arms implying their condition.
    pub fn new(cfg: &Cfg) -> Self {
        let mut formula = Formula::new();
        let cond_vars: Vec<Var> = cfg.cond_vars.iter().map(|_| formula.new_var()).collect();
        let edge_vars: Vec<Var> = cfg.edges.iter().map(|_| formula.new_var()).collect();
        let reach_vars: Vec<Var> = cfg.nodes.iter().map(|_| formula.new_var()).collect();
        let entry = cfg.entry();
        formula.add_unit(reach_vars[entry].positive());
        for (n, reach) in reach_vars.iter().enumerate() {
            if n == entry {
                continue;
            }
            let incoming: Vec<Lit> = cfg.in_edge_ids(n).iter().map(|&e| edge_vars[e].positive()).collect();
            formula.add_at_most_one(incoming.iter().copied());
            formula.add_equiv_or(reach.positive(), &incoming);
        }
        for (i, e) in cfg.edges.iter().enumerate() {
            let ev = edge_vars[i].positive();
            formula.add_implies(ev, reach_vars[e.from].positive());
            if e.polarity != Polarity::Unconditional {
                let lit = cfg.branch_var[&e.from].on_arm(e.polarity);
                formula.add_implies(ev, Lit::new(cond_vars[lit.var], lit.positive));
            }
        }
        PathEncoding { formula, cond_vars, edge_vars, reach_vars }
    }

    pub fn cond_lit(&self, lit: CondLit) -> Lit {
        Lit::new(self.cond_vars[lit.var], lit.positive)
    }

    pub fn reach(&self, n: usize) -> Lit {
        self.reach_vars[n].positive()
    }

    /// Adds one state variable per node. `pass` decides whether the state
    /// may flow along an edge.
    pub fn add_track(&mut self, cfg: &Cfg, gen: impl Fn(usize) -> Gen, pass: impl Fn(&Edge) -> bool) -> Vec<Var> {
        let state: Vec<Var> = cfg.nodes.iter().map(|_| self.formula.new_var()).collect();
        for n in 0..cfg.nodes.len() {
            let s = state[n].positive();
            let g = gen(n);
            let mut inputs = Vec::new();
            if matches!(g, Gen::Inherit | Gen::Set) {
                for &ei in cfg.in_edge_ids(n) {
                    let e = &cfg.edges[ei];
                    if pass(e) {
                        let t = self.formula.define_and(self.edge_vars[ei].positive(), state[e.from].positive());
                        inputs.push(t);
                    }
                }
            }
            if matches!(g, Gen::Start | Gen::Set) {
                inputs.push(self.reach(n));
            }
            self.formula.add_equiv_or(s, &inputs);
        }
        state
    }

    /// The selected path from Entry to `end`, read off the active edges.
    pub fn witness(&self, cfg: &Cfg, model: &Model, end: usize) -> Path {
        let mut nodes = vec![end];
        let mut lits = Vec::new();
        let mut at = end;
        let entry = cfg.entry();
        while at != entry {
            let Some(&ei) = cfg.in_edge_ids(at).iter().find(|&&e| model.value(self.edge_vars[e])) else {
                break;
            };
            let e = &cfg.edges[ei];
            if e.polarity != Polarity::Unconditional {
                lits.push((e.from, e.polarity == Polarity::True));
            }
            at = e.from;
            nodes.push(at);
        }
        nodes.reverse();
        lits.reverse();
        Path { nodes, branch_literals: lits }
    }
}

/// Satisfiability of a path condition through the solver.
pub fn path_condition_formula(cfg: &Cfg, path: &Path) -> Formula {
    let mut f = Formula::with_vars(cfg.cond_vars.len() as u32);
    for lit in path.condition(cfg) {
        f.add_unit(Lit::new(Var(lit.var as u32), lit.positive));
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{edge, node, NodeKind};
    use crate::solver::{solve, SatResult};

    fn diamond(share: bool) -> Cfg {
        let nodes = vec![
            node(NodeKind::Entry, 1),
            node(NodeKind::Branch { cond: "c".into() }, 2),
            node(NodeKind::Other, 3),
            node(NodeKind::Branch { cond: "!c".into() }, 4),
            node(NodeKind::Return { value: None }, 5),
            node(NodeKind::Return { value: None }, 6),
        ];
        let edges = vec![
            edge(0, 1, Polarity::Unconditional),
            edge(1, 2, Polarity::True),
            edge(1, 3, Polarity::False),
            edge(2, 3, Polarity::Unconditional),
            edge(3, 4, Polarity::True),
            edge(3, 5, Polarity::False),
        ];
        Cfg::new("d", nodes, edges, share).unwrap()
    }

    #[test]
    fn shared_conditions_prune_paths() {
        let cfg = diamond(true);
        let mut enc = PathEncoding::new(&cfg);
        let visited = enc.add_track(&cfg, |n| if n == 2 { Gen::Start } else { Gen::Inherit }, |_| true);
        enc.formula.add_unit(enc.reach(4));
        enc.formula.add_unit(visited[4].positive());
        assert_eq!(solve(&enc.formula).unwrap(), SatResult::Unsat);

        let cfg = diamond(false);
        let mut enc = PathEncoding::new(&cfg);
        let visited = enc.add_track(&cfg, |n| if n == 2 { Gen::Start } else { Gen::Inherit }, |_| true);
        enc.formula.add_unit(enc.reach(4));
        enc.formula.add_unit(visited[4].positive());
        let SatResult::Sat(m) = solve(&enc.formula).unwrap() else { panic!() };
        let w = enc.witness(&cfg, &m, 4);
        assert_eq!(w.nodes, vec![0, 1, 2, 3, 4]);
        assert_eq!(w.branch_literals, vec![(1, true), (3, true)]);
    }

    #[test]
    fn path_condition_consistency() {
        let cfg = diamond(true);
        let paths = cfg.enumerate_paths(10).unwrap();
        let sat: Vec<bool> = paths.iter().map(|p| solve(&path_condition_formula(&cfg, p)).unwrap().is_sat()).collect();
        assert_eq!(sat, vec![false, true, true, false]);
    }
}
