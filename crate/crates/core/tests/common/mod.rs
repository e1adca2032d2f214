//! Random CFGs and formulas with brute-force reference semantics.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use leakscope::cfg::{edge, node, Cfg, EscapeMode, NodeKind, Path, Polarity};
use leakscope::solver::{Formula, Lit, Var};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

const PTRS: [&str; 3] = ["p", "q", "r"];
const FLAGS: [&str; 4] = ["c0", "c1", "c2", "c3"];

/// Condition as generated: tested variable and whether the text tests it positively.
#[derive(Debug, Clone)]
pub struct Cond {
    pub var: String,
    pub positive: bool,
}

#[derive(Debug, Clone)]
pub struct RandomCfg {
    pub kinds: Vec<NodeKind>,
    pub conds: BTreeMap<usize, Cond>,
    /// `(to, polarity)` per node.
    pub succ: Vec<Vec<(usize, Polarity)>>,
    pub share: bool,
    pub cfg: Cfg,
}

fn pick<'a>(rng: &mut StdRng, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

fn random_cond(rng: &mut StdRng, vars: &[&str]) -> (String, Cond) {
    let v = pick(rng, vars).to_string();
    match rng.gen_range(0..4) {
        0 => (v.clone(), Cond { var: v, positive: true }),
        1 => (format!("!{v}"), Cond { var: v, positive: false }),
        2 => (format!("{v} == NULL"), Cond { var: v, positive: false }),
        _ => (format!("{v} != NULL"), Cond { var: v, positive: true }),
    }
}

fn random_kind(rng: &mut StdRng) -> NodeKind {
    let s = |x: &str| x.to_string();
    match rng.gen_range(0..12) {
        0 | 1 => NodeKind::Alloc { target: s(pick(rng, &["p", "p", "q", "r"])), callee: s("malloc") },
        2 | 3 => NodeKind::Free { arg: s(pick(rng, &["p", "p", "q", "r", "p->f", "q->f"])), callee: s("free") },
        4 => {
            let lhs = pick(rng, &PTRS);
            let rhs = pick(rng, &["p", "q", "r", "x", "p->f"]);
            if lhs == rhs {
                NodeKind::Other
            } else {
                NodeKind::Assign { lhs: s(lhs), rhs: s(rhs) }
            }
        }
        5 => NodeKind::Escape { mode: EscapeMode::GlobalStore, var: s(pick(rng, &PTRS)) },
        6 => NodeKind::Return { value: [None, Some("p"), Some("q"), Some("r")][rng.gen_range(0..4)].map(s) },
        7 => NodeKind::Other,
        _ => NodeKind::Branch { cond: String::new() },
    }
}

/// An acyclic CFG of at most `max_nodes` nodes using at most six distinct
/// condition variables.
pub fn random_cfg(seed: u64, max_nodes: usize) -> RandomCfg {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = rng.gen_range(3..=max_nodes).max(rng.gen_range(3..=max_nodes));
    let share = rng.gen_bool(0.8);
    let flag_count = rng.gen_range(1..=4);
    let mut cond_pool: Vec<&str> = FLAGS[..flag_count].to_vec();
    cond_pool.extend(&PTRS[..(6 - flag_count).min(2)]);

    let mut kinds = vec![NodeKind::Entry];
    let mut conds = BTreeMap::new();
    let mut succ: Vec<Vec<(usize, Polarity)>> = vec![Vec::new(); n];
    for i in 1..n {
        let mut k = if i == n - 1 {
            NodeKind::Return { value: [None, Some("p"), Some("q")][rng.gen_range(0..3)].map(String::from) }
        } else {
            random_kind(&mut rng)
        };
        if matches!(k, NodeKind::Branch { .. }) && i + 2 >= n {
            k = NodeKind::Other;
        }
        kinds.push(k);
    }
    for i in 0..n - 1 {
        match &kinds[i] {
            NodeKind::Return { .. } => {}
            NodeKind::Branch { .. } => {
                let near = i + 1;
                let far = rng.gen_range(i + 2..n);
                let (t, f) = if rng.gen_bool(0.5) { (near, far) } else { (far, near) };
                let (text, c) = random_cond(&mut rng, &cond_pool);
                kinds[i] = NodeKind::Branch { cond: text };
                conds.insert(i, c);
                succ[i] = vec![(t, Polarity::True), (f, Polarity::False)];
            }
            _ => {
                let to = if rng.gen_bool(0.8) { i + 1 } else { rng.gen_range(i + 1..n) };
                succ[i] = vec![(to, Polarity::Unconditional)];
            }
        }
    }

    // Drop nodes unreachable from Entry.
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    while let Some(x) = stack.pop() {
        if !std::mem::replace(&mut seen[x], true) {
            stack.extend(succ[x].iter().map(|&(t, _)| t));
        }
    }
    let remap: Vec<Option<usize>> = {
        let mut next = 0;
        seen.iter()
            .map(|&s| {
                s.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let kinds: Vec<NodeKind> = (0..n).filter(|&i| seen[i]).map(|i| kinds[i].clone()).collect();
    let conds: BTreeMap<usize, Cond> = conds.into_iter().filter_map(|(i, c)| remap[i].map(|j| (j, c))).collect();
    let succ: Vec<Vec<(usize, Polarity)>> = (0..n)
        .filter(|&i| seen[i])
        .map(|i| succ[i].iter().map(|&(t, p)| (remap[t].unwrap(), p)).collect())
        .collect();

    let nodes = kinds.iter().enumerate().map(|(i, k)| node(k.clone(), i as u32 + 1)).collect();
    let edges = succ.iter().enumerate().flat_map(|(i, s)| s.iter().map(move |&(t, p)| edge(i, t, p))).collect();
    let mut cfg = Cfg::new(format!("rand{seed}"), nodes, edges, share).expect("generator builds valid CFGs");
    cfg.params = vec!["p".into(), "q".into()];
    RandomCfg { kinds, conds, succ, share, cfg }
}

/// A path as nodes plus the arm taken out of each branch node.
#[derive(Debug, Clone)]
pub struct OraclePath {
    pub nodes: Vec<usize>,
    pub arms: Vec<Polarity>,
}

impl RandomCfg {
    /// Every Entry-to-Return path by depth-first search.
    pub fn all_paths(&self) -> Vec<OraclePath> {
        let mut out = Vec::new();
        let mut nodes = vec![0];
        let mut arms = Vec::new();
        self.dfs(&mut nodes, &mut arms, &mut out);
        out
    }

    fn dfs(&self, nodes: &mut Vec<usize>, arms: &mut Vec<Polarity>, out: &mut Vec<OraclePath>) {
        let at = *nodes.last().unwrap();
        if matches!(self.kinds[at], NodeKind::Return { .. }) {
            out.push(OraclePath { nodes: nodes.clone(), arms: arms.clone() });
            return;
        }
        for &(to, pol) in &self.succ[at] {
            nodes.push(to);
            arms.push(pol);
            self.dfs(nodes, arms, out);
            nodes.pop();
            arms.pop();
        }
    }

    /// Whether the branch outcomes along the path can hold together.
    pub fn consistent(&self, p: &OraclePath) -> bool {
        let mut assigned: BTreeMap<String, bool> = BTreeMap::new();
        for (i, &n) in p.nodes[..p.nodes.len() - 1].iter().enumerate() {
            let Some(c) = self.conds.get(&n) else { continue };
            if !self.share {
                continue;
            }
            let value = (p.arms[i] == Polarity::True) == c.positive;
            if *assigned.entry(c.var.clone()).or_insert(value) != value {
                return false;
            }
        }
        true
    }

    /// Rebuilds the oracle view of a library path, if it is a real path.
    pub fn lift(&self, p: &Path) -> Option<OraclePath> {
        if p.nodes.first() != Some(&0) || !matches!(self.kinds[*p.nodes.last()?], NodeKind::Return { .. }) {
            return None;
        }
        let mut arms = Vec::new();
        let mut lits = Vec::new();
        for w in p.nodes.windows(2) {
            let &(_, pol) = self.succ[w[0]].iter().find(|(t, _)| *t == w[1])?;
            if pol != Polarity::Unconditional {
                lits.push((w[0], pol == Polarity::True));
            }
            arms.push(pol);
        }
        (lits == p.branch_literals).then(|| OraclePath { nodes: p.nodes.clone(), arms })
    }

    /// The null arm of a branch that tests `var` for null, if it tests one of `set`.
    fn null_arm_hits(&self, n: usize, arm: Polarity, set: &BTreeSet<String>) -> bool {
        match self.conds.get(&n) {
            Some(c) if set.contains(&c.var) => {
                let null_arm = if c.positive { Polarity::False } else { Polarity::True };
                arm == null_arm
            }
            _ => false,
        }
    }

    fn assigns(&self) -> Vec<(&str, &str)> {
        self.kinds
            .iter()
            .filter_map(|k| match k {
                NodeKind::Assign { lhs, rhs } => Some((lhs.as_str(), rhs.as_str())),
                _ => None,
            })
            .collect()
    }

    /// Everything that may hold the same pointer as `seed`, ignoring order.
    pub fn copies_of(&self, seed: &str) -> BTreeSet<String> {
        let assigns = self.assigns();
        let mut set = BTreeSet::from([seed.to_string()]);
        let mut changed = true;
        while changed {
            changed = false;
            for &(l, r) in &assigns {
                if set.contains(r) && set.insert(l.to_string()) {
                    changed = true;
                }
            }
        }
        set
    }

    /// Fields reached from `selfs` and copies of those fields.
    pub fn fields_of(&self, selfs: &BTreeSet<String>) -> BTreeSet<String> {
        let assigns = self.assigns();
        let rooted = |e: &str, known: &BTreeSet<String>| {
            e.split_once("->").is_some_and(|(root, _)| selfs.contains(root) || known.contains(root))
        };
        let mut fields = BTreeSet::new();
        let mut changed = true;
        while changed {
            changed = false;
            for &(l, r) in &assigns {
                if rooted(r, &fields) || fields.contains(r) {
                    changed |= fields.insert(r.to_string());
                    changed |= fields.insert(l.to_string());
                }
            }
        }
        fields.retain(|f| !selfs.contains(f));
        fields
    }

    /// Whether the pointer allocated at `site` is live, unfreed and not handed
    /// off at the end of `p`.
    pub fn leaks_along(&self, site: usize, p: &OraclePath) -> bool {
        let NodeKind::Alloc { target, .. } = &self.kinds[site] else { return false };
        let set = self.copies_of(target);
        let Some(start) = p.nodes.iter().position(|&n| n == site) else { return false };
        for i in start..p.nodes.len() {
            let n = p.nodes[i];
            if i > start {
                if self.null_arm_hits(p.nodes[i - 1], p.arms[i - 1], &set) {
                    return false;
                }
                match &self.kinds[n] {
                    NodeKind::Free { arg, .. } if set.contains(arg) => return false,
                    NodeKind::Escape { var, .. } if set.contains(var) => return false,
                    NodeKind::Return { value: Some(v) } if set.contains(v) => return false,
                    _ => {}
                }
            }
        }
        true
    }

    pub fn leak_feasible(&self, site: usize) -> bool {
        self.all_paths().iter().any(|p| self.consistent(p) && self.leaks_along(site, p))
    }

    /// Whether some allocation on `p` still holds its value at the final Return.
    pub fn returns_allocation(&self, p: &OraclePath) -> bool {
        let last = *p.nodes.last().unwrap();
        let NodeKind::Return { value: Some(ret) } = &self.kinds[last] else { return false };
        p.nodes.iter().enumerate().any(|(start, &site)| {
            let NodeKind::Alloc { target, .. } = &self.kinds[site] else { return false };
            let set = self.copies_of(target);
            if !set.contains(ret) {
                return false;
            }
            for i in start + 1..p.nodes.len() {
                if self.null_arm_hits(p.nodes[i - 1], p.arms[i - 1], &set) {
                    return false;
                }
                match &self.kinds[p.nodes[i]] {
                    NodeKind::Free { arg, .. } if set.contains(arg) => return false,
                    NodeKind::Assign { lhs, rhs } if lhs == target && !set.contains(rhs) => return false,
                    NodeKind::Alloc { target: t, .. } if t == target => return false,
                    _ => {}
                }
            }
            true
        })
    }

    pub fn allocator_valid(&self) -> bool {
        self.all_paths().iter().any(|p| self.consistent(p) && self.returns_allocation(p))
    }

    pub fn frees_param(&self, param: usize, fields_count: bool, p: &OraclePath) -> bool {
        let selfs = self.copies_of(&self.cfg.params[param]);
        let fields = self.fields_of(&selfs);
        p.nodes.iter().any(|&n| match &self.kinds[n] {
            NodeKind::Free { arg, .. } => {
                selfs.contains(arg)
                    || fields_count
                        && (fields.contains(arg)
                            || arg.split_once("->").is_some_and(|(r, _)| selfs.contains(r) || fields.contains(r)))
            }
            _ => false,
        })
    }

    pub fn deallocator_valid(&self, param: usize, fields_count: bool) -> bool {
        self.all_paths().iter().any(|p| self.consistent(p) && self.frees_param(param, fields_count, p))
    }
}

/// Clauses as positive and negative bitmasks, plus at-most-one groups.
#[derive(Debug, Clone)]
pub struct RandomFormula {
    pub vars: u32,
    pub clauses: Vec<(u32, u32)>,
    pub amo: Vec<u32>,
    pub formula: Formula,
}

impl RandomFormula {
    pub fn holds(&self, m: u32) -> bool {
        self.clauses.iter().all(|&(pos, neg)| m & pos != 0 || !m & neg != 0)
            && self.amo.iter().all(|&g| (m & g).count_ones() <= 1)
    }

    pub fn brute_force_sat(&self) -> bool {
        (0..1u32 << self.vars).any(|m| self.holds(m))
    }
}

pub fn random_formula(seed: u64, max_vars: u32) -> RandomFormula {
    let mut rng = StdRng::seed_from_u64(seed);
    let vars = rng.gen_range(1..=max_vars);
    let mut formula = Formula::with_vars(vars);
    let count = rng.gen_range(0..=(vars as usize * 5).max(1));
    let mut clauses = Vec::new();
    for _ in 0..count {
        let width = rng.gen_range(1..=3.min(vars as usize + 1));
        let mut lits = Vec::new();
        let (mut pos, mut neg) = (0u32, 0u32);
        for _ in 0..width {
            let v = rng.gen_range(0..vars);
            let sign = rng.gen_bool(0.5);
            if sign {
                pos |= 1 << v;
            } else {
                neg |= 1 << v;
            }
            lits.push(Lit::new(Var(v), sign));
        }
        formula.add_clause(lits);
        clauses.push((pos, neg));
    }
    let mut amo = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        let mut group = 0u32;
        for _ in 0..rng.gen_range(2..=8) {
            group |= 1 << rng.gen_range(0..vars);
        }
        formula.add_at_most_one((0..vars).filter(|v| group >> v & 1 == 1).map(|v| Var(v).positive()));
        amo.push(group);
    }
    RandomFormula { vars, clauses, amo, formula }
}

pub fn model_mask(values: &[bool], vars: u32) -> u32 {
    (0..vars).filter(|&v| values[v as usize]).fold(0, |m, v| m | 1 << v)
}

/// Compares every library route against the brute-force semantics on one
/// random CFG. Returns a description of the first disagreement.
pub fn compare_on(seed: u64) -> Result<(), String> {
    use leakscope::feasibility::{check_leak_feasible, FeasibilityVerdict};
    use leakscope::summary_validation::{check_allocator, check_deallocator, CheckOptions, Outcome, Strategy};

    let g = random_cfg(seed, 12);
    let cfg = &g.cfg;
    let fail = |what: &str| Err(format!("seed {seed}: {what}\n{}", cfg.to_dot()));

    for site in cfg.alloc_sites() {
        let expected = g.leak_feasible(site);
        match check_leak_feasible(cfg, site).map_err(|e| e.to_string())? {
            FeasibilityVerdict::Feasible { witness, exit } => {
                let Some(p) = g.lift(&witness) else { return fail("leak witness is not a path") };
                if *p.nodes.last().unwrap() != exit || !g.consistent(&p) || !g.leaks_along(site, &p) {
                    return fail("leak witness does not leak");
                }
                if !expected {
                    return fail(&format!("site {site}: feasible, oracle says infeasible"));
                }
            }
            FeasibilityVerdict::Infeasible if expected => return fail(&format!("site {site}: infeasible, oracle says feasible")),
            FeasibilityVerdict::Infeasible => {}
            FeasibilityVerdict::Unknown { reason } => return fail(&format!("unknown: {reason}")),
        }
    }

    for strategy in [Strategy::Enumerate, Strategy::Solver] {
        let check = |o: Outcome, expected: bool, accept: &dyn Fn(&OraclePath) -> bool, what: &str| -> Result<(), String> {
            match o {
                Outcome::Valid { witness } => {
                    let Some(p) = g.lift(&witness) else { return fail(&format!("{what}: witness is not a path")) };
                    if !g.consistent(&p) || !accept(&p) {
                        return fail(&format!("{what}: witness does not justify the verdict"));
                    }
                    if !expected {
                        return fail(&format!("{what} via {strategy:?}: valid, oracle says rejected"));
                    }
                    Ok(())
                }
                Outcome::Rejected { .. } if expected => fail(&format!("{what} via {strategy:?}: rejected, oracle says valid")),
                Outcome::Rejected { .. } => Ok(()),
                Outcome::Unknown { reason } => fail(&format!("{what}: unknown: {reason}")),
            }
        };
        let opts = CheckOptions { strategy, ..CheckOptions::default() };
        check(check_allocator(cfg, &opts), g.allocator_valid(), &|p| g.returns_allocation(p), "allocator")?;
        for fields in [false, true] {
            let opts = CheckOptions { count_field_frees: fields, ..opts };
            for param in 0..2 {
                check(
                    check_deallocator(cfg, param, &opts),
                    g.deallocator_valid(param, fields),
                    &|p| g.frees_param(param, fields, p),
                    &format!("deallocator arg{param} fields={fields}"),
                )?;
            }
        }
    }
    Ok(())
}

/// Solver result against the truth table on one random formula.
pub fn compare_formula(seed: u64) -> Result<(), String> {
    use leakscope::solver::{solve, SatResult};
    let f = random_formula(seed, 16);
    let expected = f.brute_force_sat();
    match solve(&f.formula).map_err(|e| format!("seed {seed}: {e}"))? {
        SatResult::Sat(m) if expected => {
            if f.holds(model_mask(m.values(), f.vars)) {
                Ok(())
            } else {
                Err(format!("seed {seed}: model violates the formula"))
            }
        }
        SatResult::Unsat if !expected => Ok(()),
        r => Err(format!("seed {seed}: solver says sat={}, truth table says {expected}", r.is_sat())),
    }
}
