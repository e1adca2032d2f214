//! Allocator and deallocator checks on one CFG, by path enumeration or by a
//! single solver query over edge variables.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::alias::{self_closure, AliasSet};
use crate::cfg::{CapExceeded, Cfg, Edge, NodeKind, Path};
use crate::encoding::{path_condition_formula, Gen, PathEncoding};
use crate::solver::{solve_with_budget, Formula, SatResult, SolveError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Enumerate when the path count fits the cap, otherwise use the solver.
    #[default]
    Auto,
    Enumerate,
    Solver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOptions {
    pub strategy: Strategy,
    pub path_cap: usize,
    pub conflict_budget: u64,
    /// Accept frees of fields derived from the parameter as deallocation.
    pub count_field_frees: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            strategy: Strategy::Auto,
            path_cap: crate::cfg::DEFAULT_PATH_CAP,
            conflict_budget: crate::solver::DEFAULT_CONFLICT_BUDGET,
            count_field_frees: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum Outcome {
    Valid { witness: Path },
    Rejected { reason: String },
    Unknown { reason: String },
}

impl Outcome {
    pub fn is_valid(&self) -> bool {
        matches!(self, Outcome::Valid { .. })
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, Outcome::Rejected { .. })
    }
}

fn sat(f: &Formula, budget: u64) -> Result<SatResult, String> {
    solve_with_budget(f, budget).map_err(|e| match e {
        SolveError::Unknown { .. } => e.to_string(),
        SolveError::Malformed(m) => format!("internal encoding error: {m}"),
    })
}

/// Allocation site data used by the reaches check.
struct Site {
    node: usize,
    target: String,
    aliases: BTreeSet<String>,
}

fn sites(cfg: &Cfg) -> Vec<Site> {
    cfg.alloc_sites()
        .into_iter()
        .map(|node| {
            let NodeKind::Alloc { target, .. } = &cfg.nodes[node].kind else { unreachable!() };
            Site { node, target: target.clone(), aliases: self_closure(cfg, target) }
        })
        .collect()
}

fn kills(cfg: &Cfg, site: &Site, n: usize) -> bool {
    if n == site.node {
        return false;
    }
    match &cfg.nodes[n].kind {
        NodeKind::Free { arg, .. } => site.aliases.contains(arg),
        NodeKind::Assign { lhs, rhs } => *lhs == site.target && !site.aliases.contains(rhs),
        NodeKind::Alloc { target, .. } => *target == site.target,
        _ => false,
    }
}

/// The null arm of a null test on a tracked alias.
pub fn blocks_alloc(cfg: &Cfg, aliases: &BTreeSet<String>, e: &Edge) -> bool {
    cfg.null_checks.get(&e.from).is_some_and(|(path, null_arm)| *null_arm == e.polarity && aliases.contains(path))
}

fn returns_alias(cfg: &Cfg, aliases: &BTreeSet<String>, n: usize) -> bool {
    matches!(&cfg.nodes[n].kind, NodeKind::Return { value: Some(v) } if aliases.contains(v))
}

fn edge_between(cfg: &Cfg, path: &Path, i: usize) -> Edge {
    Edge { from: path.nodes[i], to: path.nodes[i + 1], polarity: path.arm_at(cfg, i) }
}

/// Whether the value allocated at `path.nodes[at]` flows to the final Return.
pub fn reaches(cfg: &Cfg, path: &Path, at: usize) -> bool {
    let Some(site) = sites(cfg).into_iter().find(|s| s.node == path.nodes[at]) else { return false };
    reaches_site(cfg, &site, path, at)
}

fn reaches_site(cfg: &Cfg, site: &Site, path: &Path, at: usize) -> bool {
    for i in at..path.nodes.len() {
        let n = path.nodes[i];
        if kills(cfg, site, n) {
            return false;
        }
        if returns_alias(cfg, &site.aliases, n) {
            return true;
        }
        if i + 1 < path.nodes.len() && blocks_alloc(cfg, &site.aliases, &edge_between(cfg, path, i)) {
            return false;
        }
    }
    false
}

fn frees_target(cfg: &Cfg, aliases: &AliasSet, count_fields: bool, n: usize) -> bool {
    match &cfg.nodes[n].kind {
        NodeKind::Free { arg, .. } => aliases.is_self_alias(arg) || count_fields && aliases.is_field_derivation(arg),
        _ => false,
    }
}

pub fn check_allocator(cfg: &Cfg, opts: &CheckOptions) -> Outcome {
    match opts.strategy {
        Strategy::Solver => allocator_by_solver(cfg, opts.conflict_budget),
        Strategy::Enumerate | Strategy::Auto => match allocator_by_enumeration(cfg, opts.path_cap, opts.conflict_budget) {
            Ok(o) => o,
            Err(cap) if opts.strategy == Strategy::Auto => {
                log::debug!("{}: {} paths exceed cap {}, using solver", cfg.function, cap.count, cap.cap);
                allocator_by_solver(cfg, opts.conflict_budget)
            }
            Err(cap) => Outcome::Unknown { reason: format!("{} paths exceed cap {}", cap.count, cap.cap) },
        },
    }
}

pub fn check_deallocator(cfg: &Cfg, param_index: usize, opts: &CheckOptions) -> Outcome {
    let aliases = super::alias::compute_alias_set(cfg, param_index);
    let fields = opts.count_field_frees;
    match opts.strategy {
        Strategy::Solver => deallocator_by_solver(cfg, &aliases, fields, opts.conflict_budget),
        Strategy::Enumerate | Strategy::Auto => {
            match deallocator_by_enumeration(cfg, &aliases, fields, opts.path_cap, opts.conflict_budget) {
                Ok(o) => o,
                Err(_) if opts.strategy == Strategy::Auto => deallocator_by_solver(cfg, &aliases, fields, opts.conflict_budget),
                Err(cap) => Outcome::Unknown { reason: format!("{} paths exceed cap {}", cap.count, cap.cap) },
            }
        }
    }
}

fn no_alloc_reason(cfg: &Cfg) -> Option<Outcome> {
    cfg.alloc_sites().is_empty().then(|| Outcome::Rejected { reason: "no allocation on any path".into() })
}

pub fn allocator_by_enumeration(cfg: &Cfg, cap: usize, budget: u64) -> Result<Outcome, CapExceeded> {
    if let Some(o) = no_alloc_reason(cfg) {
        return Ok(o);
    }
    let all = sites(cfg);
    for path in cfg.enumerate_paths(cap)? {
        let candidates: Vec<(usize, &Site)> = path
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| all.iter().find(|s| s.node == *n).map(|s| (i, s)))
            .collect();
        if !candidates.iter().any(|&(i, s)| reaches_site(cfg, s, &path, i)) {
            continue;
        }
        match sat(&path_condition_formula(cfg, &path), budget) {
            Ok(SatResult::Sat(_)) => return Ok(Outcome::Valid { witness: path }),
            Ok(SatResult::Unsat) => {}
            Err(reason) => return Ok(Outcome::Unknown { reason }),
        }
    }
    Ok(Outcome::Rejected { reason: "no feasible path carries an allocated value to a return".into() })
}

pub fn allocator_by_solver(cfg: &Cfg, budget: u64) -> Outcome {
    if let Some(o) = no_alloc_reason(cfg) {
        return o;
    }
    for site in sites(cfg) {
        let mut enc = PathEncoding::new(cfg);
        let live = enc.add_track(
            cfg,
            |n| {
                if n == site.node {
                    Gen::Start
                } else if kills(cfg, &site, n) {
                    Gen::Clear
                } else {
                    Gen::Inherit
                }
            },
            |e| !blocks_alloc(cfg, &site.aliases, e),
        );
        for r in cfg.returns().into_iter().filter(|&r| returns_alias(cfg, &site.aliases, r)) {
            let mut f = enc.formula.clone();
            f.add_unit(enc.reach(r));
            f.add_unit(live[r].positive());
            match sat(&f, budget) {
                Ok(SatResult::Sat(m)) => return Outcome::Valid { witness: enc.witness(cfg, &m, r) },
                Ok(SatResult::Unsat) => {}
                Err(reason) => return Outcome::Unknown { reason },
            }
        }
    }
    Outcome::Rejected { reason: "no feasible path carries an allocated value to a return".into() }
}

fn dealloc_rejection(cfg: &Cfg, aliases: &AliasSet, count_fields: bool) -> Outcome {
    let only_fields =
        !count_fields && (0..cfg.nodes.len()).any(|n| frees_target(cfg, aliases, true, n));
    let reason = if only_fields {
        format!("only fields derived from argument {} are freed", aliases.param_index)
    } else {
        format!("no feasible path frees argument {}", aliases.param_index)
    };
    Outcome::Rejected { reason }
}

pub fn deallocator_by_enumeration(
    cfg: &Cfg,
    aliases: &AliasSet,
    count_fields: bool,
    cap: usize,
    budget: u64,
) -> Result<Outcome, CapExceeded> {
    for path in cfg.enumerate_paths(cap)? {
        if !path.nodes.iter().any(|&n| frees_target(cfg, aliases, count_fields, n)) {
            continue;
        }
        match sat(&path_condition_formula(cfg, &path), budget) {
            Ok(SatResult::Sat(_)) => return Ok(Outcome::Valid { witness: path }),
            Ok(SatResult::Unsat) => {}
            Err(reason) => return Ok(Outcome::Unknown { reason }),
        }
    }
    Ok(dealloc_rejection(cfg, aliases, count_fields))
}

pub fn deallocator_by_solver(cfg: &Cfg, aliases: &AliasSet, count_fields: bool, budget: u64) -> Outcome {
    let returns = cfg.returns();
    for f_node in (0..cfg.nodes.len()).filter(|&n| frees_target(cfg, aliases, count_fields, n)) {
        let enc = PathEncoding::new(cfg);
        let mut f = enc.formula.clone();
        f.add_unit(enc.reach(f_node));
        f.add_clause(returns.iter().map(|&r| enc.reach(r)));
        match sat(&f, budget) {
            Ok(SatResult::Sat(m)) => {
                let r = returns.iter().copied().find(|&r| m.value(enc.reach_vars[r])).expect("clause forces a return");
                return Outcome::Valid { witness: enc.witness(cfg, &m, r) };
            }
            Ok(SatResult::Unsat) => {}
            Err(reason) => return Outcome::Unknown { reason },
        }
    }
    dealloc_rejection(cfg, aliases, count_fields)
}

