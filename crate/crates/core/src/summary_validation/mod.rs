//! Checks model-proposed summaries against each function's CFG.

mod alias;
mod routes;

use std::cell::Cell;
use std::collections::{BTreeSet, HashMap};
use std::sync::{Mutex, RwLock};

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use alias::{compute_alias_set, self_closure, AliasSet};
pub use routes::{
    allocator_by_enumeration, allocator_by_solver, check_allocator, check_deallocator, deallocator_by_enumeration,
    deallocator_by_solver, reaches, blocks_alloc, CheckOptions, Outcome, Strategy,
};

use crate::cfg::{build_cfg, BuildOptions, CallResolver, Cfg, CfgError, Primitives};
use crate::extraction::{Codebase, FunctionRecord};
use crate::summaries::{FunctionSummary, HintsFile, MmRole, OwnershipTarget, Provenance};

pub const DEFAULT_MAX_DEPTH: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub primitives: Primitives,
    pub sinks: Vec<String>,
    pub max_depth: usize,
    pub share_conditions: bool,
    pub check: CheckOptions,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            primitives: Primitives::default(),
            sinks: Vec::new(),
            max_depth: DEFAULT_MAX_DEPTH,
            share_conditions: true,
            check: CheckOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationVerdict {
    pub summary: FunctionSummary,
    #[serde(flatten)]
    pub outcome: Outcome,
}

impl ValidationVerdict {
    /// Valid summaries and, conservatively, undecided ones.
    pub fn retained(&self) -> bool {
        !self.outcome.is_rejected()
    }
}

/// Depth-bounded view of the codebase call graph.
pub struct CallGraphView<'a> {
    codebase: &'a Codebase,
    max_depth: usize,
}

impl<'a> CallGraphView<'a> {
    pub fn new(codebase: &'a Codebase, max_depth: usize) -> Self {
        CallGraphView { codebase, max_depth }
    }

    pub fn callees(&self, name: &str) -> impl Iterator<Item = &'a str> {
        self.codebase.call_graph_edges.get(name).into_iter().flatten().map(String::as_str)
    }

    /// Functions reachable from `name` in 1..=max_depth calls.
    pub fn reachable(&self, name: &str) -> BTreeSet<&'a str> {
        let mut seen = BTreeSet::new();
        let mut frontier: Vec<&str> = self.callees(name).collect();
        for _ in 0..self.max_depth {
            let mut next = Vec::new();
            for f in frontier {
                if seen.insert(f) {
                    next.extend(self.callees(f));
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        seen
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Probe {
    Allocator(String),
    FreedArgs(String),
}

/// Summary validation with on-demand, memoized resolution of callees.
pub struct Validator<'a> {
    codebase: &'a Codebase,
    config: ValidationConfig,
    known: RwLock<HintsFile>,
    memo: Mutex<HashMap<Probe, Vec<usize>>>,
}

struct ChainResolver<'v, 'a> {
    validator: &'v Validator<'a>,
    stack: Vec<String>,
    tainted: Cell<bool>,
}

impl CallResolver for ChainResolver<'_, '_> {
    fn is_allocator(&self, callee: &str) -> bool {
        self.validator.probe_allocator(callee, &self.stack, &self.tainted)
    }

    fn freed_args(&self, callee: &str) -> Vec<usize> {
        self.validator.probe_freed_args(callee, &self.stack, &self.tainted)
    }

    fn is_sink(&self, callee: &str) -> bool {
        self.validator.config.sinks.iter().any(|s| s == callee)
    }
}

fn arity(record: &FunctionRecord) -> usize {
    record.params.iter().filter(|p| p.ty != "..." && p.name != "__VA_ARGS__").count()
}

impl<'a> Validator<'a> {
    pub fn new(codebase: &'a Codebase, config: ValidationConfig) -> Self {
        Validator { codebase, config, known: RwLock::new(HintsFile::default()), memo: Mutex::new(HashMap::new()) }
    }

    /// Seeds summaries that count as already validated.
    pub fn with_known(self, hints: &HintsFile) -> Self {
        for s in hints.summaries() {
            self.known.write().expect("lock").insert(s.clone().with_validated(true));
        }
        self
    }

    pub fn config(&self) -> &ValidationConfig {
        &self.config
    }

    pub fn known(&self) -> HintsFile {
        self.known.read().expect("lock").clone()
    }

    fn cutoff(&self, callee: &str, stack: &[String], tainted: &Cell<bool>) -> bool {
        if stack.iter().any(|s| s == callee) || stack.len() >= self.config.max_depth {
            tainted.set(true);
            return true;
        }
        false
    }

    fn memo_get(&self, p: &Probe) -> Option<Vec<usize>> {
        self.memo.lock().expect("lock").get(p).cloned()
    }

    fn memo_put(&self, p: Probe, v: Vec<usize>) {
        self.memo.lock().expect("lock").insert(p, v);
    }

    fn probe_allocator(&self, callee: &str, stack: &[String], tainted: &Cell<bool>) -> bool {
        if self.config.primitives.is_alloc(callee) || self.known.read().expect("lock").is_allocator(callee) {
            return true;
        }
        let key = Probe::Allocator(callee.to_string());
        if let Some(v) = self.memo_get(&key) {
            return !v.is_empty();
        }
        let Some(record) = self.codebase.get(callee) else { return false };
        if self.cutoff(callee, stack, tainted) {
            return false;
        }
        let Ok((cfg, inner_taint)) = self.cfg_at(record, stack) else { return false };
        let ok = check_allocator(&cfg, &self.config.check).is_valid();
        if inner_taint {
            tainted.set(true);
        } else {
            self.memo_put(key, if ok { vec![0] } else { Vec::new() });
        }
        ok
    }

    fn probe_freed_args(&self, callee: &str, stack: &[String], tainted: &Cell<bool>) -> Vec<usize> {
        let mut out = self.config.primitives.freed_args(callee);
        for i in self.known.read().expect("lock").freed_args(callee) {
            if !out.contains(&i) {
                out.push(i);
            }
        }
        if self.config.primitives.is_free(callee) {
            return out;
        }
        let key = Probe::FreedArgs(callee.to_string());
        let found = match self.memo_get(&key) {
            Some(v) => v,
            None => {
                let Some(record) = self.codebase.get(callee) else { return out };
                if self.cutoff(callee, stack, tainted) {
                    return out;
                }
                let Ok((cfg, inner_taint)) = self.cfg_at(record, stack) else { return out };
                let found: Vec<usize> = (0..arity(record))
                    .filter(|&i| check_deallocator(&cfg, i, &self.config.check).is_valid())
                    .collect();
                if inner_taint {
                    tainted.set(true);
                } else {
                    self.memo_put(key, found.clone());
                }
                found
            }
        };
        for i in found {
            if !out.contains(&i) {
                out.push(i);
            }
        }
        out.sort_unstable();
        out
    }

    /// CFG of `record` with callees resolved one level deeper than `stack`.
    fn cfg_at(&self, record: &FunctionRecord, stack: &[String]) -> Result<(Cfg, bool), CfgError> {
        let mut chain = stack.to_vec();
        chain.push(record.name.clone());
        let resolver = ChainResolver { validator: self, stack: chain, tainted: Cell::new(false) };
        let cfg = build_cfg(record, &resolver, BuildOptions { share_conditions: self.config.share_conditions })?;
        Ok((cfg, resolver.tainted.get()))
    }

    pub fn cfg_for(&self, record: &FunctionRecord) -> Result<Cfg, CfgError> {
        self.cfg_at(record, &[]).map(|(c, _)| c)
    }

    pub fn validate(&self, summary: &FunctionSummary) -> ValidationVerdict {
        let verdict = |outcome| ValidationVerdict { summary: summary.clone(), outcome };
        let Some(record) = self.codebase.get(&summary.name) else {
            return verdict(Outcome::Rejected { reason: "no definition in the codebase".into() });
        };
        let cfg = match self.cfg_for(record) {
            Ok(c) => c,
            Err(e) => return verdict(Outcome::Rejected { reason: e.to_string() }),
        };
        let outcome = match (summary.role, summary.target) {
            (MmRole::Allocator, _) => check_allocator(&cfg, &self.config.check),
            (MmRole::Deallocator, OwnershipTarget::Arg(i)) if i >= arity(record) => {
                Outcome::Rejected { reason: format!("argument {i} out of range for arity {}", arity(record)) }
            }
            (MmRole::Deallocator, OwnershipTarget::Arg(i)) => check_deallocator(&cfg, i, &self.config.check),
            (MmRole::Deallocator, OwnershipTarget::Return) => Outcome::Rejected { reason: "deallocator without argument target".into() },
        };
        verdict(outcome)
    }

    fn publish(&self, verdicts: &[ValidationVerdict]) {
        let mut known = self.known.write().expect("lock");
        for v in verdicts.iter().filter(|v| v.retained()) {
            known.insert(v.summary.clone().with_validated(true));
        }
    }

    /// Validates every summary. Call-graph regions are processed callees
    /// first; within a region deallocators go before allocators, and one
    /// extra round revisits rejections once everything is known.
    pub fn validate_all(&self, summaries: &[FunctionSummary]) -> Vec<ValidationVerdict> {
        let mut verdicts: Vec<Option<ValidationVerdict>> = vec![None; summaries.len()];
        for region in self.regions(summaries) {
            for role in [MmRole::Deallocator, MmRole::Allocator] {
                let batch: Vec<usize> = region.iter().copied().filter(|&i| summaries[i].role == role).collect();
                let done: Vec<ValidationVerdict> = batch.par_iter().map(|&i| self.validate(&summaries[i])).collect();
                self.publish(&done);
                for (i, v) in batch.into_iter().zip(done) {
                    verdicts[i] = Some(v);
                }
            }
        }
        self.memo.lock().expect("lock").clear();
        let retry: Vec<usize> =
            (0..summaries.len()).filter(|&i| verdicts[i].as_ref().is_some_and(|v| v.outcome.is_rejected())).collect();
        let again: Vec<ValidationVerdict> = retry.par_iter().map(|&i| self.validate(&summaries[i])).collect();
        self.publish(&again);
        for (i, v) in retry.into_iter().zip(again) {
            verdicts[i] = Some(v);
        }
        verdicts.into_iter().map(|v| v.expect("every summary visited")).collect()
    }

    /// Summary indices grouped by call-graph SCC, callees first.
    fn regions(&self, summaries: &[FunctionSummary]) -> Vec<Vec<usize>> {
        let mut graph = DiGraph::<&str, ()>::new();
        let mut ids = HashMap::new();
        let mut names: BTreeSet<&str> = self.codebase.call_graph_edges.keys().map(String::as_str).collect();
        names.extend(summaries.iter().map(|s| s.name.as_str()));
        for n in &names {
            ids.insert(*n, graph.add_node(*n));
        }
        for (caller, callees) in &self.codebase.call_graph_edges {
            for c in callees {
                if let (Some(&a), Some(&b)) = (ids.get(caller.as_str()), ids.get(c.as_str())) {
                    graph.add_edge(a, b, ());
                }
            }
        }
        let mut out = Vec::new();
        for scc in tarjan_scc(&graph) {
            let members: BTreeSet<&str> = scc.iter().map(|&n| graph[n]).collect();
            let region: Vec<usize> = (0..summaries.len()).filter(|&i| members.contains(summaries[i].name.as_str())).collect();
            if !region.is_empty() {
                out.push(region);
            }
        }
        out
    }

    /// Every summary the function's own CFG supports, for offline use.
    pub fn classify(&self, record: &FunctionRecord) -> Vec<FunctionSummary> {
        let Ok(cfg) = self.cfg_for(record) else { return Vec::new() };
        let mut out = Vec::new();
        if check_allocator(&cfg, &self.config.check).is_valid() {
            out.push(FunctionSummary::allocator(&record.name).with_provenance(Provenance::Heuristic));
        }
        for i in 0..arity(record) {
            if check_deallocator(&cfg, i, &self.config.check).is_valid() {
                out.push(FunctionSummary::deallocator(&record.name, i).with_provenance(Provenance::Heuristic));
            }
        }
        out
    }
}

/// Retained summaries, marked validated.
pub fn validated_hints(verdicts: &[ValidationVerdict]) -> HintsFile {
    HintsFile::from_summaries(verdicts.iter().filter(|v| v.retained()).map(|v| v.summary.clone().with_validated(true)))
}

/// Tab-separated rows for rejected and undecided summaries.
pub fn rejection_report(verdicts: &[ValidationVerdict]) -> String {
    let mut out = String::from("name\trole\ttarget\toutcome\treason\n");
    let mut rows: Vec<String> = verdicts
        .iter()
        .filter_map(|v| {
            let (kind, reason) = match &v.outcome {
                Outcome::Valid { .. } => return None,
                Outcome::Rejected { reason } => ("rejected", reason),
                Outcome::Unknown { reason } => ("unknown-retained", reason),
            };
            let reason = reason.replace(['\t', '\n'], " ");
            Some(format!("{}\t{}\t{}\t{kind}\t{reason}\n", v.summary.name, v.summary.role, v.summary.target))
        })
        .collect();
    rows.sort();
    rows.dedup();
    out.extend(rows);
    out
}
