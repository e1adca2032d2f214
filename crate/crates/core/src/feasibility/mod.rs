//! Leak feasibility over a CFG: the per-site encoding, warning filtering,
//! and the internal per-branch leak scanner.

use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer_bridge::{TraceStep, Warning, WarningSource, WarningStatus, LINE_TOLERANCE};
use crate::cfg::{build_cfg, BuildOptions, Cfg, NodeKind, Path, Primitives, SummaryResolver};
use crate::encoding::{Gen, PathEncoding};
use crate::extraction::{Codebase, FunctionRecord};
use crate::solver::{solve_with_budget, Formula, SatResult, Var, DEFAULT_CONFLICT_BUDGET};
use crate::summaries::HintsFile;
use crate::summary_validation::{blocks_alloc, self_closure};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeasibilityConfig {
    pub primitives: Primitives,
    pub sinks: Vec<String>,
    pub share_conditions: bool,
    pub conflict_budget: u64,
}

impl Default for FeasibilityConfig {
    fn default() -> Self {
        FeasibilityConfig {
            primitives: Primitives::default(),
            sinks: Vec::new(),
            share_conditions: true,
            conflict_budget: DEFAULT_CONFLICT_BUDGET,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("node {node} of {function} is not an allocation")]
    NotAnAllocation { function: String, node: usize },
}

/// The pointer tracked for one allocation site.
#[derive(Debug, Clone)]
pub struct Tracked {
    pub site: usize,
    pub aliases: BTreeSet<String>,
}

impl Tracked {
    pub fn new(cfg: &Cfg, site: usize) -> Result<Tracked, EncodeError> {
        match &cfg.nodes.get(site).map(|n| &n.kind) {
            Some(NodeKind::Alloc { target, .. }) => Ok(Tracked { site, aliases: self_closure(cfg, target) }),
            _ => Err(EncodeError::NotAnAllocation { function: cfg.function.clone(), node: site }),
        }
    }

    fn frees(&self, cfg: &Cfg, n: usize) -> bool {
        n != self.site && matches!(&cfg.nodes[n].kind, NodeKind::Free { arg, .. } if self.aliases.contains(arg))
    }

    fn escapes(&self, cfg: &Cfg, n: usize) -> bool {
        n != self.site
            && match &cfg.nodes[n].kind {
                NodeKind::Escape { var, .. } => self.aliases.contains(var),
                NodeKind::Return { value: Some(v) } => self.aliases.contains(v),
                _ => false,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakState {
    pub alloc: bool,
    pub freed: bool,
    pub escaped: bool,
}

impl LeakState {
    pub fn is_leak(self) -> bool {
        self.alloc && !self.freed && !self.escaped
    }
}

/// Replays `path` through the node effects for the tracked site.
pub fn leak_state_along(cfg: &Cfg, tracked: &Tracked, path: &Path) -> LeakState {
    let mut s = LeakState { alloc: false, freed: false, escaped: false };
    for (i, &n) in path.nodes.iter().enumerate() {
        if i > 0 {
            let e = crate::cfg::Edge { from: path.nodes[i - 1], to: n, polarity: path.arm_at(cfg, i - 1) };
            if blocks_alloc(cfg, &tracked.aliases, &e) {
                s.alloc = false;
            }
        }
        if n == tracked.site {
            s = LeakState { alloc: true, freed: false, escaped: false };
        }
        s.freed |= tracked.frees(cfg, n);
        s.escaped |= tracked.escapes(cfg, n);
    }
    s
}

pub struct LeakEncoding {
    pub tracked: Tracked,
    pub paths: PathEncoding,
    pub alloc: Vec<Var>,
    pub freed: Vec<Var>,
    pub escaped: Vec<Var>,
}

impl LeakEncoding {
    /// Formula whose models are leaking paths ending at Return `r`.
    pub fn query(&self, r: usize) -> Formula {
        let mut f = self.paths.formula.clone();
        f.add_unit(self.paths.reach(r));
        f.add_unit(self.alloc[r].positive());
        f.add_unit(self.freed[r].negative());
        f.add_unit(self.escaped[r].negative());
        f
    }
}

pub fn encode_leak_feasibility(cfg: &Cfg, site: usize) -> Result<LeakEncoding, EncodeError> {
    let tracked = Tracked::new(cfg, site)?;
    let mut paths = PathEncoding::new(cfg);
    let alloc = paths.add_track(
        cfg,
        |n| if n == site { Gen::Start } else { Gen::Inherit },
        |e| !blocks_alloc(cfg, &tracked.aliases, e),
    );
    let gen_for = |hit: &dyn Fn(usize) -> bool, n: usize| {
        if n == site {
            Gen::Clear
        } else if hit(n) {
            Gen::Set
        } else {
            Gen::Inherit
        }
    };
    let freed = paths.add_track(cfg, |n| gen_for(&|m| tracked.frees(cfg, m), n), |_| true);
    let escaped = paths.add_track(cfg, |n| gen_for(&|m| tracked.escapes(cfg, m), n), |_| true);
    Ok(LeakEncoding { tracked, paths, alloc, freed, escaped })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict")]
pub enum FeasibilityVerdict {
    Feasible { witness: Path, exit: usize },
    Infeasible,
    Unknown { reason: String },
}

impl FeasibilityVerdict {
    pub fn keeps_warning(&self) -> bool {
        !matches!(self, FeasibilityVerdict::Infeasible)
    }
}

pub fn check_leak_feasible(cfg: &Cfg, site: usize) -> Result<FeasibilityVerdict, EncodeError> {
    check_leak_feasible_with_budget(cfg, site, DEFAULT_CONFLICT_BUDGET)
}

/// Tries each Return in node order; the first satisfiable query wins.
pub fn check_leak_feasible_with_budget(cfg: &Cfg, site: usize, budget: u64) -> Result<FeasibilityVerdict, EncodeError> {
    let enc = encode_leak_feasibility(cfg, site)?;
    for r in cfg.returns() {
        match solve_with_budget(&enc.query(r), budget) {
            Ok(SatResult::Sat(m)) => {
                return Ok(FeasibilityVerdict::Feasible { witness: enc.paths.witness(cfg, &m, r), exit: r });
            }
            Ok(SatResult::Unsat) => {}
            Err(e) => return Ok(FeasibilityVerdict::Unknown { reason: e.to_string() }),
        }
    }
    Ok(FeasibilityVerdict::Infeasible)
}

fn cfg_with_hints(record: &FunctionRecord, hints: &HintsFile, config: &FeasibilityConfig) -> Result<Cfg, crate::cfg::CfgError> {
    let resolver = SummaryResolver { primitives: &config.primitives, hints, sinks: &config.sinks };
    build_cfg(record, &resolver, BuildOptions { share_conditions: config.share_conditions })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterResult {
    pub retained: Vec<Warning>,
    pub discarded: Vec<Warning>,
}

pub const TAG_NOT_ANALYZABLE: &str = "not analyzable";
pub const TAG_NO_ALLOC_SITE: &str = "no allocation site";
pub const TAG_UNKNOWN: &str = "feasibility unknown";
pub const TAG_INFEASIBLE: &str = "infeasible";

fn resolve<'c>(w: &Warning, codebase: &'c Codebase) -> Option<&'c FunctionRecord> {
    if !w.function.is_empty() {
        if let Some(r) = codebase.records.iter().find(|r| r.name == w.function && crate::extraction::same_file(&r.span.file, &w.file)) {
            return Some(r);
        }
        if let Some(r) = codebase.get(&w.function) {
            return Some(r);
        }
    }
    codebase.function_at(&w.file, w.line)
}

fn filter_one(mut w: Warning, codebase: &Codebase, hints: &HintsFile, config: &FeasibilityConfig) -> (bool, Warning) {
    let Some(record) = resolve(&w, codebase) else {
        w.tag(TAG_NOT_ANALYZABLE);
        w.advance(WarningStatus::FeasibilityRetained);
        return (true, w);
    };
    if w.function.is_empty() {
        w.function = record.name.clone();
    }
    let cfg = match cfg_with_hints(record, hints, config) {
        Ok(c) => c,
        Err(_) => {
            w.tag(TAG_NOT_ANALYZABLE);
            w.advance(WarningStatus::FeasibilityRetained);
            return (true, w);
        }
    };
    let all = cfg.alloc_sites();
    if all.is_empty() {
        w.tag(TAG_NO_ALLOC_SITE);
        w.advance(WarningStatus::FeasibilityRetained);
        return (true, w);
    }
    let near: Vec<usize> =
        all.iter().copied().filter(|&s| cfg.nodes[s].span.start_line.abs_diff(w.alloc_line()) <= LINE_TOLERANCE).collect();
    let sites = if near.is_empty() { all } else { near };
    let mut keep = false;
    for s in sites {
        match check_leak_feasible_with_budget(&cfg, s, config.conflict_budget).expect("alloc site") {
            FeasibilityVerdict::Feasible { .. } => keep = true,
            FeasibilityVerdict::Unknown { .. } => {
                w.tag(TAG_UNKNOWN);
                keep = true;
            }
            FeasibilityVerdict::Infeasible => {}
        }
    }
    if keep {
        w.advance(WarningStatus::FeasibilityRetained);
    } else {
        w.tag(TAG_INFEASIBLE);
        w.advance(WarningStatus::FeasibilityDiscarded);
    }
    (keep, w)
}

/// Keeps a warning when some matching allocation site has a feasible or
/// undecided leak path.
pub fn filter_warnings(warnings: Vec<Warning>, codebase: &Codebase, hints: &HintsFile, config: &FeasibilityConfig) -> FilterResult {
    let judged: Vec<(bool, Warning)> = warnings.into_par_iter().map(|w| filter_one(w, codebase, hints, config)).collect();
    let mut out = FilterResult::default();
    for (keep, w) in judged {
        if keep {
            out.retained.push(w);
        } else {
            out.discarded.push(w);
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanResult {
    pub warnings: Vec<Warning>,
    pub diagnostics: Vec<String>,
}

pub const TAG_GOTO_EXIT: &str = "goto-label exit";
pub const TAG_EARLY_RETURN: &str = "early return";

fn describe_exit(cfg: &Cfg, exit: usize) -> (String, Option<&'static str>) {
    let node = &cfg.nodes[exit];
    if let Some(label) = &node.label {
        return (format!("the `{label}` exit"), Some(TAG_GOTO_EXIT));
    }
    let last = cfg.returns().into_iter().max_by_key(|&r| (cfg.nodes[r].span.start_line, r));
    if last != Some(exit) {
        return ("an early return".into(), Some(TAG_EARLY_RETURN));
    }
    ("the return".into(), None)
}

fn trace_of(cfg: &Cfg, path: &Path) -> Vec<TraceStep> {
    path.nodes
        .iter()
        .enumerate()
        .filter(|&(_, &n)| !matches!(cfg.nodes[n].kind, NodeKind::Entry | NodeKind::Other))
        .map(|(i, &n)| {
            let mut text = cfg.nodes[n].kind.label();
            if cfg.nodes[n].kind.is_branch() && i + 1 < path.nodes.len() {
                text.push_str(&format!(" [{:?}]", path.arm_at(cfg, i)));
            }
            TraceStep { span: cfg.nodes[n].span.clone(), text }
        })
        .collect()
}

/// One warning per allocation site with a feasible leak path.
pub fn scan_function(record: &FunctionRecord, hints: &HintsFile, config: &FeasibilityConfig) -> ScanResult {
    let mut out = ScanResult::default();
    let cfg = match cfg_with_hints(record, hints, config) {
        Ok(c) => c,
        Err(e) => {
            out.diagnostics.push(format!("{}: {e}", record.name));
            return out;
        }
    };
    let mut seen = HashSet::new();
    for site in cfg.alloc_sites() {
        let verdict = check_leak_feasible_with_budget(&cfg, site, config.conflict_budget).expect("alloc site");
        let (witness, exit) = match verdict {
            FeasibilityVerdict::Feasible { witness, exit } => (witness, exit),
            FeasibilityVerdict::Unknown { reason } => {
                out.diagnostics.push(format!("{} line {}: {reason}", record.name, cfg.nodes[site].span.start_line));
                continue;
            }
            FeasibilityVerdict::Infeasible => continue,
        };
        let alloc_span = cfg.nodes[site].span.clone();
        let exit_line = cfg.nodes[exit].span.start_line;
        if !seen.insert((alloc_span.start_line, exit_line)) {
            continue;
        }
        let NodeKind::Alloc { target, callee } = &cfg.nodes[site].kind else { unreachable!() };
        let (exit_text, tag) = describe_exit(&cfg, exit);
        let shown = if target.starts_with('$') { "memory".to_string() } else { format!("`{target}`") };
        let message = format!(
            "{shown} allocated by {callee}() at line {} is neither freed nor handed off on the path to {exit_text} at line {exit_line}",
            alloc_span.start_line
        );
        let mut w = Warning::new(WarningSource::Internal, record.span.file.clone(), record.name.clone(), exit_line, message);
        w.rule_id = Some("leakscope/per-branch-leak".into());
        w.allocation_site = Some(alloc_span);
        w.trace = trace_of(&cfg, &witness);
        if let Some(t) = tag {
            w.tag(t);
        }
        out.warnings.push(w);
    }
    out.diagnostics.extend(cfg.diagnostics.iter().map(|d| format!("{}: {d}", record.name)));
    out
}

/// Scans every function record, in a stable order.
pub fn scan_codebase(codebase: &Codebase, hints: &HintsFile, config: &FeasibilityConfig) -> ScanResult {
    let parts: Vec<ScanResult> = codebase.records.par_iter().map(|r| scan_function(r, hints, config)).collect();
    let mut out = ScanResult::default();
    for p in parts {
        out.warnings.extend(p.warnings);
        out.diagnostics.extend(p.diagnostics);
    }
    out.warnings.sort_by(|a, b| (&a.file, a.line, &a.function, a.alloc_line()).cmp(&(&b.file, b.line, &b.function, b.alloc_line())));
    out
}
