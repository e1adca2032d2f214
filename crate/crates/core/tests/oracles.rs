mod common;

use std::collections::BTreeMap;

use leakscope::cfg::{Cfg, NodeKind};
use leakscope::summaries::{FunctionSummary, HintsFile, MmRole, OwnershipTarget, Provenance};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn routes_agree_with_path_enumeration(seed in any::<u64>()) {
        if let Err(e) = common::compare_on(seed) {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn solver_agrees_with_truth_table(seed in any::<u64>()) {
        if let Err(e) = common::compare_formula(seed) {
            prop_assert!(false, "{}", e);
        }
    }

    #[test]
    fn enumeration_matches_dfs(seed in any::<u64>()) {
        let g = common::random_cfg(seed, 12);
        let lib = g.cfg.enumerate_paths(100_000).unwrap();
        let ours = g.all_paths();
        prop_assert_eq!(lib.len(), ours.len());
        prop_assert_eq!(g.cfg.count_paths(), ours.len() as u128);
        for p in &lib {
            prop_assert!(g.lift(p).is_some());
        }
    }

    #[test]
    fn unsharing_never_removes_feasible_leaks(seed in any::<u64>()) {
        use leakscope::feasibility::check_leak_feasible;
        let g = common::random_cfg(seed, 12);
        let split = g.cfg.unshare_conditions();
        prop_assert_eq!(split.cond_vars.len(), g.cfg.branch_var.len());
        for site in g.cfg.alloc_sites() {
            if check_leak_feasible(&g.cfg, site).unwrap().keeps_warning() {
                prop_assert!(check_leak_feasible(&split, site).unwrap().keeps_warning());
            }
        }
    }

    #[test]
    fn cfg_invariants_hold(seed in any::<u64>()) {
        let g = common::random_cfg(seed, 12);
        check_invariants(&g.cfg)?;
        let json = serde_json::to_value(&g.cfg).unwrap();
        prop_assert_eq!(json["nodes"].as_array().unwrap().len(), g.cfg.nodes.len());
    }

    #[test]
    fn hints_round_trip(summaries in summary_sets()) {
        let file = HintsFile::from_summaries(summaries.clone());
        let back = HintsFile::from_json(&file.to_json()).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(back.to_json(), file.to_json());
        prop_assert_eq!(flatten(&back), merged(&summaries));
    }
}

fn check_invariants(cfg: &Cfg) -> Result<(), TestCaseError> {
    let entries = cfg.nodes.iter().filter(|n| n.kind == NodeKind::Entry).count();
    prop_assert_eq!(entries, 1);
    prop_assert!(!cfg.returns().is_empty());
    for (i, n) in cfg.nodes.iter().enumerate() {
        let out = cfg.out_edge_ids(i).len();
        match n.kind {
            NodeKind::Branch { .. } => prop_assert_eq!(out, 2),
            NodeKind::Return { .. } => prop_assert_eq!(out, 0),
            _ => prop_assert_eq!(out, 1),
        }
    }
    let order = cfg.topo_order();
    let pos: BTreeMap<usize, usize> = order.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    prop_assert_eq!(pos.len(), cfg.nodes.len());
    for e in &cfg.edges {
        prop_assert!(pos[&e.from] < pos[&e.to]);
    }
    Ok(())
}

type Key = (String, MmRole, OwnershipTarget);

fn merged(summaries: &[FunctionSummary]) -> BTreeMap<Key, (Provenance, bool)> {
    let mut out: BTreeMap<Key, (Provenance, bool)> = BTreeMap::new();
    for s in summaries {
        out.entry((s.name.clone(), s.role, s.target))
            .and_modify(|e| e.1 |= s.validated)
            .or_insert((s.provenance, s.validated));
    }
    out
}

fn flatten(file: &HintsFile) -> BTreeMap<Key, (Provenance, bool)> {
    file.summaries().map(|s| ((s.name.clone(), s.role, s.target), (s.provenance, s.validated))).collect()
}

fn summary_sets() -> impl Strategy<Value = Vec<FunctionSummary>> {
    let name = prop::sample::select(vec!["a_new", "a_free", "ctx_dup", "ctx_release", "Obj::make", "z"]);
    let prov = prop::sample::select(vec![Provenance::ModelGenerated, Provenance::Heuristic, Provenance::Manual]);
    let one = (name, prop::option::of(0usize..4), prov, any::<bool>()).prop_map(|(n, arg, p, v)| {
        let s = match arg {
            None => FunctionSummary::allocator(n),
            Some(i) => FunctionSummary::deallocator(n, i),
        };
        s.with_provenance(p).with_validated(v)
    });
    prop::collection::vec(one, 0..24)
}

#[test]
fn golden_hints_parse() {
    let text = std::fs::read_to_string(common::fixtures().join("golden_models/hints.json")).unwrap();
    let file = HintsFile::from_json(&text).unwrap();
    assert_eq!(file.len(), 3);
    assert_eq!(file.allocator_names(), vec!["freerdp_certificate_clone", "freerdp_certificate_new"]);
    assert_eq!(file.deallocator_entries(), vec![("freerdp_certificate_free", 0)]);
}

#[test]
fn reject_pairing_mismatch() {
    let bad = r#"{"hints": {"f": [{"name": "f", "role": "Allocator", "target": "arg0"}]}}"#;
    assert!(HintsFile::from_json(bad).is_err());
    let misfiled = r#"{"hints": {"f": [{"name": "g", "role": "Allocator", "target": "return"}]}}"#;
    assert!(HintsFile::from_json(misfiled).is_err());
}
