//! Build the CFG of a function that leaks when a settings call fails, ask the
//! solver for a leaking path, and replay the witness.
//!
//! cargo run --example leak_feasibility
//! cargo run --example leak_feasibility -- --dot | dot -Tsvg > cfg.svg

use leakscope::cfg::{build_cfg, BuildOptions, Primitives, SummaryResolver};
use leakscope::extraction::parse_source;
use leakscope::feasibility::{check_leak_feasible, encode_leak_feasibility, leak_state_along, FeasibilityVerdict, Tracked};
use leakscope::solver::solve;
use leakscope::summaries::{FunctionSummary, HintsFile};
use leakscope::Language;

const SOURCE: &str = r#"
BOOL settings_set_certificate(rdpSettings* settings, const rdpCertificate* src)
{
    rdpCertificate* cert = freerdp_certificate_clone(src);
    if (!cert)
        return FALSE;
    if (!freerdp_settings_set_pointer_len(settings, FreeRDP_RdpServerCertificate, cert, 1))
        return FALSE;
    return TRUE;
}
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (records, _, _) = parse_source("settings.c", SOURCE, Language::C);
    let record = &records[0];
    let hints = HintsFile::from_summaries([FunctionSummary::allocator("freerdp_certificate_clone")]);
    let sinks = vec!["freerdp_settings_set_pointer_len".to_string()];
    let primitives = Primitives::default();
    let resolver = SummaryResolver { primitives: &primitives, hints: &hints, sinks: &sinks };
    let cfg = build_cfg(record, &resolver, BuildOptions::default())?;

    if std::env::args().any(|a| a == "--dot") {
        print!("{}", cfg.to_dot());
        return Ok(());
    }

    for (i, n) in cfg.nodes.iter().enumerate() {
        let succ: Vec<String> = cfg.out_edges(i).map(|e| format!("{} ({:?})", e.to, e.polarity)).collect();
        println!("{i:>2} line {:<3} {:<48} -> {}", n.span.start_line, n.kind.label(), succ.join(", "));
    }
    println!("condition variables: {:?}", cfg.cond_vars);

    let site = cfg.alloc_sites()[0];
    let enc = encode_leak_feasibility(&cfg, site)?;
    for r in cfg.returns() {
        let sat = solve(&enc.query(r))?.is_sat();
        println!("leak reaching return node {r}: {}", if sat { "SAT" } else { "UNSAT" });
    }

    match check_leak_feasible(&cfg, site)? {
        FeasibilityVerdict::Feasible { witness, exit } => {
            println!("\nfeasible leak ending at node {exit}");
            for (b, took_true) in &witness.branch_literals {
                let cond = match &cfg.nodes[*b].kind {
                    leakscope::cfg::NodeKind::Branch { cond } => cond.as_str(),
                    _ => "?",
                };
                println!("  branch {b} `{cond}` taken {}", if *took_true { "true" } else { "false" });
            }
            let state = leak_state_along(&cfg, &Tracked::new(&cfg, site)?, &witness);
            println!("  alloc={} freed={} escaped={}", state.alloc, state.freed, state.escaped);
        }
        other => println!("\n{other:?}"),
    }
    Ok(())
}
