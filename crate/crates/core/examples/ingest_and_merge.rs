//! Ingest CodeQL SARIF and Infer reports, merge them with the internal
//! scanner's findings, and drop the ones with no feasible leaking path.
//!
//! cargo run --example ingest_and_merge -- [SOURCE_ROOT] [SARIF] [INFER_JSON]

use std::path::PathBuf;

use leakscope::analyzer_bridge::{ingest_codeql_results, ingest_infer_results, merge_warnings, render_table, RuleAllowlist};
use leakscope::extraction::{parse_codebase, prefilter, ExtractionConfig};
use leakscope::feasibility::{filter_warnings, scan_codebase, FeasibilityConfig};
use leakscope::llm_client::heuristic_classify_all;
use leakscope::summary_validation::{validated_hints, ValidationConfig, Validator};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut args = std::env::args().skip(1).map(PathBuf::from);
    let root = args.next().unwrap_or_else(|| fx.join("corpus"));
    let sarif = args.next().unwrap_or_else(|| fx.join("analyzers/codeql.sarif"));
    let infer = args.next().unwrap_or_else(|| fx.join("analyzers/infer_report.json"));

    let sinks = vec!["freerdp_settings_set_pointer_len".to_string()];
    let extraction = ExtractionConfig::default();
    let cb = parse_codebase(&root, &extraction)?;
    let validation = ValidationConfig { sinks: sinks.clone(), ..ValidationConfig::default() };
    let summaries = heuristic_classify_all(&prefilter(&cb, &extraction), &cb, &validation);
    let hints = validated_hints(&Validator::new(&cb, validation).validate_all(&summaries));
    let config = FeasibilityConfig { sinks, ..FeasibilityConfig::default() };

    let allow = RuleAllowlist::default();
    let codeql = ingest_codeql_results(&sarif, &allow)?;
    let pulse = ingest_infer_results(&infer, &allow)?;
    println!("CodeQL: {} leak results, {} other results skipped", codeql.warnings.len(), codeql.skipped);
    println!("Infer:  {} leak results, {} other results skipped", pulse.warnings.len(), pulse.skipped);
    let internal = scan_codebase(&cb, &hints, &config).warnings;

    let merged = merge_warnings(&[internal, codeql.warnings, pulse.warnings]);
    println!("per source: {:?}", merged.per_source);
    println!("by source set: {:?}  overlap: {}\n", merged.by_source_set, merged.overlap);

    let filtered = filter_warnings(merged.warnings, &cb, &hints, &config);
    println!("retained:\n{}", render_table(&filtered.retained));
    println!("discarded:\n{}", render_table(&filtered.discarded));
    for w in filtered.retained.iter().chain(&filtered.discarded) {
        println!("{} line {}: {:?}", w.function, w.line, w.tags);
    }
    Ok(())
}
