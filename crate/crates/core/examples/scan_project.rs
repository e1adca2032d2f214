//! Run the built-in per-branch leak scanner over a source tree using
//! heuristically classified and validated summaries.
//!
//! cargo run --example scan_project -- [SOURCE_ROOT] [SINK...]

use std::path::PathBuf;

use leakscope::analyzer_bridge::render_table;
use leakscope::extraction::{parse_codebase, prefilter, ExtractionConfig};
use leakscope::feasibility::{scan_codebase, FeasibilityConfig};
use leakscope::llm_client::heuristic_classify_all;
use leakscope::summary_validation::{validated_hints, ValidationConfig, Validator};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let root = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus"));
    let mut sinks: Vec<String> = args.collect();
    if sinks.is_empty() {
        sinks.push("freerdp_settings_set_pointer_len".into());
    }

    let extraction = ExtractionConfig::default();
    let cb = parse_codebase(&root, &extraction)?;
    let validation = ValidationConfig { sinks: sinks.clone(), ..ValidationConfig::default() };
    let summaries = heuristic_classify_all(&prefilter(&cb, &extraction), &cb, &validation);
    let hints = validated_hints(&Validator::new(&cb, validation).validate_all(&summaries));
    println!("allocators: {:?}", hints.allocator_names());
    println!("deallocators: {:?}\n", hints.deallocator_entries());

    let config = FeasibilityConfig { sinks, ..FeasibilityConfig::default() };
    let scan = scan_codebase(&cb, &hints, &config);
    print!("{}", render_table(&scan.warnings));
    for w in &scan.warnings {
        println!("\n{}:{} in {}\n  {}\n  tags: {:?}", w.file, w.line, w.function, w.message, w.tags);
        for step in &w.trace {
            println!("    line {}: {}", step.span.start_line, step.text);
        }
    }
    for d in &scan.diagnostics {
        println!("diagnostic: {d}");
    }
    Ok(())
}
