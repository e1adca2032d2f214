//! Classify every candidate with the offline heuristic, validate the
//! summaries against each function's CFG, and show why claims are rejected.
//!
//! cargo run --example validate_summaries -- [SOURCE_ROOT]

use std::path::PathBuf;

use leakscope::extraction::{parse_codebase, prefilter, ExtractionConfig};
use leakscope::llm_client::heuristic_classify_all;
use leakscope::summaries::FunctionSummary;
use leakscope::summary_validation::{rejection_report, validated_hints, Outcome, ValidationConfig, Validator};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus"));
    let extraction = ExtractionConfig::default();
    let cb = parse_codebase(&root, &extraction)?;
    let candidates = prefilter(&cb, &extraction);
    let config = ValidationConfig::default();

    let mut summaries = heuristic_classify_all(&candidates, &cb, &config);
    // Claims a model could plausibly get wrong.
    summaries.push(FunctionSummary::allocator("reset_session"));
    summaries.push(FunctionSummary::deallocator("copy_name", 0));
    summaries.push(FunctionSummary::deallocator("node_destroy", 3));

    let verdicts = Validator::new(&cb, config).validate_all(&summaries);
    for v in &verdicts {
        let s = &v.summary;
        let detail = match &v.outcome {
            Outcome::Valid { witness } => format!("valid, witness nodes {:?}", witness.nodes),
            Outcome::Rejected { reason } => format!("rejected: {reason}"),
            Outcome::Unknown { reason } => format!("unknown (kept): {reason}"),
        };
        println!("{:<28} {:<11} {:<6} {detail}", s.name, s.role.to_string(), s.target.to_string());
    }

    println!("\n--- rejections ---\n{}", rejection_report(&verdicts));
    println!("--- validated hints ---\n{}", validated_hints(&verdicts).to_json());
    Ok(())
}
