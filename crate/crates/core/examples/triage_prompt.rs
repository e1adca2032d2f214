//! Build the triage prompt for one flagged function and apply model verdicts
//! of different shapes, including a malformed one.
//!
//! cargo run --example triage_prompt

use std::path::PathBuf;

use leakscope::analyzer_bridge::{render_table, Warning, WarningStatus};
use leakscope::extraction::{parse_codebase, ExtractionConfig};
use leakscope::feasibility::{scan_function, FeasibilityConfig};
use leakscope::summaries::{FunctionSummary, HintsFile};
use leakscope::triage::{apply_verdict, build_triage_prompt, parse_triage_verdict};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus");
    let cb = parse_codebase(&root, &ExtractionConfig::default())?;
    let record = cb.get("freerdp_settings_set_certificate").ok_or("fixture function missing")?;
    let hints = HintsFile::from_summaries([FunctionSummary::allocator("freerdp_certificate_clone")]);
    let config = FeasibilityConfig { sinks: vec!["freerdp_settings_set_pointer_len".into()], ..FeasibilityConfig::default() };
    let mut warnings: Vec<Warning> = scan_function(record, &hints, &config).warnings;
    for w in &mut warnings {
        w.advance(WarningStatus::FeasibilityRetained);
    }

    let prompt = build_triage_prompt(&warnings, record.into(), "FreeRDP");
    println!("{}", prompt.text);
    for d in &prompt.diagnostics {
        println!("prompt diagnostic: {d}");
    }

    let responses = [
        r#"{"verdict": true, "confidence": 0.9, "reason": "cert leaks when set_pointer_len fails", "bug_indices": [1]}"#,
        r#"Thinking... {"verdict": false, "confidence": 0.6, "reason": "settings takes ownership", "bug_indices": []}"#,
        r#"{"verdict": true, "bug_indices": [1]}"#,
        r#"{"verdict": true, "confidence": 0.8, "reason": "two leaks", "bug_indices": [1, 4]}"#,
    ];
    for response in responses {
        let mut ws = warnings.clone();
        let parsed = parse_triage_verdict(response);
        println!("\n> {response}");
        match &parsed {
            Ok(v) => println!("parsed: verdict={} confidence={} indices={:?}", v.verdict, v.confidence, v.bug_indices),
            Err(e) => println!("parse error: {e}"),
        }
        apply_verdict(&mut ws, parsed.as_ref().map_err(|e| e.to_string()));
        print!("{}", render_table(&ws));
    }
    Ok(())
}
