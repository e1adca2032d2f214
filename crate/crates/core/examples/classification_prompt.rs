//! Build the summary-classification prompt for one function, then parse a
//! model response into summaries.
//!
//! cargo run --example classification_prompt -- [FUNCTION] [SOURCE_ROOT]

use std::collections::BTreeSet;
use std::path::PathBuf;

use leakscope::extraction::{parse_codebase, ExtractionConfig};
use leakscope::summaries::{build_classification_prompt, parse_hints_response, select_callees, HintsFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "freerdp_certificate_clone".into());
    let root = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus"));
    let cb = parse_codebase(&root, &ExtractionConfig::default())?;
    let record = cb.get(&name).ok_or_else(|| format!("{name} not found under {}", root.display()))?;

    let callees = select_callees(record, &cb);
    println!("callee context: {:?}\n", callees.iter().map(|r| r.name.as_str()).collect::<Vec<_>>());
    println!("{}", build_classification_prompt(record, &callees));

    // What a well-behaved model might answer, wrapped in chatter.
    let response = format!(
        "Sure.\n```json\n{{\"hints\": [{{\"name\": \"{name}\", \"role\": \"Allocator\", \"target\": \"return\"}},\n {{\"name\": \"other_fn\", \"role\": \"Allocator\", \"target\": \"return\"}},\n {{\"name\": \"{name}\", \"role\": \"Deallocator\", \"target\": \"return\"}}]}}\n```"
    );
    let expected = BTreeSet::from([name.clone()]);
    let (summaries, diagnostics) = parse_hints_response(&response, &expected);
    println!("--- parsed ---");
    for d in &diagnostics {
        println!("dropped: {d}");
    }
    print!("{}", HintsFile::from_summaries(summaries).to_json());
    Ok(())
}
