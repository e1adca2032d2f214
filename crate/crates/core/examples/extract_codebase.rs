//! Parse a source tree, list what was extracted and which records survive the
//! prefilter.
//!
//! cargo run --example extract_codebase -- [SOURCE_ROOT]

use std::path::PathBuf;

use leakscope::extraction::{parse_codebase, prefilter, ExtractionConfig, RecordKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus"));
    let config = ExtractionConfig::default();
    let cb = parse_codebase(&root, &config)?;

    println!("{} records from {}", cb.records.len(), root.display());
    for r in &cb.records {
        let kind = match r.kind {
            RecordKind::Function => "fn",
            RecordKind::Macro => "macro",
        };
        let params: Vec<String> =
            r.params.iter().map(|p| if p.ty.is_empty() { p.name.clone() } else { format!("{} {}", p.ty, p.name) }).collect();
        println!(
            "  {kind:<5} {:<34} {}:{}-{}  ({}) -> {}",
            r.name,
            r.span.file,
            r.span.start_line,
            r.span.end_line,
            params.join(", "),
            r.return_type
        );
    }

    let pointer_aliases: Vec<String> = cb
        .alias_table
        .aliases
        .iter()
        .filter(|(_, e)| e.pointer_like)
        .map(|(name, e)| format!("{name} = {}", e.underlying))
        .collect();
    println!("\npointer-like typedefs: {pointer_aliases:?}");

    let candidates = prefilter(&cb, &config);
    println!("\n{} candidates after the prefilter:", candidates.len());
    for r in &candidates {
        println!("  {}", r.name);
    }
    let dropped: Vec<&str> = cb
        .records
        .iter()
        .filter(|r| !candidates.iter().any(|c| c.name == r.name))
        .map(|r| r.name.as_str())
        .collect();
    println!("dropped: {dropped:?}");

    for d in &cb.diagnostics {
        let line = d.line.map(|l| format!(":{l}")).unwrap_or_default();
        println!("diagnostic: {}{line} {}", d.file, d.message);
    }
    Ok(())
}
