//! Turn a hints file into a CodeQL data extension and Infer Pulse flags.
//!
//! cargo run --example emit_analyzer_models -- [HINTS_JSON] [OUT_DIR]

use std::fs;
use std::path::PathBuf;

use leakscope::analyzer_bridge::{emit_codeql_extension, emit_infer_flags, infer_flags_file};
use leakscope::summaries::read_hints;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let hints_path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden_models/hints.json"));
    let hints = read_hints(&hints_path)?;
    println!("{} summaries from {}", hints.len(), hints_path.display());

    let yaml = emit_codeql_extension(&hints);
    let flags = emit_infer_flags(&hints);
    println!("\n# codeql/leakscope-models.model.yml\n{yaml}");
    println!("# infer/flags.txt\n{}", infer_flags_file(&flags));
    println!(
        "infer --pulse-model-alloc-pattern '{}' --pulse-model-free-pattern '{}' -- make",
        flags.alloc, flags.free
    );

    if let Some(out) = args.next().map(PathBuf::from) {
        fs::create_dir_all(out.join("codeql"))?;
        fs::create_dir_all(out.join("infer"))?;
        fs::write(out.join("codeql/leakscope-models.model.yml"), &yaml)?;
        fs::write(out.join("codeql/qlpack.yml"), "name: leakscope/models\nversion: 0.0.1\nlibrary: true\nextensionTargets:\n  codeql/cpp-all: \"*\"\ndataExtensions:\n  - \"*.model.yml\"\n")?;
        fs::write(out.join("infer/flags.txt"), infer_flags_file(&flags))?;
        println!("written under {}", out.display());
    }
    Ok(())
}
