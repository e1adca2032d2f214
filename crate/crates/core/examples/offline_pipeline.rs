//! Run every stage offline over the bundled corpus, with analyzer results,
//! and print the report and per-stage counters.
//!
//! cargo run --example offline_pipeline -- [OUT_DIR]

use std::path::PathBuf;

use leakscope::pipeline::{Pipeline, PipelineConfig, Stage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fx = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let tmp = tempfile::tempdir()?;
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());

    let mut config = PipelineConfig::load(&fx.join("corpus.toml"))?;
    config.root = fx.join("corpus");
    config.out_dir = out.clone();
    config.cache_dir = Some(out.join("cache"));
    config.codeql_results = vec![fx.join("analyzers/codeql.sarif")];
    config.infer_results = vec![fx.join("analyzers/infer_report.json")];

    let pipeline = Pipeline::new(config)?;
    let summary = pipeline.run(&Stage::ALL)?;
    println!("{}", std::fs::read_to_string(out.join("report.txt"))?);

    let manifest = pipeline.manifest();
    for (stage, rec) in &manifest.stages {
        let counters: Vec<String> = rec.counters.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{:<10} {}", stage.name(), counters.join(" "));
        for d in rec.diagnostics.iter().take(3) {
            println!("           ! {d}");
        }
    }
    println!("\n{} findings; artifacts in {}", summary.findings(), out.display());
    Ok(())
}
