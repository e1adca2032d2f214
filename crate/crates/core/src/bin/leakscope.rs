use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use leakscope::llm_client::CacheMode;
use leakscope::pipeline::{Pipeline, PipelineConfig, Stage};

#[derive(Parser)]
#[command(name = "leakscope", version, about = "Memory-leak detection for C/C++ codebases")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Source root.
    #[arg(long, global = true)]
    root: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Heuristic classification and replay-only model access.
    #[arg(long, global = true)]
    offline: bool,
    /// Single worker thread.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// live, record or replay.
    #[arg(long, global = true)]
    cache_mode: Option<CacheMode>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    project: Option<String>,
    /// Exit with status 2 when the report lists findings.
    #[arg(long, global = true)]
    fail_on_findings: bool,
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Parse sources into the codebase index and candidate list.
    Extract,
    /// Classify candidates into allocator/deallocator summaries.
    Summarize,
    /// Check summaries against each function's control flow.
    Validate,
    /// Write CodeQL and Infer model files from validated summaries.
    Emit {
        /// Read this hints file instead of the validated hints artifact.
        #[arg(long)]
        hints: Option<PathBuf>,
    },
    /// Run the built-in per-branch leak scanner.
    Scan,
    /// Merge analyzer results and drop infeasible warnings.
    Filter {
        /// CodeQL SARIF results (repeatable).
        #[arg(long)]
        codeql: Vec<PathBuf>,
        /// Infer report.json (repeatable).
        #[arg(long)]
        infer: Vec<PathBuf>,
        /// Use only external analyzer results.
        #[arg(long)]
        no_internal: bool,
    },
    /// Review surviving warnings with the triage model.
    Triage,
    /// Summarize counters and findings.
    Report,
    /// Run several stages in order.
    Run {
        /// Comma-separated stages; all when omitted.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
        #[arg(long)]
        codeql: Vec<PathBuf>,
        #[arg(long)]
        infer: Vec<PathBuf>,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

fn configure(g: &Global) -> Result<PipelineConfig, String> {
    let mut c = match &g.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| e.to_string())?,
        None => PipelineConfig::default(),
    };
    if let Some(r) = &g.root {
        c.root = r.clone();
    }
    if let Some(o) = &g.out {
        c.out_dir = o.clone();
    }
    c.offline |= g.offline;
    c.deterministic |= g.deterministic;
    if let Some(t) = g.threads {
        c.threads = t;
    }
    if let Some(m) = g.cache_mode {
        c.cache_mode = m;
    }
    if let Some(d) = &g.cache_dir {
        c.cache_dir = Some(d.clone());
    }
    if let Some(p) = &g.project {
        c.project = p.clone();
    }
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut config = match configure(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let stages = match cli.command {
        Command::DefaultConfig => {
            print!("{}", PipelineConfig::default().to_toml());
            return ExitCode::SUCCESS;
        }
        Command::Extract => vec![Stage::Extract],
        Command::Summarize => vec![Stage::Summarize],
        Command::Validate => vec![Stage::Validate],
        Command::Emit { hints } => {
            config.emit_from = hints;
            vec![Stage::Emit]
        }
        Command::Scan => vec![Stage::Scan],
        Command::Filter { codeql, infer, no_internal } => {
            config.codeql_results.extend(codeql);
            config.infer_results.extend(infer);
            config.no_internal_scan |= no_internal;
            vec![Stage::Filter]
        }
        Command::Triage => vec![Stage::Triage],
        Command::Report => vec![Stage::Report],
        Command::Run { stages, codeql, infer } => {
            config.codeql_results.extend(codeql);
            config.infer_results.extend(infer);
            if stages.is_empty() {
                Stage::ALL.to_vec()
            } else {
                stages
            }
        }
    };
    let result = Pipeline::new(config).and_then(|p| p.run(&stages));
    match result {
        Ok(summary) => {
            if let Some(r) = &summary.report {
                print!("{}", leakscope::pipeline::render_report(r));
            } else {
                for s in &summary.stages {
                    println!("{s}: ok");
                }
            }
            if cli.global.fail_on_findings && summary.findings() > 0 {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
