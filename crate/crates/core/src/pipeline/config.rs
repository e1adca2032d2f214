use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::analyzer_bridge::RuleAllowlist;
use crate::cfg::{Primitives, DEFAULT_PATH_CAP};
use crate::extraction::ExtractionConfig;
use crate::feasibility::FeasibilityConfig;
use crate::llm_client::{CacheMode, ClientConfig};
use crate::solver::DEFAULT_CONFLICT_BUDGET;
use crate::summaries::BATCH_SIZE;
use crate::summary_validation::{CheckOptions, Strategy, ValidationConfig, DEFAULT_MAX_DEPTH};
use crate::triage::TriageConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub root: PathBuf,
    pub out_dir: PathBuf,
    pub project: String,
    /// Heuristic classification and replay-only model access.
    pub offline: bool,
    /// Single worker thread.
    pub deterministic: bool,
    /// Worker threads; 0 means one per logical core.
    pub threads: usize,
    pub extraction: ExtractionConfig,
    pub primitives: Primitives,
    pub sinks: Vec<String>,
    pub path_cap: usize,
    pub max_depth: usize,
    pub conflict_budget: u64,
    pub share_conditions: bool,
    pub strategy: Strategy,
    pub count_field_frees: bool,
    pub batch_size: usize,
    pub generation: ClientConfig,
    pub triage: ClientConfig,
    pub cache_mode: CacheMode,
    /// Defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub rules: RuleAllowlist,
    pub suppress: Vec<String>,
    pub max_in_flight: usize,
    /// Skip the built-in per-branch scanner in the filter stage.
    pub no_internal_scan: bool,
    pub codeql_results: Vec<PathBuf>,
    pub infer_results: Vec<PathBuf>,
    /// Hints file for `emit` in place of the validated hints artifact.
    pub emit_from: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            root: PathBuf::from("."),
            out_dir: PathBuf::from("leakscope-out"),
            project: "project".into(),
            offline: false,
            deterministic: false,
            threads: 0,
            extraction: ExtractionConfig::default(),
            primitives: Primitives::default(),
            sinks: Vec::new(),
            path_cap: DEFAULT_PATH_CAP,
            max_depth: DEFAULT_MAX_DEPTH,
            conflict_budget: DEFAULT_CONFLICT_BUDGET,
            share_conditions: true,
            strategy: Strategy::Auto,
            count_field_frees: false,
            batch_size: BATCH_SIZE,
            generation: ClientConfig::default(),
            triage: ClientConfig::triage_default(),
            cache_mode: CacheMode::Record,
            cache_dir: None,
            rules: RuleAllowlist::default(),
            suppress: Vec::new(),
            max_in_flight: 4,
            no_internal_scan: false,
            codeql_results: Vec::new(),
            infer_results: Vec::new(),
            emit_from: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.max_depth < 1 {
            return fail("max_depth must be at least 1");
        }
        if self.path_cap < 1 {
            return fail("path_cap must be at least 1");
        }
        if self.conflict_budget == 0 {
            return fail("conflict_budget must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.max_in_flight == 0 {
            return fail("max_in_flight must be positive");
        }
        if !self.offline {
            self.generation.validate().map_err(|e| PipelineError::Config(format!("generation: {e}")))?;
        }
        self.triage.validate().map_err(|e| PipelineError::Config(format!("triage: {e}")))?;
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    /// Cache mode after the offline switch.
    pub fn effective_cache_mode(&self) -> CacheMode {
        if self.offline {
            CacheMode::Replay
        } else {
            self.cache_mode
        }
    }

    pub fn worker_threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads
        }
    }

    pub fn validation(&self) -> ValidationConfig {
        ValidationConfig {
            primitives: self.primitives.clone(),
            sinks: self.sinks.clone(),
            max_depth: self.max_depth,
            share_conditions: self.share_conditions,
            check: CheckOptions {
                strategy: self.strategy,
                path_cap: self.path_cap,
                conflict_budget: self.conflict_budget,
                count_field_frees: self.count_field_frees,
            },
        }
    }

    pub fn feasibility(&self) -> FeasibilityConfig {
        FeasibilityConfig {
            primitives: self.primitives.clone(),
            sinks: self.sinks.clone(),
            share_conditions: self.share_conditions,
            conflict_budget: self.conflict_budget,
        }
    }

    pub fn triage_config(&self) -> TriageConfig {
        TriageConfig { project: self.project.clone(), suppress: self.suppress.clone(), max_in_flight: self.max_in_flight }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
        let p = PipelineConfig::from_toml("root = \"src\"\nmax_depth = 4\n[generation]\nmodel_id = \"small\"\n").unwrap();
        assert_eq!(p.max_depth, 4);
        assert_eq!(p.generation.model_id, "small");
        assert_eq!(p.generation.timeout_secs, ClientConfig::default().timeout_secs);
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn invariants() {
        assert!(PipelineConfig::default().validate().is_ok());
        assert!(PipelineConfig { max_depth: 0, ..Default::default() }.validate().is_err());
        assert!(PipelineConfig { path_cap: 0, ..Default::default() }.validate().is_err());
        assert!(PipelineConfig { conflict_budget: 0, ..Default::default() }.validate().is_err());
        let off = PipelineConfig { offline: true, cache_mode: CacheMode::Live, ..Default::default() };
        assert_eq!(off.effective_cache_mode(), CacheMode::Replay);
    }
}
