//! Stage orchestration with on-disk artifacts and a digest manifest.

mod config;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::PipelineConfig;
pub use report::{build_report, render_report, Counters, Report};

use crate::analyzer_bridge::{
    emit_codeql_extension, emit_infer_flags, infer_flags_file, ingest_codeql_results, ingest_infer_results, merge_warnings,
    Warning,
};
use crate::extraction::{parse_codebase, prefilter, write_index, Codebase, FunctionRecord};
use crate::feasibility::{filter_warnings, scan_codebase};
use crate::llm_client::{heuristic_classify_all, Completer, LlmClient};
use crate::summaries::{build_batch_prompt, parse_hints_response, select_callees, FunctionSummary, HintsFile};
use crate::summary_validation::{rejection_report, validated_hints, Validator};
use crate::triage::triage_warnings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Extract,
    Summarize,
    Validate,
    Emit,
    Scan,
    Filter,
    Triage,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] =
        [Stage::Extract, Stage::Summarize, Stage::Validate, Stage::Emit, Stage::Scan, Stage::Filter, Stage::Triage, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Summarize => "summarize",
            Stage::Validate => "validate",
            Stage::Emit => "emit",
            Stage::Scan => "scan",
            Stage::Filter => "filter",
            Stage::Triage => "triage",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("stage `{stage}` needs {path}; run `{producer}` first")]
    MissingInput { stage: Stage, producer: Stage, path: PathBuf },
    #[error("extraction: {0}")]
    Extraction(#[from] crate::extraction::ExtractionError),
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }
}

pub mod artifact {
    pub const INDEX_DIR: &str = "index";
    pub const CODEBASE: &str = "codebase.json";
    pub const CANDIDATES: &str = "candidates.json";
    pub const HINTS: &str = "hints.json";
    pub const VALIDATED_HINTS: &str = "validated_hints.json";
    pub const VERDICTS: &str = "verdicts.json";
    pub const REJECTIONS: &str = "rejections.tsv";
    pub const CODEQL_MODEL: &str = "codeql/leakscope-models.model.yml";
    pub const INFER_FLAGS: &str = "infer/flags.txt";
    pub const INTERNAL_WARNINGS: &str = "warnings/internal.json";
    pub const FILTERED_WARNINGS: &str = "warnings/filtered.json";
    pub const TRIAGED_WARNINGS: &str = "warnings/triaged.json";
    pub const REPORT_JSON: &str = "report.json";
    pub const REPORT_TXT: &str = "report.txt";
    pub const MANIFEST: &str = "manifest.json";
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Relative artifact path to hex SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub counters: BTreeMap<String, usize>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl Manifest {
    pub fn counter(&self, stage: Stage, name: &str) -> Option<usize> {
        self.stages.get(&stage).and_then(|s| s.counters.get(name)).copied()
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub stages: Vec<Stage>,
    pub report: Option<Report>,
}

impl RunSummary {
    pub fn findings(&self) -> usize {
        self.report.as_ref().map_or(0, |r| r.findings.len())
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    generation: Option<Box<dyn Completer>>,
    triage: Option<Box<dyn Completer>>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Pipeline { config, generation: None, triage: None })
    }

    /// Replaces the generation model client.
    pub fn with_generation_client(mut self, c: Box<dyn Completer>) -> Self {
        self.generation = Some(c);
        self
    }

    /// Replaces the triage model client.
    pub fn with_triage_client(mut self, c: Box<dyn Completer>) -> Self {
        self.triage = Some(c);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.config.out_dir.join(rel)
    }

    /// Runs `stages` in pipeline order.
    pub fn run(&self, stages: &[Stage]) -> Result<RunSummary, PipelineError> {
        let wanted: BTreeSet<Stage> = stages.iter().copied().collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.worker_threads())
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        pool.install(|| {
            let mut summary = RunSummary::default();
            for stage in wanted {
                log::info!("stage {stage}");
                let rec = match stage {
                    Stage::Extract => self.extract()?,
                    Stage::Summarize => self.summarize()?,
                    Stage::Validate => self.validate()?,
                    Stage::Emit => self.emit()?,
                    Stage::Scan => self.scan()?,
                    Stage::Filter => self.filter()?,
                    Stage::Triage => self.triage()?,
                    Stage::Report => {
                        let (rec, report) = self.report()?;
                        summary.report = Some(report);
                        rec
                    }
                };
                self.record(stage, rec)?;
                summary.stages.push(stage);
            }
            Ok(summary)
        })
    }

    fn write(&self, rel: &str, bytes: &[u8], rec: &mut StageRecord) -> Result<(), PipelineError> {
        let path = self.out(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        if fs::read(&path).ok().as_deref() != Some(bytes) {
            fs::write(&path, bytes).map_err(|e| PipelineError::io(&path, e))?;
        }
        rec.outputs.insert(rel.to_string(), digest(bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T, rec: &mut StageRecord) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write(rel, text.as_bytes(), rec)
    }

    fn read(&self, stage: Stage, producer: Stage, rel: &str) -> Result<String, PipelineError> {
        let path = self.out(rel);
        match fs::read_to_string(&path) {
            Ok(t) => Ok(t),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(PipelineError::MissingInput { stage, producer, path }),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, stage: Stage, producer: Stage, rel: &str) -> Result<T, PipelineError> {
        let text = self.read(stage, producer, rel)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Artifact { path: self.out(rel), message: e.to_string() })
    }

    fn codebase(&self, stage: Stage) -> Result<Codebase, PipelineError> {
        let path = self.out(artifact::CODEBASE);
        if !path.exists() {
            return Err(PipelineError::MissingInput { stage, producer: Stage::Extract, path });
        }
        Codebase::load(&path).map_err(|e| PipelineError::io(&path, e))
    }

    fn hints(&self, stage: Stage, producer: Stage, rel: &str) -> Result<HintsFile, PipelineError> {
        let text = self.read(stage, producer, rel)?;
        HintsFile::from_json(&text).map_err(|e| PipelineError::Artifact { path: self.out(rel), message: e.to_string() })
    }

    pub fn manifest(&self) -> Manifest {
        fs::read_to_string(self.out(artifact::MANIFEST)).ok().and_then(|t| serde_json::from_str(&t).ok()).unwrap_or_default()
    }

    fn record(&self, stage: Stage, mut rec: StageRecord) -> Result<(), PipelineError> {
        rec.diagnostics.sort();
        rec.diagnostics.dedup();
        let mut m = self.manifest();
        m.stages.insert(stage, rec);
        let mut scratch = StageRecord::default();
        self.write_json(artifact::MANIFEST, &m, &mut scratch)
    }

    pub fn extract(&self) -> Result<StageRecord, PipelineError> {
        let mut rec = StageRecord::default();
        let cb = parse_codebase(&self.config.root, &self.config.extraction)?;
        let candidates = prefilter(&cb, &self.config.extraction);
        let index = self.out(artifact::INDEX_DIR);
        if index.exists() {
            fs::remove_dir_all(&index).map_err(|e| PipelineError::io(&index, e))?;
        }
        for p in write_index(&cb, &index).map_err(|e| PipelineError::io(&index, e))? {
            let bytes = fs::read(&p).map_err(|e| PipelineError::io(&p, e))?;
            let rel = p.strip_prefix(&self.config.out_dir).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            rec.outputs.insert(rel, digest(&bytes));
        }
        self.write_json(artifact::CODEBASE, &cb, &mut rec)?;
        let names: Vec<&str> = candidates.iter().map(|r| r.name.as_str()).collect();
        self.write_json(artifact::CANDIDATES, &names, &mut rec)?;
        rec.counters.insert("extracted".into(), cb.records.len());
        rec.counters.insert("candidates".into(), candidates.len());
        rec.counters.insert("files".into(), cb.records.iter().map(|r| &r.span.file).collect::<BTreeSet<_>>().len());
        rec.diagnostics = cb.diagnostics.iter().map(|d| format!("{}:{}: {}", d.file, d.line.unwrap_or(0), d.message)).collect();
        Ok(rec)
    }

    fn candidate_records(&self, cb: &Codebase) -> Result<Vec<FunctionRecord>, PipelineError> {
        let names: Vec<String> = self.read_json(Stage::Summarize, Stage::Extract, artifact::CANDIDATES)?;
        let wanted: BTreeSet<&str> = names.iter().map(String::as_str).collect();
        let mut seen = BTreeSet::new();
        Ok(cb.records.iter().filter(|r| wanted.contains(r.name.as_str()) && seen.insert(r.name.clone())).cloned().collect())
    }

    fn generation_client(&self) -> Result<Option<Box<dyn Completer + '_>>, PipelineError> {
        if let Some(c) = &self.generation {
            return Ok(Some(Box::new(Borrowed(c.as_ref()))));
        }
        if self.config.offline {
            return Ok(None);
        }
        let client = LlmClient::new(self.config.generation.clone(), self.config.effective_cache_mode(), Some(self.config.cache_dir()))
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Some(Box::new(client)))
    }

    pub fn summarize(&self) -> Result<StageRecord, PipelineError> {
        let mut rec = StageRecord::default();
        let cb = self.codebase(Stage::Summarize)?;
        let records = self.candidate_records(&cb)?;
        let summaries: Vec<FunctionSummary> = match self.generation_client()? {
            None => heuristic_classify_all(&records, &cb, &self.config.validation()),
            Some(client) => {
                let mut out = Vec::new();
                let mut failed = 0;
                for batch in records.chunks(self.config.batch_size) {
                    let items: Vec<(&FunctionRecord, Vec<&FunctionRecord>)> =
                        batch.iter().map(|r| (r, select_callees(r, &cb))).collect();
                    let prompt = build_batch_prompt(&items);
                    let expected: BTreeSet<String> = batch.iter().map(|r| r.name.clone()).collect();
                    match client.complete(&prompt) {
                        Ok(resp) => {
                            let (got, diags) = parse_hints_response(&resp, &expected);
                            out.extend(got);
                            rec.diagnostics.extend(diags);
                        }
                        Err(e) => {
                            failed += 1;
                            rec.diagnostics.push(format!("batch starting at {}: {e}", batch[0].name));
                        }
                    }
                }
                rec.counters.insert("llm_failures".into(), failed);
                out
            }
        };
        let hints = HintsFile::from_summaries(summaries);
        self.write(artifact::HINTS, hints.to_json().as_bytes(), &mut rec)?;
        rec.counters.insert("summaries".into(), hints.len());
        Ok(rec)
    }

    pub fn validate(&self) -> Result<StageRecord, PipelineError> {
        let mut rec = StageRecord::default();
        let cb = self.codebase(Stage::Validate)?;
        let hints = self.hints(Stage::Validate, Stage::Summarize, artifact::HINTS)?;
        let summaries: Vec<FunctionSummary> = hints.summaries().cloned().collect();
        let verdicts = Validator::new(&cb, self.config.validation()).validate_all(&summaries);
        let validated = validated_hints(&verdicts);
        self.write(artifact::VALIDATED_HINTS, validated.to_json().as_bytes(), &mut rec)?;
        self.write(artifact::REJECTIONS, rejection_report(&verdicts).as_bytes(), &mut rec)?;
        self.write_json(artifact::VERDICTS, &verdicts, &mut rec)?;
        rec.counters.insert("validated".into(), validated.len());
        rec.counters.insert("rejected".into(), verdicts.iter().filter(|v| v.outcome.is_rejected()).count());
        rec.counters
            .insert("unknown".into(), verdicts.iter().filter(|v| matches!(v.outcome, crate::summary_validation::Outcome::Unknown { .. })).count());
        Ok(rec)
    }

    pub fn emit(&self) -> Result<StageRecord, PipelineError> {
        let mut rec = StageRecord::default();
        let hints = match &self.config.emit_from {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
                HintsFile::from_json(&text).map_err(|e| PipelineError::Artifact { path: path.clone(), message: e.to_string() })?
            }
            None => self.hints(Stage::Emit, Stage::Validate, artifact::VALIDATED_HINTS)?,
        };
        self.write(artifact::CODEQL_MODEL, emit_codeql_extension(&hints).as_bytes(), &mut rec)?;
        self.write(artifact::INFER_FLAGS, infer_flags_file(&emit_infer_flags(&hints)).as_bytes(), &mut rec)?;
        rec.counters.insert("allocators".into(), hints.allocator_names().len());
        rec.counters.insert("deallocators".into(), hints.deallocator_entries().len());
        Ok(rec)
    }

    pub fn scan(&self) -> Result<StageRecord, PipelineError> {
        let mut rec = StageRecord::default();
        let cb = self.codebase(Stage::Scan)?;
        let hints = self.hints(Stage::Scan, Stage::Validate, artifact::VALIDATED_HINTS)?;
        let found = scan_codebase(&cb, &hints, &self.config.feasibility());
        self.write_json(artifact::INTERNAL_WARNINGS, &found.warnings, &mut rec)?;
        rec.counters.insert("internal_warnings".into(), found.warnings.len());
        rec.diagnostics = found.diagnostics;
        Ok(rec)
    }

    pub fn filter(&self) -> Result<StageRecord, PipelineError> {
        let mut rec = StageRecord::default();
        let cb = self.codebase(Stage::Filter)?;
        let hints = self.hints(Stage::Filter, Stage::Validate, artifact::VALIDATED_HINTS)?;
        let mut lists: Vec<Vec<Warning>> = Vec::new();
        if !self.config.no_internal_scan {
            lists.push(self.read_json(Stage::Filter, Stage::Scan, artifact::INTERNAL_WARNINGS)?);
        }
        let allow = &self.config.rules;
        for p in &self.config.codeql_results {
            let got = ingest_codeql_results(p, allow).map_err(|e| PipelineError::Artifact { path: p.clone(), message: e.to_string() })?;
            rec.counters.insert("skipped_results".into(), rec.counters.get("skipped_results").unwrap_or(&0) + got.skipped);
            rec.diagnostics.extend(got.diagnostics);
            lists.push(got.warnings);
        }
        for p in &self.config.infer_results {
            let got = ingest_infer_results(p, allow).map_err(|e| PipelineError::Artifact { path: p.clone(), message: e.to_string() })?;
            rec.counters.insert("skipped_results".into(), rec.counters.get("skipped_results").unwrap_or(&0) + got.skipped);
            rec.diagnostics.extend(got.diagnostics);
            lists.push(got.warnings);
        }
        let merged = merge_warnings(&lists);
        let total = merged.warnings.len();
        let filtered = filter_warnings(merged.warnings, &cb, &hints, &self.config.feasibility());
        rec.counters.insert("warnings".into(), total);
        rec.counters.insert("after_feasibility".into(), filtered.retained.len());
        rec.counters.insert("overlap".into(), merged.overlap);
        for (src, n) in &merged.per_source {
            rec.counters.insert(format!("from_{}", src.to_string().to_lowercase()), *n);
        }
        let mut all = filtered.retained;
        all.extend(filtered.discarded);
        sort_warnings(&mut all);
        self.write_json(artifact::FILTERED_WARNINGS, &all, &mut rec)?;
        Ok(rec)
    }

    fn triage_client(&self) -> Result<Box<dyn Completer + '_>, String> {
        if let Some(c) = &self.triage {
            return Ok(Box::new(Borrowed(c.as_ref())));
        }
        LlmClient::new(self.config.triage.clone(), self.config.effective_cache_mode(), Some(self.config.cache_dir()))
            .map(|c| Box::new(c) as Box<dyn Completer>)
            .map_err(|e| e.to_string())
    }

    pub fn triage(&self) -> Result<StageRecord, PipelineError> {
        let mut rec = StageRecord::default();
        let cb = self.codebase(Stage::Triage)?;
        let warnings: Vec<Warning> = self.read_json(Stage::Triage, Stage::Filter, artifact::FILTERED_WARNINGS)?;
        let client = self.triage_client().map_err(PipelineError::Config)?;
        let out = triage_warnings(warnings, &cb, client.as_ref(), &self.config.triage_config());
        let mut ws = out.warnings;
        sort_warnings(&mut ws);
        use crate::analyzer_bridge::WarningStatus as S;
        let count = |f: &dyn Fn(S) -> bool| ws.iter().filter(|w| f(w.status)).count();
        rec.counters.insert("triaged_true".into(), count(&|s| s == S::Triaged { verdict: true }));
        rec.counters.insert("triaged_false".into(), count(&|s| s == S::Triaged { verdict: false }));
        rec.counters.insert("untriaged".into(), count(&|s| s == S::Untriaged));
        rec.counters.insert("after_triage".into(), count(&|s| s.is_live() && s != S::FeasibilityRetained));
        rec.diagnostics = out.diagnostics;
        self.write_json(artifact::TRIAGED_WARNINGS, &ws, &mut rec)?;
        Ok(rec)
    }

    /// Most advanced warning artifact present, if any.
    fn latest_warnings(&self) -> Result<Option<(Stage, Vec<Warning>)>, PipelineError> {
        for (stage, rel) in [
            (Stage::Triage, artifact::TRIAGED_WARNINGS),
            (Stage::Filter, artifact::FILTERED_WARNINGS),
            (Stage::Scan, artifact::INTERNAL_WARNINGS),
        ] {
            if self.out(rel).exists() {
                return Ok(Some((stage, self.read_json(Stage::Report, stage, rel)?)));
            }
        }
        Ok(None)
    }

    pub fn report(&self) -> Result<(StageRecord, Report), PipelineError> {
        let mut rec = StageRecord::default();
        let latest = self.latest_warnings()?;
        let report = build_report(&self.config.project, &self.manifest(), latest);
        self.write_json(artifact::REPORT_JSON, &report, &mut rec)?;
        self.write(artifact::REPORT_TXT, render_report(&report).as_bytes(), &mut rec)?;
        rec.counters.insert("findings".into(), report.findings.len());
        Ok((rec, report))
    }
}

fn sort_warnings(ws: &mut [Warning]) {
    ws.sort_by(|a, b| (&a.file, &a.function, a.line, a.alloc_line(), &a.message).cmp(&(&b.file, &b.function, b.line, b.alloc_line(), &b.message)));
}

struct Borrowed<'a>(&'a dyn Completer);

impl Completer for Borrowed<'_> {
    fn model_id(&self) -> &str {
        self.0.model_id()
    }

    fn complete(&self, prompt: &str) -> Result<String, crate::llm_client::ClientError> {
        self.0.complete(prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offline(root: &Path, out: &Path) -> Pipeline {
        Pipeline::new(PipelineConfig {
            root: root.into(),
            out_dir: out.into(),
            offline: true,
            deterministic: true,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("bogus".parse::<Stage>().is_err());
    }

    #[test]
    fn missing_input_names_producer() {
        let out = tempfile::tempdir().unwrap();
        let p = offline(out.path(), out.path());
        match p.run(&[Stage::Validate]) {
            Err(PipelineError::MissingInput { stage: Stage::Validate, producer: Stage::Extract, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_report() {
        let out = tempfile::tempdir().unwrap();
        let s = offline(out.path(), out.path()).run(&[Stage::Report]).unwrap();
        let r = s.report.unwrap();
        assert!(r.findings.is_empty());
        assert_eq!(r.counters, Counters::default());
        assert!(out.path().join(artifact::REPORT_TXT).exists());
    }

    #[test]
    fn small_run_is_reproducible() {
        let src = tempfile::tempdir().unwrap();
        fs::write(
            src.path().join("a.c"),
            "char *mk(int n){ return malloc(n); }\nint use(int k){ char *p = mk(4);\n if (k) return -1;\n free(p);\n return 0; }\n",
        )
        .unwrap();
        let out = tempfile::tempdir().unwrap();
        let p = offline(src.path(), out.path());
        let first = p.run(&Stage::ALL).unwrap();
        assert_eq!(first.findings(), 1);
        let m1 = fs::read(out.path().join(artifact::MANIFEST)).unwrap();
        p.run(&Stage::ALL).unwrap();
        assert_eq!(m1, fs::read(out.path().join(artifact::MANIFEST)).unwrap());
    }
}
