//! Offline run: score the corpus (with cache write-back), split, calibrate
//! thresholds on the training half and evaluate them on the test half.
//!
//! Output layout under the configured directory:
//!
//! ```text
//! scored.jsonl        corpus with perplexity caches
//! thresholds.json     calibrated threshold table
//! eval/accuracy.json  evaluation report (also .csv and .md)
//! manifest.json       config hash, scorer, timestamps, artifact hashes
//! ```
//!
//! Artifacts are built in a staging directory and only moved into place once
//! every stage has succeeded. A `.lock` file prevents concurrent runs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{
    calibrate_table, CalibrationPlan, Category, Dimension, Grid, Provenance, ThresholdMethod,
    ThresholdTable,
};
use crate::corpus::{Corpus, DatasetFlavor};
use crate::engine::{compute_perplexity, Advance, Aggregation, EngineConfig, EngineError};
use crate::evaluation::{emit_report, evaluate, ReportFormat};
use crate::hashing::sha256_hex;
use crate::scorer::{Scorer, ScorerDescriptor, ScorerSpec};

pub const SCORED_FILE: &str = "scored.jsonl";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const EVAL_DIR: &str = "eval";
pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";
const STAGING_DIR: &str = ".staging";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fraction: 0.9,
            seed: 0,
        }
    }
}

/// Engine settings in a config file; unset fields follow the scorer defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineOverrides {
    pub m_len: Option<usize>,
    pub stride: Option<usize>,
    #[serde(default)]
    pub advance: Advance,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl EngineOverrides {
    pub fn resolve(&self, descriptor: &ScorerDescriptor) -> EngineConfig {
        let m_len = self.m_len.unwrap_or(descriptor.max_window);
        let stride = self.stride.unwrap_or((m_len / 2).max(1));
        EngineConfig::new(m_len, stride)
            .with_advance(self.advance)
            .with_aggregation(self.aggregation)
    }
}

fn all_flavors() -> Vec<DatasetFlavor> {
    DatasetFlavor::ALL.to_vec()
}

fn all_methods() -> Vec<ThresholdMethod> {
    ThresholdMethod::ALL.to_vec()
}

fn all_dimensions() -> Vec<Dimension> {
    Dimension::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    /// Scorer spec, e.g. `builtin:model.json` or `remote:http://host:port`.
    pub scorer: String,
    #[serde(default)]
    pub engine: EngineOverrides,
    #[serde(default = "all_flavors")]
    pub flavors: Vec<DatasetFlavor>,
    #[serde(default = "all_methods")]
    pub methods: Vec<ThresholdMethod>,
    #[serde(default = "all_dimensions")]
    pub dimensions: Vec<Dimension>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub split: SplitConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub rescore: bool,
}

impl PipelineConfig {
    pub fn new(corpus: impl Into<PathBuf>, scorer: impl Into<String>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            corpus: corpus.into(),
            scorer: scorer.into(),
            engine: EngineOverrides::default(),
            flavors: all_flavors(),
            methods: all_methods(),
            dimensions: all_dimensions(),
            grid: Grid::default(),
            split: SplitConfig::default(),
            output_dir: output_dir.into(),
            rescore: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::stage(Stage::Config, FailureKind::Input, format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::stage(Stage::Config, FailureKind::Input, format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| PipelineError::stage(Stage::Config, FailureKind::Input, msg);
        if !self.corpus.is_file() {
            return Err(bad(format!("corpus file {} does not exist", self.corpus.display())));
        }
        let spec: ScorerSpec = self.scorer.parse().map_err(|e| bad(format!("{e}")))?;
        if let ScorerSpec::Builtin(path) = &spec {
            if !path.is_file() {
                return Err(bad(format!("model file {} does not exist", path.display())));
            }
        }
        if !(self.split.fraction > 0.0 && self.split.fraction < 1.0) {
            return Err(bad(format!("split fraction must lie in (0, 1), got {}", self.split.fraction)));
        }
        self.grid.validate().map_err(|e| bad(e.to_string()))?;
        if self.flavors.is_empty() || self.methods.is_empty() || self.dimensions.is_empty() {
            return Err(bad("flavors, methods and dimensions must be non-empty".into()));
        }
        Ok(())
    }

    pub fn plan(&self) -> CalibrationPlan {
        CalibrationPlan {
            flavors: self.flavors.clone(),
            methods: self.methods.clone(),
            dimensions: self.dimensions.clone(),
            grid: self.grid,
        }
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_vec(self).expect("config serializes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Lock,
    Load,
    Score,
    Split,
    Calibrate,
    Evaluate,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("string"))
    }
}

/// Who is at fault for a failure; drives CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Input,
    Backend,
    Internal,
}

#[derive(Debug, Error)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: FailureKind,
    pub message: String,
}

impl PipelineError {
    pub fn stage(stage: Stage, kind: FailureKind, message: impl Into<String>) -> Self {
        Self {
            stage,
            kind,
            message: message.into(),
        }
    }
}

/// Cache key for perplexities computed by `descriptor` under `engine`.
pub fn cache_key(descriptor: &ScorerDescriptor, engine: &EngineConfig) -> String {
    let material = serde_json::json!({
        "scorer": descriptor,
        "m_len": engine.m_len,
        "stride": engine.stride,
        "advance": engine.advance,
        "aggregation": engine.aggregation,
    });
    let digest = sha256_hex(material.to_string());
    format!("{}@{}", descriptor.name, &digest[..16])
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub cache_hits: usize,
    pub scored: usize,
}

#[derive(Debug, Error)]
#[error("{} response(s) failed to score: {}", failures.len(), failures.iter().map(|(id, e)| format!("{id}: {e}")).collect::<Vec<_>>().join("; "))]
pub struct ScoringFailures {
    pub failures: Vec<(String, EngineError)>,
}

impl ScoringFailures {
    pub fn is_backend(&self) -> bool {
        self.failures.iter().any(|(_, e)| e.is_backend())
    }
}

/// Fills every response's perplexity cache under the scorer/engine key.
/// Existing entries for that key are reused unless `rescore` is set.
pub fn score_corpus(
    corpus: &Corpus,
    scorer: &dyn Scorer,
    engine: &EngineConfig,
    rescore: bool,
) -> Result<(Corpus, ScoreStats), ScoringFailures> {
    let key = cache_key(&scorer.descriptor(), engine);
    let results: Vec<Option<Result<f64, EngineError>>> = corpus
        .responses()
        .par_iter()
        .map(|r| {
            if !rescore && r.cached_perplexity(&key).is_some() {
                return None;
            }
            Some(compute_perplexity(&r.text, scorer, engine).map(|rep| rep.perplexity))
        })
        .collect();

    let mut scored = corpus.clone();
    let mut stats = ScoreStats::default();
    let mut failures = Vec::new();
    for (resp, result) in scored.responses_mut().iter_mut().zip(results) {
        match result {
            None => stats.cache_hits += 1,
            Some(Ok(ppl)) => {
                resp.ppl_cache.insert(key.clone(), ppl);
                stats.scored += 1;
            }
            Some(Err(e)) => failures.push((resp.id.clone(), e)),
        }
    }
    if failures.is_empty() {
        Ok((scored, stats))
    } else {
        Err(ScoringFailures { failures })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub scorer: ScorerDescriptor,
    pub engine: EngineConfig,
    pub cache_key: String,
    pub stats: ScoreStats,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifacts: Vec<Artifact>,
}

/// Paths of the promoted artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageLayout {
    pub root: PathBuf,
    pub scored_corpus: PathBuf,
    pub thresholds: PathBuf,
    pub reports: Vec<PathBuf>,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub layout: StorageLayout,
    pub manifest: Manifest,
    pub table: ThresholdTable,
}

impl RunOutcome {
    /// Global threshold for the unfiltered corpus, per method.
    pub fn global_thresholds(&self) -> Vec<(ThresholdMethod, f64)> {
        self.table
            .entries
            .iter()
            .filter(|e| e.key.flavor == DatasetFlavor::Orig && e.key.category == Category::Global)
            .map(|e| (e.key.method, e.threshold))
            .collect()
    }
}

struct LockGuard(PathBuf);

impl LockGuard {
    fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(LOCK_FILE);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                PipelineError::stage(
                    Stage::Lock,
                    FailureKind::Input,
                    format!("cannot lock {}: {e} (another run in progress?)", path.display()),
                )
            })?;
        Ok(Self(path))
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_err(e: std::io::Error, path: &Path) -> PipelineError {
    PipelineError::stage(Stage::Write, FailureKind::Internal, format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|e| write_err(e, path))
}

pub fn run_offline(config: &PipelineConfig) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let started_unix = unix_now();
    let root = config.output_dir.clone();
    fs::create_dir_all(&root).map_err(|e| write_err(e, &root))?;
    let _lock = LockGuard::acquire(&root)?;

    let staging = root.join(STAGING_DIR);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| write_err(e, &staging))?;
    }
    let result = build_artifacts(config, &staging, started_unix);
    match result {
        Ok((manifest, table)) => {
            let layout = promote(&staging, &root, &manifest)?;
            Ok(RunOutcome {
                layout,
                manifest,
                table,
            })
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn build_artifacts(
    config: &PipelineConfig,
    staging: &Path,
    started_unix: u64,
) -> Result<(Manifest, ThresholdTable), PipelineError> {
    let eval_dir = staging.join(EVAL_DIR);
    fs::create_dir_all(&eval_dir).map_err(|e| write_err(e, &eval_dir))?;

    let corpus = Corpus::load(&config.corpus)
        .map_err(|e| PipelineError::stage(Stage::Load, FailureKind::Input, e.to_string()))?;

    let spec: ScorerSpec = config
        .scorer
        .parse()
        .map_err(|e| PipelineError::stage(Stage::Score, FailureKind::Input, format!("{e}")))?;
    let scorer = spec.open().map_err(|e| {
        let kind = if e.is_backend() {
            FailureKind::Backend
        } else {
            FailureKind::Input
        };
        PipelineError::stage(Stage::Score, kind, e.to_string())
    })?;
    let descriptor = scorer.descriptor();
    let engine = config.engine.resolve(&descriptor);
    engine
        .validate_for(&descriptor)
        .map_err(|e| PipelineError::stage(Stage::Score, FailureKind::Input, e.to_string()))?;
    let key = cache_key(&descriptor, &engine);

    let (scored, stats) = score_corpus(&corpus, scorer.as_ref(), &engine, config.rescore).map_err(|f| {
        let kind = if f.is_backend() {
            FailureKind::Backend
        } else {
            FailureKind::Input
        };
        PipelineError::stage(Stage::Score, kind, f.to_string())
    })?;
    let scored_text = scored.to_jsonl();
    let corpus_hash = sha256_hex(&scored_text);
    write_file(&staging.join(SCORED_FILE), scored_text.as_bytes())?;

    let (train, test) = scored
        .split(config.split.fraction, config.split.seed)
        .map_err(|e| PipelineError::stage(Stage::Split, FailureKind::Input, e.to_string()))?;

    let provenance = Provenance {
        scorer: descriptor.name.clone(),
        engine,
        cache_key: key.clone(),
        corpus_hash,
        grid: config.grid,
        created_at: None,
        omissions: Vec::new(),
    };
    let plan = config.plan();
    let table = calibrate_table(&train, &plan, provenance)
        .map_err(|e| PipelineError::stage(Stage::Calibrate, FailureKind::Input, e.to_string()))?;
    write_file(&staging.join(THRESHOLDS_FILE), table.to_json().as_bytes())?;

    let report = evaluate(&test, &table, &plan.cells())
        .map_err(|e| PipelineError::stage(Stage::Evaluate, FailureKind::Internal, e.to_string()))?;
    for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
        let path = eval_dir.join(format!("accuracy.{}", format.extension()));
        write_file(&path, emit_report(&report, format).as_bytes())?;
    }

    let mut artifacts = Vec::new();
    for rel in artifact_paths() {
        let path = staging.join(&rel);
        let bytes = fs::read(&path).map_err(|e| write_err(e, &path))?;
        artifacts.push(Artifact {
            path: rel,
            sha256: sha256_hex(bytes),
        });
    }
    let manifest = Manifest {
        config_hash: config.hash(),
        scorer: descriptor,
        engine,
        cache_key: key,
        stats,
        started_unix,
        finished_unix: unix_now(),
        artifacts,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_file(&staging.join(MANIFEST_FILE), text.as_bytes())?;
    Ok((manifest, table))
}

fn artifact_paths() -> Vec<String> {
    let mut paths = vec![SCORED_FILE.to_string(), THRESHOLDS_FILE.to_string()];
    for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
        paths.push(format!("{EVAL_DIR}/accuracy.{}", format.extension()));
    }
    paths
}

fn promote(staging: &Path, root: &Path, manifest: &Manifest) -> Result<StorageLayout, PipelineError> {
    let old_eval = root.join(EVAL_DIR);
    if old_eval.exists() {
        fs::remove_dir_all(&old_eval).map_err(|e| write_err(e, &old_eval))?;
    }
    for name in [SCORED_FILE, THRESHOLDS_FILE, EVAL_DIR, MANIFEST_FILE] {
        let from = staging.join(name);
        let to = root.join(name);
        fs::rename(&from, &to).map_err(|e| write_err(e, &to))?;
    }
    fs::remove_dir_all(staging).map_err(|e| write_err(e, staging))?;
    Ok(StorageLayout {
        root: root.to_path_buf(),
        scored_corpus: root.join(SCORED_FILE),
        thresholds: root.join(THRESHOLDS_FILE),
        reports: manifest
            .artifacts
            .iter()
            .filter(|a| a.path.starts_with(EVAL_DIR))
            .map(|a| root.join(&a.path))
            .collect(),
        manifest: root.join(MANIFEST_FILE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_key_tracks_engine() {
        let d = ScorerDescriptor {
            name: "ngram3-abc".into(),
            vocab_size: 100,
            max_window: 64,
        };
        let a = cache_key(&d, &EngineConfig::new(64, 32));
        let b = cache_key(&d, &EngineConfig::new(64, 16));
        let c = cache_key(&d, &EngineConfig::new(64, 32).with_aggregation(Aggregation::TokenWeighted));
        assert!(a.starts_with("ngram3-abc@"));
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, cache_key(&d, &EngineConfig::new(64, 32)));
    }

    #[test]
    fn engine_overrides_default_to_half_window() {
        let d = ScorerDescriptor {
            name: "x".into(),
            vocab_size: 10,
            max_window: 100,
        };
        assert_eq!(EngineOverrides::default().resolve(&d), EngineConfig::new(100, 50));
        let o = EngineOverrides {
            m_len: Some(64),
            ..Default::default()
        };
        assert_eq!(o.resolve(&d), EngineConfig::new(64, 32));
    }

    #[test]
    fn config_defaults_from_json() {
        let c: PipelineConfig =
            serde_json::from_str(r#"{"corpus":"c.jsonl","scorer":"uniform","output_dir":"out"}"#).unwrap();
        assert_eq!(c.flavors.len(), 5);
        assert_eq!(c.split, SplitConfig { fraction: 0.9, seed: 0 });
        assert_eq!(c.grid, Grid::default());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"corpus":"c","scorer":"u","output_dir":"o","bogus":1}"#).is_err());
    }

    #[test]
    fn stage_display() {
        let e = PipelineError::stage(Stage::Score, FailureKind::Backend, "down");
        assert_eq!(e.to_string(), "[score] down");
    }
}
