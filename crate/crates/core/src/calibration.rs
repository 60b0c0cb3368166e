//! Perplexity threshold calibration.
//!
//! The positive class is human-written text. A text is called AI-generated
//! when its perplexity is strictly below the threshold; a tie goes to human.
//!
//! A hard threshold gives a single ROC operating point, so the ROC curve is
//! the polyline (0,0) - (fpr,tpr) - (1,1) and its area is `(1 + tpr - fpr) / 2`.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CognitiveDim, Corpus, DatasetFlavor, KnowledgeDim, QuestionMeta, Source};
use crate::engine::EngineConfig;

string_enum!(
    /// Objective maximized when picking a threshold.
    ThresholdMethod {
        Auc => "auc",
        F1 => "f1",
    }
);

string_enum!(
    /// Taxonomy facet a threshold is calibrated over.
    Dimension {
        Global => "global",
        Knowledge => "knowledge",
        Cognitive => "cognitive",
    }
);

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("non-finite or negative value: perplexity {ppl}, threshold {threshold}")]
    NonFinite { ppl: f64, threshold: f64 },
    #[error("AUC is undefined without at least one human and one AI sample ({positives} human, {negatives} ai)")]
    UndefinedAuc { positives: u64, negatives: u64 },
    #[error("F1 is undefined when tp + fp + fn = 0")]
    UndefinedF1,
    #[error("response {id:?} has no cached perplexity for key {key:?}")]
    StaleCache { id: String, key: String },
    #[error("invalid search grid: {0}")]
    Grid(String),
    #[error("invalid threshold table: {0}")]
    Table(String),
    #[error("cannot read threshold table {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One scored, labeled text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub perplexity: f64,
    pub source: Source,
}

pub fn classify(ppl: f64, threshold: f64) -> Result<Source, CalibrationError> {
    if !(ppl.is_finite() && threshold.is_finite() && ppl >= 0.0 && threshold >= 0.0) {
        return Err(CalibrationError::NonFinite { ppl, threshold });
    }
    Ok(if ppl < threshold { Source::Ai } else { Source::Human })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Actual human-written samples.
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    /// Actual AI-generated samples.
    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn roc_point(&self, threshold: f64) -> Result<RocPoint, CalibrationError> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return Err(CalibrationError::UndefinedAuc {
                positives: p,
                negatives: n,
            });
        }
        Ok(RocPoint {
            fpr: self.fp as f64 / n as f64,
            tpr: self.tp as f64 / p as f64,
            threshold,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

pub fn confusion(samples: &[Sample], threshold: f64) -> Result<ConfusionCounts, CalibrationError> {
    let mut c = ConfusionCounts::default();
    for s in samples {
        match (s.source, classify(s.perplexity, threshold)?) {
            (Source::Human, Source::Human) => c.tp += 1,
            (Source::Ai, Source::Human) => c.fp += 1,
            (Source::Human, Source::Ai) => c.fn_ += 1,
            (Source::Ai, Source::Ai) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Computed as `(P*N + tp*N - fp*P) / (2*P*N)` from the integer counts, so
/// operating points with equal area compare exactly equal.
pub fn auc_single_point(c: &ConfusionCounts) -> Result<f64, CalibrationError> {
    c.roc_point(0.0)?;
    let (p, n) = (c.positives() as i128, c.negatives() as i128);
    let num = p * n + c.tp as i128 * n - c.fp as i128 * p;
    Ok(num as f64 / (2 * p * n) as f64)
}

pub fn f1_score(c: &ConfusionCounts) -> Result<f64, CalibrationError> {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return Err(CalibrationError::UndefinedF1);
    }
    Ok(2.0 * c.tp as f64 / denom as f64)
}

pub fn objective(method: ThresholdMethod, c: &ConfusionCounts) -> Result<f64, CalibrationError> {
    match method {
        ThresholdMethod::Auc => auc_single_point(c),
        ThresholdMethod::F1 => f1_score(c),
    }
}

/// Perplexities of `corpus` under a cache key, paired with their labels.
pub fn samples_from_corpus(corpus: &Corpus, cache_key: &str) -> Result<Vec<Sample>, CalibrationError> {
    corpus
        .responses()
        .iter()
        .map(|r| {
            r.cached_perplexity(cache_key)
                .map(|perplexity| Sample {
                    perplexity,
                    source: r.source,
                })
                .ok_or_else(|| CalibrationError::StaleCache {
                    id: r.id.clone(),
                    key: cache_key.to_string(),
                })
        })
        .collect()
}

/// Evenly spaced thresholds `lo, lo + step, ...` up to and including `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

const GRID_EPS: f64 = 1e-9;
const MAX_GRID_POINTS: usize = 10_000_000;

impl Default for Grid {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 100.0,
            step: 0.5,
        }
    }
}

impl Grid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self, CalibrationError> {
        let g = Self { lo, hi, step };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step.is_finite()) {
            return Err(CalibrationError::Grid("bounds and step must be finite".into()));
        }
        if self.step <= 0.0 {
            return Err(CalibrationError::Grid(format!("step must be positive, got {}", self.step)));
        }
        if self.lo < 0.0 || self.hi < self.lo {
            return Err(CalibrationError::Grid(format!(
                "need 0 <= lo <= hi, got lo={} hi={}",
                self.lo, self.hi
            )));
        }
        if (self.hi - self.lo) / self.step > MAX_GRID_POINTS as f64 {
            return Err(CalibrationError::Grid("too many grid points".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + GRID_EPS).floor() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }

    pub fn contains(&self, threshold: f64) -> bool {
        let pos = (threshold - self.lo) / self.step;
        threshold >= self.lo - GRID_EPS
            && threshold <= self.hi + GRID_EPS
            && (pos - pos.round()).abs() < 1e-6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub threshold: f64,
    pub objective: f64,
    /// `(threshold, objective)` for every candidate, in candidate order.
    pub trace: Vec<(f64, f64)>,
}

pub fn optimal_threshold(
    samples: &[Sample],
    method: ThresholdMethod,
    grid: &Grid,
) -> Result<ThresholdSearch, CalibrationError> {
    grid.validate()?;
    optimal_threshold_over(samples, method, &grid.points())
}

/// Searches an explicit ascending list of candidate thresholds. The first
/// candidate reaching the maximum objective wins.
pub fn optimal_threshold_over(
    samples: &[Sample],
    method: ThresholdMethod,
    thresholds: &[f64],
) -> Result<ThresholdSearch, CalibrationError> {
    let mut human = Vec::new();
    let mut ai = Vec::new();
    for s in samples {
        if !(s.perplexity.is_finite() && s.perplexity >= 0.0) {
            return Err(CalibrationError::NonFinite {
                ppl: s.perplexity,
                threshold: f64::NAN,
            });
        }
        match s.source {
            Source::Human => human.push(s.perplexity),
            Source::Ai => ai.push(s.perplexity),
        }
    }
    if human.is_empty() || ai.is_empty() {
        return Err(CalibrationError::UndefinedAuc {
            positives: human.len() as u64,
            negatives: ai.len() as u64,
        });
    }
    if thresholds.is_empty() {
        return Err(CalibrationError::Grid("no candidate thresholds".into()));
    }
    human.sort_by(f64::total_cmp);
    ai.sort_by(f64::total_cmp);

    // samples at or above the threshold are called human
    let at_or_above = |sorted: &[f64], t: f64| (sorted.len() - sorted.partition_point(|&p| p < t)) as u64;

    let mut trace = Vec::with_capacity(thresholds.len());
    let mut best: Option<(f64, f64)> = None;
    for &t in thresholds {
        if !(t.is_finite() && t >= 0.0) {
            return Err(CalibrationError::NonFinite { ppl: f64::NAN, threshold: t });
        }
        let tp = at_or_above(&human, t);
        let fp = at_or_above(&ai, t);
        let counts = ConfusionCounts {
            tp,
            fp,
            tn: ai.len() as u64 - fp,
            fn_: human.len() as u64 - tp,
        };
        let value = objective(method, &counts)?;
        trace.push((t, value));
        if best.is_none_or(|(_, b)| value > b) {
            best = Some((t, value));
        }
    }
    let (threshold, objective) = best.expect("at least one candidate");
    Ok(ThresholdSearch {
        threshold,
        objective,
        trace,
    })
}

/// The population a threshold applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Global,
    Knowledge(KnowledgeDim),
    Cognitive(CognitiveDim),
}

impl Category {
    pub fn dimension(&self) -> Dimension {
        match self {
            Category::Global => Dimension::Global,
            Category::Knowledge(_) => Dimension::Knowledge,
            Category::Cognitive(_) => Dimension::Cognitive,
        }
    }

    pub fn name(&self) -> Option<&'static str> {
        match self {
            Category::Global => None,
            Category::Knowledge(k) => Some(k.as_str()),
            Category::Cognitive(c) => Some(c.as_str()),
        }
    }

    pub fn parse(dimension: Dimension, name: Option<&str>) -> Result<Self, String> {
        match (dimension, name) {
            (Dimension::Global, None) => Ok(Category::Global),
            (Dimension::Global, Some(n)) => Err(format!("global entries take no category, got {n:?}")),
            (Dimension::Knowledge, Some(n)) => n.parse().map(Category::Knowledge),
            (Dimension::Cognitive, Some(n)) => n.parse().map(Category::Cognitive),
            (d, None) => Err(format!("{d} entries need a category")),
        }
    }

    /// Whether a response to a question with `meta` belongs to this category.
    pub fn contains(&self, meta: &QuestionMeta) -> bool {
        match self {
            Category::Global => true,
            Category::Knowledge(k) => meta.knowledge == *k,
            Category::Cognitive(c) => meta.cognitive.contains(c),
        }
    }

    /// Every category of a dimension, in declaration order.
    pub fn all_of(dimension: Dimension) -> Vec<Category> {
        match dimension {
            Dimension::Global => vec![Category::Global],
            Dimension::Knowledge => KnowledgeDim::ALL.iter().copied().map(Category::Knowledge).collect(),
            Dimension::Cognitive => CognitiveDim::ALL.iter().copied().map(Category::Cognitive).collect(),
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(n) => write!(f, "{}/{n}", self.dimension()),
            None => f.write_str("global"),
        }
    }
}

/// Identifies one calibrated threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub flavor: DatasetFlavor,
    pub method: ThresholdMethod,
    pub category: Category,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.flavor, self.method, self.category)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellRepr {
    flavor: DatasetFlavor,
    method: ThresholdMethod,
    dimension: Dimension,
    category: Option<String>,
}

impl From<CellKey> for CellRepr {
    fn from(k: CellKey) -> Self {
        Self {
            flavor: k.flavor,
            method: k.method,
            dimension: k.category.dimension(),
            category: k.category.name().map(str::to_string),
        }
    }
}

impl TryFrom<CellRepr> for CellKey {
    type Error = String;

    fn try_from(r: CellRepr) -> Result<Self, Self::Error> {
        Ok(Self {
            flavor: r.flavor,
            method: r.method,
            category: Category::parse(r.dimension, r.category.as_deref())?,
        })
    }
}

impl Serialize for CellKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        CellRepr::from(*self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for CellKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        CellRepr::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    #[serde(flatten)]
    pub key: CellKey,
    pub threshold: f64,
    pub objective: f64,
}

/// A cell that was not calibrated, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Omission {
    #[serde(flatten)]
    pub key: CellKey,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scorer: String,
    pub engine: EngineConfig,
    /// Perplexity cache key the thresholds were fitted on.
    pub cache_key: String,
    pub corpus_hash: String,
    pub grid: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    #[serde(default)]
    pub omissions: Vec<Omission>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub provenance: Provenance,
    pub entries: Vec<ThresholdEntry>,
}

impl ThresholdTable {
    pub fn get(&self, key: &CellKey) -> Option<&ThresholdEntry> {
        self.entries.iter().find(|e| e.key == *key)
    }

    pub fn threshold(&self, flavor: DatasetFlavor, method: ThresholdMethod, category: Category) -> Option<f64> {
        self.get(&CellKey {
            flavor,
            method,
            category,
        })
        .map(|e| e.threshold)
    }

    pub fn is_omitted(&self, key: &CellKey) -> bool {
        self.provenance.omissions.iter().any(|o| o.key == *key)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        self.provenance.grid.validate()?;
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.key) {
                return Err(CalibrationError::Table(format!("duplicate entry {}", e.key)));
            }
            if !(e.threshold.is_finite() && e.threshold >= 0.0) {
                return Err(CalibrationError::Table(format!(
                    "entry {} has invalid threshold {}",
                    e.key, e.threshold
                )));
            }
            if !self.provenance.grid.contains(e.threshold) {
                return Err(CalibrationError::Table(format!(
                    "entry {} threshold {} is not on the search grid",
                    e.key, e.threshold
                )));
            }
            if !(0.0..=1.0).contains(&e.objective) {
                return Err(CalibrationError::Table(format!(
                    "entry {} objective {} outside [0, 1]",
                    e.key, e.objective
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("table serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, CalibrationError> {
        let table: ThresholdTable =
            serde_json::from_str(text).map_err(|e| CalibrationError::Table(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CalibrationError> {
        let text = std::fs::read_to_string(path).map_err(|source| CalibrationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Which cells to calibrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    pub flavors: Vec<DatasetFlavor>,
    pub methods: Vec<ThresholdMethod>,
    pub dimensions: Vec<Dimension>,
    #[serde(default)]
    pub grid: Grid,
}

impl Default for CalibrationPlan {
    fn default() -> Self {
        Self {
            flavors: DatasetFlavor::ALL.to_vec(),
            methods: ThresholdMethod::ALL.to_vec(),
            dimensions: Dimension::ALL.to_vec(),
            grid: Grid::default(),
        }
    }
}

impl CalibrationPlan {
    /// All requested cells in flavor, method, dimension, category order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut cells = Vec::new();
        for &flavor in &self.flavors {
            for &method in &self.methods {
                for &dim in &self.dimensions {
                    for category in Category::all_of(dim) {
                        cells.push(CellKey {
                            flavor,
                            method,
                            category,
                        });
                    }
                }
            }
        }
        cells
    }
}

/// Samples of `corpus` restricted to a flavor and category.
pub fn cell_samples(
    corpus: &Corpus,
    cache_key: &str,
    flavor: DatasetFlavor,
    category: Category,
) -> Result<Vec<Sample>, CalibrationError> {
    let members = corpus.apply_flavor(flavor).select(|_, meta| category.contains(meta));
    samples_from_corpus(&members, cache_key)
}

/// Fits every cell of `plan` on `corpus`. Cells whose population lacks one
/// of the classes are recorded as omissions in the returned provenance.
pub fn calibrate_table(
    corpus: &Corpus,
    plan: &CalibrationPlan,
    mut provenance: Provenance,
) -> Result<ThresholdTable, CalibrationError> {
    plan.grid.validate()?;
    let cache_key = provenance.cache_key.clone();
    // surface stale caches before any cell work
    samples_from_corpus(corpus, &cache_key)?;

    let results: Vec<Result<Result<ThresholdEntry, Omission>, CalibrationError>> = plan
        .cells()
        .into_par_iter()
        .map(|key| {
            let samples = cell_samples(corpus, &cache_key, key.flavor, key.category)?;
            let humans = samples.iter().filter(|s| s.source == Source::Human).count();
            let ais = samples.len() - humans;
            if humans == 0 || ais == 0 {
                return Ok(Err(Omission {
                    key,
                    reason: format!("single class present ({humans} human, {ais} ai)"),
                }));
            }
            let search = optimal_threshold(&samples, key.method, &plan.grid)?;
            Ok(Ok(ThresholdEntry {
                key,
                threshold: search.threshold,
                objective: search.objective,
            }))
        })
        .collect();

    let mut entries = Vec::new();
    provenance.omissions.clear();
    for r in results {
        match r? {
            Ok(e) => entries.push(e),
            Err(o) => provenance.omissions.push(o),
        }
    }
    provenance.grid = plan.grid;
    Ok(ThresholdTable { provenance, entries })
}
