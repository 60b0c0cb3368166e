//! Test-set accuracy of category thresholds against the global threshold.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{
    cell_samples, classify, CalibrationError, Category, CellKey, Omission, Provenance, Sample,
    ThresholdTable,
};
use crate::corpus::{Corpus, Source};

/// Cells with fewer test responses are flagged as low confidence.
pub const LOW_CONFIDENCE_N: usize = 3;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("threshold table has no entry for cell {0}")]
    Coverage(CellKey),
    #[error("unknown report format {0:?}; expected json, csv or markdown")]
    UnknownFormat(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAccuracy {
    #[serde(flatten)]
    pub key: CellKey,
    pub threshold: f64,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Mean of per-class recall; absent when the cell has one class only.
    pub balanced_accuracy: Option<f64>,
    /// Cell accuracy minus the global baseline for the same flavor and method.
    pub delta: Option<f64>,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub flavor: crate::corpus::DatasetFlavor,
    pub method: crate::calibration::ThresholdMethod,
    pub threshold: f64,
    pub n: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub provenance: Provenance,
    pub cells: Vec<CellAccuracy>,
    pub baselines: Vec<Baseline>,
    /// Requested cells that could not be evaluated.
    pub skipped: Vec<Omission>,
}

struct Tally {
    n: usize,
    correct: usize,
    balanced: Option<f64>,
}

fn tally(samples: &[Sample], threshold: f64) -> Result<Tally, CalibrationError> {
    let mut per_class = [(0usize, 0usize); 2];
    for s in samples {
        let slot = &mut per_class[(s.source == Source::Ai) as usize];
        slot.0 += 1;
        if classify(s.perplexity, threshold)? == s.source {
            slot.1 += 1;
        }
    }
    let [(h_n, h_ok), (a_n, a_ok)] = per_class;
    let balanced = (h_n > 0 && a_n > 0).then(|| (h_ok as f64 / h_n as f64 + a_ok as f64 / a_n as f64) / 2.0);
    Ok(Tally {
        n: h_n + a_n,
        correct: h_ok + a_ok,
        balanced,
    })
}

/// Classifies every test response of each requested cell with that cell's
/// threshold and compares with the label.
pub fn evaluate(test: &Corpus, table: &ThresholdTable, cells: &[CellKey]) -> Result<AccuracyReport, EvaluationError> {
    let cache_key = &table.provenance.cache_key;
    let mut baselines: Vec<Baseline> = Vec::new();
    let mut out = Vec::new();
    let mut skipped = Vec::new();

    for &key in cells {
        let Some(entry) = table.get(&key) else {
            if table.is_omitted(&key) {
                skipped.push(Omission {
                    key,
                    reason: "not calibrated".into(),
                });
                continue;
            }
            return Err(EvaluationError::Coverage(key));
        };

        let baseline_key = CellKey {
            category: Category::Global,
            ..key
        };
        let baseline = match baselines
            .iter()
            .find(|b| b.flavor == key.flavor && b.method == key.method)
        {
            Some(b) => Some(b.accuracy),
            None => match table.get(&baseline_key) {
                Some(global) => {
                    let samples = cell_samples(test, cache_key, key.flavor, Category::Global)?;
                    let t = tally(&samples, global.threshold)?;
                    if t.n == 0 {
                        None
                    } else {
                        let accuracy = t.correct as f64 / t.n as f64;
                        baselines.push(Baseline {
                            flavor: key.flavor,
                            method: key.method,
                            threshold: global.threshold,
                            n: t.n,
                            accuracy,
                        });
                        Some(accuracy)
                    }
                }
                None if table.is_omitted(&baseline_key) => None,
                None => return Err(EvaluationError::Coverage(baseline_key)),
            },
        };

        let samples = cell_samples(test, cache_key, key.flavor, key.category)?;
        let t = tally(&samples, entry.threshold)?;
        if t.n == 0 {
            skipped.push(Omission {
                key,
                reason: "no test responses".into(),
            });
            continue;
        }
        let accuracy = t.correct as f64 / t.n as f64;
        out.push(CellAccuracy {
            key,
            threshold: entry.threshold,
            n: t.n,
            correct: t.correct,
            accuracy,
            balanced_accuracy: t.balanced,
            delta: baseline.map(|b| accuracy - b),
            low_confidence: t.n < LOW_CONFIDENCE_N,
        });
    }

    Ok(AccuracyReport {
        provenance: table.provenance.clone(),
        cells: out,
        baselines,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = EvaluationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(EvaluationError::UnknownFormat(other.to_string())),
        }
    }
}

fn opt4(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Serializes a report. CSV carries only the cell rows; JSON and markdown
/// also carry the table provenance.
pub fn emit_report(report: &AccuracyReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from(
                "flavor,method,dimension,category,threshold,n,correct,accuracy,balanced_accuracy,delta,low_confidence\n",
            );
            for c in &report.cells {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{:.4},{},{},{}",
                    c.key.flavor,
                    c.key.method,
                    c.key.category.dimension(),
                    c.key.category.name().unwrap_or(""),
                    c.threshold,
                    c.n,
                    c.correct,
                    c.accuracy,
                    opt4(c.balanced_accuracy),
                    opt4(c.delta),
                    c.low_confidence
                );
            }
            s
        }
        ReportFormat::Markdown => {
            let p = &report.provenance;
            let mut s = format!(
                "Scorer `{}`, m_len {}, stride {}, corpus `{}`\n\n",
                p.scorer, p.engine.m_len, p.engine.stride, p.corpus_hash
            );
            s.push_str("| flavor | method | dimension | category | n | accuracy | delta |\n");
            s.push_str("|---|---|---|---|---|---|---|\n");
            for c in &report.cells {
                let n = if c.low_confidence {
                    format!("{} (low)", c.n)
                } else {
                    c.n.to_string()
                };
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {:.4} | {} |",
                    c.key.flavor,
                    c.key.method,
                    c.key.category.dimension(),
                    c.key.category.name().unwrap_or("-"),
                    n,
                    c.accuracy,
                    opt4(c.delta)
                );
            }
            s
        }
    }
}
