#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::Router;
use ppldetect_core::calibration::{CellKey, Grid, Provenance, ThresholdEntry};
use ppldetect_core::scorer::{NGramConfig, NGramModel};
use ppldetect_core::calibration::Sample;
use ppldetect_core::{Category, DatasetFlavor, EngineConfig, Source, ThresholdMethod, ThresholdTable};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Serves `app` on an ephemeral port from a background runtime; returns the base URL.
pub fn spawn(app: Router) -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{addr}")
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

pub fn trained_model() -> Arc<NGramModel> {
    let text = std::fs::read_to_string(fixtures().join("lm_train.txt")).unwrap();
    let docs: Vec<&str> = text.lines().collect();
    Arc::new(
        NGramModel::train(
            &docs,
            NGramConfig {
                smoothing_k: 0.05,
                max_window: 64,
                ..NGramConfig::default()
            },
        )
        .unwrap(),
    )
}

pub fn entry(method: ThresholdMethod, category: Category, threshold: f64) -> ThresholdEntry {
    ThresholdEntry {
        key: CellKey {
            flavor: DatasetFlavor::Orig,
            method,
            category,
        },
        threshold,
        objective: 0.8,
    }
}

pub fn table(scorer: &str, entries: Vec<ThresholdEntry>) -> ThresholdTable {
    ThresholdTable {
        provenance: Provenance {
            scorer: scorer.into(),
            engine: EngineConfig::new(64, 32),
            cache_key: format!("{scorer}@fixture"),
            corpus_hash: "fixture".into(),
            grid: Grid::default(),
            created_at: None,
            omissions: Vec::new(),
        },
        entries,
    }
}

/// Window schedule by direct simulation: walk target positions one token at
/// a time and close a window whenever the next start would be reached.
pub fn schedule_oracle(seq_len: usize, m_len: usize, stride: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut covered = 0usize;
    let mut k = 0usize;
    while covered < seq_len {
        let begin = k * stride;
        let end = std::cmp::min(begin + m_len, seq_len);
        out.push((begin, end, end - covered));
        covered = end;
        k += 1;
    }
    out
}

/// Area under the polyline (0,0)-(fpr,tpr)-(1,1) by trapezoids.
pub fn trapezoid_auc(fpr: f64, tpr: f64) -> f64 {
    let xs = [0.0, fpr, 1.0];
    let ys = [0.0, tpr, 1.0];
    (0..2).map(|i| (xs[i + 1] - xs[i]) * (ys[i] + ys[i + 1]) / 2.0).sum()
}

pub fn f1_oracle(tp: f64, fp: f64, fn_: f64) -> f64 {
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Recount the confusion matrix per threshold and keep the first maximum
/// (values within 1e-12 count as ties).
pub fn sweep_oracle(samples: &[Sample], auc: bool, thresholds: &[f64]) -> (f64, f64) {
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for &t in thresholds {
        let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
        for s in samples {
            let called_human = !(s.perplexity < t);
            match (s.source, called_human) {
                (Source::Human, true) => tp += 1.0,
                (Source::Human, false) => fn_ += 1.0,
                (Source::Ai, true) => fp += 1.0,
                (Source::Ai, false) => tn += 1.0,
            }
        }
        let value = if auc {
            trapezoid_auc(fp / (fp + tn), tp / (tp + fn_))
        } else {
            f1_oracle(tp, fp, fn_)
        };
        if value > best.1 + 1e-12 {
            best = (t, value);
        }
    }
    best
}
