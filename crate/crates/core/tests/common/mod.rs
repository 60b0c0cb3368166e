//! Independent reference computations used to check the library.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use ppldetect_core::calibration::Sample;
use ppldetect_core::Source;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
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
