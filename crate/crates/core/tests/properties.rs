mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use common::{schedule_oracle, sweep_oracle, trapezoid_auc};
use ppldetect_core::calibration::{
    auc_single_point, classify, optimal_threshold, optimal_threshold_over, ConfusionCounts, Grid,
    Sample, ThresholdMethod,
};
use ppldetect_core::engine::{aggregate, Aggregation, EngineConfig, WindowScore};
use ppldetect_core::scorer::{NGramConfig, NGramModel, Scorer};
use ppldetect_core::{compute_perplexity, schedule_windows, Source};

const CONFIGS: [(usize, usize); 4] = [(64, 32), (1024, 512), (8, 8), (8, 1)];

#[test]
fn schedule_matches_loop_oracle_exhaustively() {
    for (m_len, stride) in CONFIGS {
        let cfg = EngineConfig::new(m_len, stride);
        for seq_len in 1..=2000 {
            let spans = schedule_windows(seq_len, &cfg).unwrap();
            let got: Vec<_> = spans.iter().map(|s| (s.begin_loc, s.end_loc, s.trg_len)).collect();
            assert_eq!(got, schedule_oracle(seq_len, m_len, stride), "seq_len={seq_len} cfg={cfg:?}");
            assert_eq!(spans.iter().map(|s| s.trg_len).sum::<usize>(), seq_len);
            assert_eq!(spans.last().unwrap().end_loc, seq_len);
            let mut prev_end = 0;
            for s in &spans {
                assert!(s.begin_loc < s.end_loc);
                assert!(s.trg_len <= s.end_loc - s.begin_loc);
                assert_eq!(s.end_loc - s.trg_len, prev_end, "gap or overlap in targets");
                prev_end = s.end_loc;
            }
            if stride == m_len {
                for s in &spans[..spans.len() - 1] {
                    assert_eq!(s.trg_len, s.end_loc - s.begin_loc);
                }
            }
        }
    }
}

fn trained_model(order: usize, k: f64) -> NGramModel {
    let text = std::fs::read_to_string(common::fixtures().join("lm_train.txt")).unwrap();
    let docs: Vec<&str> = text.lines().collect();
    NGramModel::train(
        &docs,
        NGramConfig {
            order,
            smoothing_k: k,
            max_window: 64,
            ..NGramConfig::default()
        },
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conditionals_normalize(order in 1usize..5, k in 0.01f64..3.0, ctx in prop::collection::vec(0u32..40, 0..4)) {
        let m = trained_model(order, k);
        let v = m.vocab_size() as u32;
        let ctx: Vec<u32> = ctx.into_iter().map(|c| c % v).collect();
        let total: f64 = (0..v).map(|t| m.conditional(&ctx, t)).sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "sum = {total}");
        for t in 0..v {
            prop_assert!(m.conditional(&ctx, t) > 0.0);
        }
    }

    #[test]
    fn masking_only_sees_the_window(
        ids in prop::collection::vec(0u32..30, 10..60),
        start in 0usize..5,
        len in 2usize..8,
        target_frac in 0.0f64..1.0,
        replacement in 0u32..30,
    ) {
        let m = trained_model(3, 1.0);
        let v = m.vocab_size() as u32;
        let mut ids: Vec<u32> = ids.into_iter().map(|i| i % v).collect();
        let end = (start + len).min(ids.len());
        let window_len = end - start;
        let target = ((window_len as f64 * target_frac) as usize).clamp(1, window_len);
        let base = m.score_window(&ids[start..end], target).unwrap();

        // outside the window: before it and after it
        if start > 0 {
            ids[start - 1] = replacement % v;
        }
        ids.push(replacement % v);
        let after = m.score_window(&ids[start..end], target).unwrap();
        prop_assert_eq!(base.to_bits(), after.to_bits());
    }

    #[test]
    fn seen_context_respects_count_floor(doc in 0usize..36, pos in 2usize..12) {
        // the most frequent continuation of a seen context scores exactly
        // -ln((c_max + k) / (c(h) + k|V|)); every other token scores at least that
        let m = trained_model(3, 1.0);
        let text = std::fs::read_to_string(common::fixtures().join("lm_train.txt")).unwrap();
        let line = text.lines().nth(doc).unwrap();
        let seq = m.tokenize(line).unwrap();
        prop_assume!(pos < seq.len());
        let ctx = &seq.ids()[pos - 2..pos];
        let v = m.vocab_size();
        let total = m.context_total(ctx) as f64;
        prop_assert!(total > 0.0);
        let (best_tok, c_max) = (0..v as u32).map(|t| (t, m.count(ctx, t))).max_by_key(|x| x.1).unwrap();
        let floor = -((c_max as f64 + 1.0) / (total + v as f64)).ln();
        let mut window = ctx.to_vec();
        window.push(best_tok);
        let nll_best = m.score_window(&window, 1).unwrap();
        prop_assert!((nll_best - floor).abs() < 1e-12);
        for t in 0..v as u32 {
            window[2] = t;
            prop_assert!(m.score_window(&window, 1).unwrap() >= floor - 1e-12);
        }
        prop_assert!(floor < (v as f64).ln());
    }

    #[test]
    fn scoring_is_deterministic(ids in prop::collection::vec(0u32..30, 2..40)) {
        let m = trained_model(3, 0.5);
        let v = m.vocab_size() as u32;
        let ids: Vec<u32> = ids.into_iter().map(|i| i % v).collect();
        let a = m.score_window(&ids, ids.len() / 2 + 1).unwrap();
        let b = m.score_window(&ids, ids.len() / 2 + 1).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn model_file_round_trip(probes in prop::collection::vec((prop::collection::vec(0u32..40, 0..3), 0u32..40), 100)) {
        let m = trained_model(3, 0.7);
        let back = NGramModel::from_json(&m.to_json()).unwrap();
        let v = m.vocab_size() as u32;
        for (ctx, tok) in probes {
            let ctx: Vec<u32> = ctx.into_iter().map(|c| c % v).collect();
            prop_assert_eq!(m.conditional(&ctx, tok % v).to_bits(), back.conditional(&ctx, tok % v).to_bits());
        }
    }

    #[test]
    fn aggregation_ignores_window_order(nlls in prop::collection::vec(0.0f64..8.0, 1..20), seed in any::<u64>()) {
        let windows: Vec<WindowScore> = nlls.iter().enumerate().map(|(i, &nll)| WindowScore {
            begin_loc: i, end_loc: i + 1, trg_len: 1 + i % 3, nll,
        }).collect();
        let mut shuffled = windows.clone();
        let n = shuffled.len();
        for i in 0..n {
            let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) % n as u64) as usize;
            shuffled.swap(i, j);
        }
        for mode in [Aggregation::WindowMean, Aggregation::TokenWeighted] {
            let a = aggregate(&windows, mode);
            let b = aggregate(&shuffled, mode);
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn uniform_scorer_gives_vocab_size(words in prop::collection::vec("[a-z]{1,8}", 2..300), vocab in 2u64..5000) {
        let empty: [&str; 0] = [];
        let m = NGramModel::train(&empty, NGramConfig { synthetic_vocab: vocab, max_window: 64, ..NGramConfig::default() }).unwrap();
        let text = words.join(" ");
        let r = compute_perplexity(&text, &m, &EngineConfig::new(64, 32)).unwrap();
        prop_assert!((r.perplexity - vocab as f64).abs() <= 1e-6 * vocab as f64);
    }

    #[test]
    fn auc_closed_form_matches_trapezoid(tp in 0u64..500, fn_ in 0u64..500, fp in 0u64..500, tn in 0u64..500) {
        prop_assume!(tp + fn_ > 0 && fp + tn > 0);
        let c = ConfusionCounts { tp, fp, tn, fn_ };
        let p = c.roc_point(1.0).unwrap();
        let auc = auc_single_point(&c).unwrap();
        prop_assert!((auc - trapezoid_auc(p.fpr, p.tpr)).abs() < 1e-12);
        prop_assert!((auc - (1.0 + p.tpr - p.fpr) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn classify_is_monotone(a in 0.0f64..200.0, b in 0.0f64..200.0, t in 0.0f64..200.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if classify(hi, t).unwrap() == Source::Ai {
            prop_assert_eq!(classify(lo, t).unwrap(), Source::Ai);
        }
    }

    #[test]
    fn threshold_search_matches_brute_force(
        humans in prop::collection::vec(1u32..8000, 1..40),
        ais in prop::collection::vec(1u32..8000, 1..40),
    ) {
        let mut samples: Vec<Sample> = humans.iter().map(|&p| Sample { perplexity: p as f64 / 100.0, source: Source::Human }).collect();
        samples.extend(ais.iter().map(|&p| Sample { perplexity: p as f64 / 100.0, source: Source::Ai }));
        let grid = Grid::default();
        for method in [ThresholdMethod::Auc, ThresholdMethod::F1] {
            let got = optimal_threshold(&samples, method, &grid).unwrap();
            let (t, obj) = sweep_oracle(&samples, method == ThresholdMethod::Auc, &grid.points());
            prop_assert_eq!(got.threshold, t);
            prop_assert!((got.objective - obj).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_choice_survives_monotone_relabeling(
        humans in prop::collection::vec(1u32..8000, 1..30),
        ais in prop::collection::vec(1u32..8000, 1..30),
    ) {
        let mut samples: Vec<Sample> = humans.iter().map(|&p| Sample { perplexity: p as f64 / 100.0, source: Source::Human }).collect();
        samples.extend(ais.iter().map(|&p| Sample { perplexity: p as f64 / 100.0, source: Source::Ai }));
        let grid = Grid::default().points();
        // x -> 3x + 7 is exact for these values, so order is preserved bit-for-bit
        let f = |x: f64| 3.0 * x + 7.0;
        let mapped: Vec<Sample> = samples.iter().map(|s| Sample { perplexity: f(s.perplexity), ..*s }).collect();
        let mapped_grid: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
        for method in [ThresholdMethod::Auc, ThresholdMethod::F1] {
            let a = optimal_threshold_over(&samples, method, &grid).unwrap();
            let b = optimal_threshold_over(&mapped, method, &mapped_grid).unwrap();
            prop_assert_eq!(f(a.threshold), b.threshold);
            prop_assert_eq!(a.objective, b.objective);
        }
    }
}

#[test]
fn identical_class_distributions_cap_auc() {
    let values = [8.0, 11.5, 14.0, 19.0, 23.5, 30.0, 30.0];
    let mut samples = Vec::new();
    for v in values {
        samples.push(Sample { perplexity: v, source: Source::Human });
        samples.push(Sample { perplexity: v, source: Source::Ai });
    }
    let s = optimal_threshold(&samples, ThresholdMethod::Auc, &Grid::default()).unwrap();
    let bound = 0.5 + 1.0 / (2.0 * values.len() as f64);
    for (_, obj) in &s.trace {
        assert!(*obj <= bound + 1e-12);
    }
}

#[test]
fn unique_thresholds_per_trace_point() {
    let s = optimal_threshold(
        &[
            Sample { perplexity: 30.0, source: Source::Human },
            Sample { perplexity: 10.0, source: Source::Ai },
        ],
        ThresholdMethod::F1,
        &Grid::new(0.0, 5.0, 0.5).unwrap(),
    )
    .unwrap();
    let set: BTreeSet<u64> = s.trace.iter().map(|(t, _)| t.to_bits()).collect();
    assert_eq!(set.len(), s.trace.len());
}
