//! Sliding-window perplexity.
//!
//! A text of `seq_len` tokens is covered by windows of at most `m_len`
//! tokens whose start advances by `stride`. Each window contributes the mean
//! NLL of only its new tokens (`trg_len = end_loc - prev_end_loc`); the
//! overlapping prefix conditions the model without being scored twice. The
//! text perplexity is `exp(mean(window nlls))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scorer::{ScoreError, Scorer, ScorerDescriptor, TokenSequence};

/// Texts shorter than this are rejected.
pub const MIN_TOKENS: usize = 2;

/// How `begin_loc` moves between windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Advance {
    /// `begin_loc += stride`; consecutive windows overlap by `m_len - stride`.
    #[default]
    Stride,
    /// `begin_loc += m_len`; windows never overlap.
    MaxLen,
}

/// How window NLLs combine into one perplexity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Unweighted mean of window NLLs.
    #[default]
    WindowMean,
    /// `sum(nll * trg_len) / sum(trg_len)`, i.e. the per-token mean.
    TokenWeighted,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EngineConfig {
    pub m_len: usize,
    pub stride: usize,
    #[serde(default, skip_serializing_if = "is_default")]
    pub advance: Advance,
    #[serde(default, skip_serializing_if = "is_default")]
    pub aggregation: Aggregation,
}

impl EngineConfig {
    pub fn new(m_len: usize, stride: usize) -> Self {
        Self {
            m_len,
            stride,
            advance: Advance::default(),
            aggregation: Aggregation::default(),
        }
    }

    /// Full model window with a half-window stride.
    pub fn for_scorer(descriptor: &ScorerDescriptor) -> Self {
        let m_len = descriptor.max_window;
        Self::new(m_len, (m_len / 2).max(1))
    }

    pub fn with_advance(mut self, advance: Advance) -> Self {
        self.advance = advance;
        self
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.stride == 0 || self.stride > self.m_len {
            return Err(EngineError::Config(format!(
                "need 1 <= stride <= m_len, got stride={} m_len={}",
                self.stride, self.m_len
            )));
        }
        Ok(())
    }

    pub fn validate_for(&self, descriptor: &ScorerDescriptor) -> Result<(), EngineError> {
        self.validate()?;
        if self.m_len > descriptor.max_window {
            return Err(EngineError::Config(format!(
                "m_len {} exceeds scorer {} max_window {}",
                self.m_len, descriptor.name, descriptor.max_window
            )));
        }
        Ok(())
    }

    fn step(&self) -> usize {
        match self.advance {
            Advance::Stride => self.stride,
            Advance::MaxLen => self.m_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpan {
    pub begin_loc: usize,
    pub end_loc: usize,
    pub trg_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub begin_loc: usize,
    pub end_loc: usize,
    pub trg_len: usize,
    pub nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub perplexity: f64,
    pub token_count: usize,
    pub config: EngineConfig,
    #[serde(rename = "scorer")]
    pub scorer_name: String,
    pub windows: Vec<WindowScore>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("cannot schedule windows over an empty sequence")]
    EmptyInput,
    #[error("text has {tokens} tokens, at least {min} required")]
    TooShort { tokens: usize, min: usize },
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error("window {index} [{begin_loc}, {end_loc}) produced non-finite nll {nll}")]
    NonFinite {
        index: usize,
        begin_loc: usize,
        end_loc: usize,
        nll: f64,
    },
    #[error(transparent)]
    Scorer(#[from] ScoreError),
}

impl EngineError {
    pub fn is_backend(&self) -> bool {
        matches!(self, EngineError::Scorer(e) if e.is_backend())
    }
}

pub fn schedule_windows(seq_len: usize, config: &EngineConfig) -> Result<Vec<WindowSpan>, EngineError> {
    config.validate()?;
    if seq_len == 0 {
        return Err(EngineError::EmptyInput);
    }
    let step = config.step();
    let mut spans = Vec::with_capacity(seq_len.div_ceil(step));
    let mut begin_loc = 0;
    let mut prev_end_loc = 0;
    loop {
        let end_loc = (begin_loc + config.m_len).min(seq_len);
        spans.push(WindowSpan {
            begin_loc,
            end_loc,
            trg_len: end_loc - prev_end_loc,
        });
        if end_loc == seq_len {
            break;
        }
        prev_end_loc = end_loc;
        begin_loc += step;
    }
    Ok(spans)
}

/// Combines window scores into a perplexity.
pub fn aggregate(windows: &[WindowScore], mode: Aggregation) -> f64 {
    let mean = match mode {
        Aggregation::WindowMean => windows.iter().map(|w| w.nll).sum::<f64>() / windows.len() as f64,
        Aggregation::TokenWeighted => {
            let tokens: usize = windows.iter().map(|w| w.trg_len).sum();
            windows.iter().map(|w| w.nll * w.trg_len as f64).sum::<f64>() / tokens as f64
        }
    };
    mean.exp()
}

pub fn compute_perplexity<S: Scorer + ?Sized>(
    text: &str,
    scorer: &S,
    config: &EngineConfig,
) -> Result<PerplexityReport, EngineError> {
    let tokens = scorer.tokenize(text)?;
    perplexity_of_tokens(&tokens, scorer, config)
}

pub fn perplexity_of_tokens<S: Scorer + ?Sized>(
    tokens: &TokenSequence,
    scorer: &S,
    config: &EngineConfig,
) -> Result<PerplexityReport, EngineError> {
    let descriptor = scorer.descriptor();
    config.validate_for(&descriptor)?;
    if tokens.len() < MIN_TOKENS {
        return Err(EngineError::TooShort {
            tokens: tokens.len(),
            min: MIN_TOKENS,
        });
    }

    let ids = tokens.ids();
    let spans = schedule_windows(ids.len(), config)?;
    let mut windows = Vec::with_capacity(spans.len());
    for (index, span) in spans.into_iter().enumerate() {
        let nll = scorer.score_window(&ids[span.begin_loc..span.end_loc], span.trg_len)?;
        if !nll.is_finite() {
            return Err(EngineError::NonFinite {
                index,
                begin_loc: span.begin_loc,
                end_loc: span.end_loc,
                nll,
            });
        }
        windows.push(WindowScore {
            begin_loc: span.begin_loc,
            end_loc: span.end_loc,
            trg_len: span.trg_len,
            nll,
        });
    }

    Ok(PerplexityReport {
        perplexity: aggregate(&windows, config.aggregation),
        token_count: ids.len(),
        config: *config,
        scorer_name: descriptor.name,
        windows,
    })
}

fn join_candidate(context: &str, candidate: &str) -> String {
    if context.ends_with(char::is_whitespace) || candidate.starts_with(char::is_whitespace) {
        format!("{context}{candidate}")
    } else {
        format!("{context} {candidate}")
    }
}

/// Perplexity of `context` followed by each candidate, lowest first.
pub fn compare_candidates<S: Scorer + ?Sized>(
    context: &str,
    candidates: &[String],
    scorer: &S,
    config: &EngineConfig,
) -> Result<Vec<(String, f64)>, EngineError> {
    if context.trim().is_empty() {
        return Err(EngineError::EmptyInput);
    }
    if candidates.is_empty() {
        return Err(EngineError::Config("at least one candidate is required".into()));
    }
    let mut ranked = candidates
        .iter()
        .map(|c| {
            let report = compute_perplexity(&join_candidate(context, c), scorer, config)?;
            Ok((c.clone(), report.perplexity))
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{ConstantScorer, NGramConfig, NGramModel, ReplayScorer};

    fn triples(spans: &[WindowSpan]) -> Vec<(usize, usize, usize)> {
        spans.iter().map(|s| (s.begin_loc, s.end_loc, s.trg_len)).collect()
    }

    #[test]
    fn schedule_228_tokens() {
        let spans = schedule_windows(228, &EngineConfig::new(64, 32)).unwrap();
        assert_eq!(
            triples(&spans),
            [
                (0, 64, 64),
                (32, 96, 32),
                (64, 128, 32),
                (96, 160, 32),
                (128, 192, 32),
                (160, 224, 32),
                (192, 228, 4)
            ]
        );
    }

    #[test]
    fn schedule_825_tail() {
        let spans = schedule_windows(825, &EngineConfig::new(64, 32)).unwrap();
        let tail = triples(&spans[spans.len() - 3..]);
        assert_eq!(tail, [(704, 768, 32), (736, 800, 32), (768, 825, 25)]);
    }

    #[test]
    fn short_text_single_window() {
        let spans = schedule_windows(50, &EngineConfig::new(64, 32)).unwrap();
        assert_eq!(triples(&spans), [(0, 50, 50)]);
    }

    #[test]
    fn max_len_advance_has_no_overlap() {
        let cfg = EngineConfig::new(64, 32).with_advance(Advance::MaxLen);
        let spans = schedule_windows(150, &cfg).unwrap();
        assert_eq!(triples(&spans), [(0, 64, 64), (64, 128, 64), (128, 150, 22)]);
    }

    #[test]
    fn schedule_errors() {
        assert!(matches!(
            schedule_windows(0, &EngineConfig::new(8, 4)),
            Err(EngineError::EmptyInput)
        ));
        assert!(schedule_windows(10, &EngineConfig::new(8, 0)).is_err());
        assert!(schedule_windows(10, &EngineConfig::new(8, 9)).is_err());
    }

    #[test]
    fn defaults_halve_the_window() {
        let d = ScorerDescriptor {
            name: "x".into(),
            vocab_size: 10,
            max_window: 1024,
        };
        assert_eq!(EngineConfig::for_scorer(&d), EngineConfig::new(1024, 512));
    }

    #[test]
    fn constant_scorer_gives_e_to_c() {
        let s = ConstantScorer::new(1.7, 64);
        let text = (0..100).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let r = compute_perplexity(&text, &s, &EngineConfig::new(16, 8)).unwrap();
        assert!((r.perplexity - 1.7f64.exp()).abs() < 1e-12);
        assert_eq!(r.windows.iter().map(|w| w.trg_len).sum::<usize>(), 100);
    }

    #[test]
    fn replayed_trace_aggregates_to_mean() {
        let nlls = vec![2.338, 1.938, 2.774, 2.904, 2.399, 2.600, 1.898];
        let s = ReplayScorer::new(nlls.clone(), 32, 64);
        let text = vec!["tok"; 228].join(" ");
        let r = compute_perplexity(&text, &s, &EngineConfig::new(64, 32)).unwrap();
        assert_eq!(r.windows.iter().map(|w| w.nll).collect::<Vec<_>>(), nlls);
        // 16.851 / 7 = 2.407285714..., exp -> 11.1036
        assert!((r.perplexity - 11.10).abs() < 0.01);
    }

    #[test]
    fn token_weighted_mode() {
        let windows = [
            WindowScore { begin_loc: 0, end_loc: 4, trg_len: 4, nll: 1.0 },
            WindowScore { begin_loc: 2, end_loc: 5, trg_len: 1, nll: 2.0 },
        ];
        assert!((aggregate(&windows, Aggregation::WindowMean) - 1.5f64.exp()).abs() < 1e-12);
        assert!((aggregate(&windows, Aggregation::TokenWeighted) - 1.2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn too_short_and_config_errors() {
        let s = ConstantScorer::new(1.0, 64);
        let cfg = EngineConfig::new(8, 4);
        assert!(matches!(
            compute_perplexity("", &s, &cfg),
            Err(EngineError::TooShort { tokens: 0, min: 2 })
        ));
        assert!(matches!(
            compute_perplexity("one", &s, &cfg),
            Err(EngineError::TooShort { tokens: 1, .. })
        ));
        assert!(matches!(
            compute_perplexity("a b c", &s, &EngineConfig::new(128, 64)),
            Err(EngineError::Config(_))
        ));
    }

    #[test]
    fn non_finite_window_aborts() {
        let s = ReplayScorer::new(vec![1.0, f64::NAN, 1.0], 4, 64);
        let text = vec!["x"; 16].join(" ");
        let err = compute_perplexity(&text, &s, &EngineConfig::new(8, 4)).unwrap_err();
        assert!(matches!(err, EngineError::NonFinite { index: 1, begin_loc: 4, end_loc: 12, .. }));
    }

    #[test]
    fn report_json_layout() {
        let s = ConstantScorer::new(1.0, 64);
        let r = compute_perplexity("a b c", &s, &EngineConfig::new(8, 4)).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["config"], serde_json::json!({"m_len": 8, "stride": 4}));
        assert_eq!(v["scorer"], "constant:1");
        assert_eq!(v["token_count"], 3);
        assert_eq!(v["windows"][0]["trg_len"], 3);
        let back: PerplexityReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn candidate_ranking_follows_counts() {
        let corpus = vec!["used responsibly"; 50];
        let model = NGramModel::train(
            &corpus,
            NGramConfig {
                order: 2,
                ..NGramConfig::default()
            },
        )
        .unwrap();
        let cfg = EngineConfig::for_scorer(&model.descriptor());
        let cands = vec!["quickly".to_string(), "responsibly".to_string()];
        let ranked = compare_candidates("developed and used", &cands, &model, &cfg).unwrap();
        assert_eq!(ranked[0].0, "responsibly");
        assert!(ranked[0].1 < ranked[1].1);

        let single = compare_candidates("developed and used", &cands[1..], &model, &cfg).unwrap();
        let direct = compute_perplexity("developed and used responsibly", &model, &cfg).unwrap();
        assert_eq!(single, vec![("responsibly".to_string(), direct.perplexity)]);

        let same = vec!["x".to_string(), "x".to_string()];
        let r = compare_candidates("developed and used", &same, &model, &cfg).unwrap();
        assert_eq!(r[0].1, r[1].1);
        assert!(compare_candidates("", &same, &model, &cfg).is_err());
        assert!(compare_candidates("ctx", &[], &model, &cfg).is_err());
    }
}
