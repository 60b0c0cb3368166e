//! Deterministic stand-in scorers with prescribed window losses.
//!
//! Both tokenize with the word tokenizer and use each token's position as its
//! id, so a window's first id is its `begin_loc`.

use super::{check_window, ScoreError, Scorer, ScorerDescriptor, TokenSequence};
use crate::tokenize::split_words;

const POSITION_VOCAB: u64 = u32::MAX as u64;

fn position_tokens(text: &str) -> TokenSequence {
    let words = split_words(text);
    let ids = (0..words.len() as u32).collect();
    TokenSequence::with_surface(ids, words.into_iter().map(str::to_owned).collect())
        .expect("lengths agree")
}

/// Returns the same per-token NLL everywhere.
#[derive(Debug, Clone)]
pub struct ConstantScorer {
    nll: f64,
    max_window: usize,
}

impl ConstantScorer {
    pub fn new(nll: f64, max_window: usize) -> Self {
        Self { nll, max_window }
    }
}

impl Scorer for ConstantScorer {
    fn descriptor(&self) -> ScorerDescriptor {
        ScorerDescriptor {
            name: format!("constant:{}", self.nll),
            vocab_size: POSITION_VOCAB,
            max_window: self.max_window,
        }
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, ScoreError> {
        Ok(position_tokens(text))
    }

    fn score_window(&self, window: &[u32], target_len: usize) -> Result<f64, ScoreError> {
        check_window(window.len(), target_len, self.max_window)?;
        Ok(self.nll)
    }
}

/// Replays a recorded list of window NLLs, one per window in schedule order.
///
/// The window ordinal is recovered as `begin_loc / advance`, where `advance`
/// is the engine's begin-location step (the stride, or `m_len` when advancing
/// by the full window).
#[derive(Debug, Clone)]
pub struct ReplayScorer {
    nlls: Vec<f64>,
    advance: usize,
    max_window: usize,
}

impl ReplayScorer {
    pub fn new(nlls: Vec<f64>, advance: usize, max_window: usize) -> Self {
        Self {
            nlls,
            advance: advance.max(1),
            max_window,
        }
    }
}

impl Scorer for ReplayScorer {
    fn descriptor(&self) -> ScorerDescriptor {
        ScorerDescriptor {
            name: "replay".to_string(),
            vocab_size: POSITION_VOCAB,
            max_window: self.max_window,
        }
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, ScoreError> {
        Ok(position_tokens(text))
    }

    fn score_window(&self, window: &[u32], target_len: usize) -> Result<f64, ScoreError> {
        check_window(window.len(), target_len, self.max_window)?;
        let begin = window[0] as usize;
        if !begin.is_multiple_of(self.advance) {
            return Err(ScoreError::Protocol(format!(
                "window begins at {begin}, not a multiple of the replay advance {}",
                self.advance
            )));
        }
        let ordinal = begin / self.advance;
        self.nlls.get(ordinal).copied().ok_or_else(|| {
            ScoreError::Protocol(format!(
                "replay trace has {} windows, window #{ordinal} requested",
                self.nlls.len()
            ))
        })
    }
}
