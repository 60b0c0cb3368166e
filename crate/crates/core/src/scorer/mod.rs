//! Language-model backends that turn text into tokens and score windows of
//! tokens with a mean negative log-likelihood (nats).

mod fixed;
mod ngram;
mod remote;
mod spec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixed::{ConstantScorer, ReplayScorer};
pub use ngram::{NGramModel, NGramConfig, DEFAULT_SYNTHETIC_VOCAB, UNK_TOKEN};
pub use remote::{
    DescriptorResponse, RemoteScorer, ScoreWindowRequest, ScoreWindowResponse, TokenizeRequest,
    TokenizeResponse,
};
pub use spec::ScorerSpec;

/// Token ids of a text in a scorer's own token space.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    ids: Vec<u32>,
    surface: Option<Vec<String>>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        Self { ids, surface: None }
    }

    /// Builds a sequence carrying token strings; lengths must agree.
    pub fn with_surface(ids: Vec<u32>, surface: Vec<String>) -> Result<Self, ScoreError> {
        if ids.len() != surface.len() {
            return Err(ScoreError::Protocol(format!(
                "token id count {} does not match surface count {}",
                ids.len(),
                surface.len()
            )));
        }
        Ok(Self {
            ids,
            surface: Some(surface),
        })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn surface(&self) -> Option<&[String]> {
        self.surface.as_deref()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Static facts about a scorer. `max_window` is the model context limit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScorerDescriptor {
    pub name: String,
    pub vocab_size: u64,
    pub max_window: usize,
}

impl ScorerDescriptor {
    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.vocab_size < 2 {
            return Err(ScoreError::Config(format!(
                "vocab_size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        if self.max_window < 2 {
            return Err(ScoreError::Config(format!(
                "max_window must be at least 2, got {}",
                self.max_window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("scorer transport failure{}: {detail}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, detail: String },
    #[error("target_len {target_len} out of range for a window of {window_len} tokens")]
    TargetLen { target_len: usize, window_len: usize },
    #[error("window of {len} tokens exceeds scorer max_window {max}")]
    WindowTooLong { len: usize, max: usize },
    #[error("token id {0} is outside the scorer vocabulary")]
    UnknownId(u32),
    #[error("malformed scorer response: {0}")]
    Protocol(String),
    #[error("scorer configuration error: {0}")]
    Config(String),
    #[error("model file error: {0}")]
    Io(#[from] std::io::Error),
}

impl ScoreError {
    /// True when the failure came from the scorer backend rather than the caller.
    pub fn is_backend(&self) -> bool {
        matches!(self, ScoreError::Transport { .. } | ScoreError::Protocol(_))
    }
}

/// A language model usable by the perplexity engine.
///
/// Implementations are immutable once built and may be shared across threads.
pub trait Scorer: Send + Sync {
    fn descriptor(&self) -> ScorerDescriptor;

    fn tokenize(&self, text: &str) -> Result<TokenSequence, ScoreError>;

    /// Mean NLL in nats over the last `target_len` positions of `window`.
    /// Earlier positions only condition the prediction.
    fn score_window(&self, window: &[u32], target_len: usize) -> Result<f64, ScoreError>;
}

impl<S: Scorer + ?Sized> Scorer for std::sync::Arc<S> {
    fn descriptor(&self) -> ScorerDescriptor {
        (**self).descriptor()
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, ScoreError> {
        (**self).tokenize(text)
    }

    fn score_window(&self, window: &[u32], target_len: usize) -> Result<f64, ScoreError> {
        (**self).score_window(window, target_len)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn descriptor(&self) -> ScorerDescriptor {
        (**self).descriptor()
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, ScoreError> {
        (**self).tokenize(text)
    }

    fn score_window(&self, window: &[u32], target_len: usize) -> Result<f64, ScoreError> {
        (**self).score_window(window, target_len)
    }
}

/// Checks the `score_window` preconditions shared by every backend.
pub fn check_window(window_len: usize, target_len: usize, max_window: usize) -> Result<(), ScoreError> {
    if target_len == 0 || target_len > window_len {
        return Err(ScoreError::TargetLen {
            target_len,
            window_len,
        });
    }
    if window_len > max_window {
        return Err(ScoreError::WindowTooLong {
            len: window_len,
            max: max_window,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_length_must_match() {
        assert!(TokenSequence::with_surface(vec![1, 2], vec!["a".into()]).is_err());
        let seq = TokenSequence::with_surface(vec![1], vec!["a".into()]).unwrap();
        assert_eq!(seq.surface().unwrap(), ["a".to_string()]);
    }

    #[test]
    fn window_checks() {
        assert!(check_window(5, 5, 8).is_ok());
        assert!(check_window(5, 1, 5).is_ok());
        assert!(matches!(check_window(5, 0, 8), Err(ScoreError::TargetLen { .. })));
        assert!(matches!(check_window(5, 6, 8), Err(ScoreError::TargetLen { .. })));
        assert!(matches!(check_window(9, 2, 8), Err(ScoreError::WindowTooLong { len: 9, max: 8 })));
    }

    #[test]
    fn descriptor_limits() {
        let mut d = ScorerDescriptor {
            name: "x".into(),
            vocab_size: 2,
            max_window: 2,
        };
        assert!(d.validate().is_ok());
        d.max_window = 1;
        assert!(d.validate().is_err());
        d.max_window = 2;
        d.vocab_size = 1;
        assert!(d.validate().is_err());
    }
}
