//! Word-level add-k smoothed n-gram language model.
//!
//! For a context `h` (the previous `order - 1` tokens, fewer at the start of
//! a window or document) the conditional is
//!
//! ```text
//! P(w | h) = (c(h, w) + k) / (c(h) + k * |V|)
//! ```
//!
//! Training counts every context length from 0 to `order - 1` at each
//! position, so truncated contexts fall back to lower-order statistics
//! rather than to document-start statistics. A model trained on no tokens
//! has only the UNK entry and reports a synthetic vocabulary size, which makes
//! every conditional exactly `1 / synthetic_vocab`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_window, ScoreError, Scorer, ScorerDescriptor, TokenSequence};
use crate::tokenize::split_words;

pub const UNK_TOKEN: &str = "<unk>";
pub const DEFAULT_SYNTHETIC_VOCAB: u64 = 256;
const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NGramConfig {
    pub order: usize,
    pub smoothing_k: f64,
    /// Vocabulary size assumed when training saw no tokens.
    pub synthetic_vocab: u64,
    pub max_window: usize,
}

impl Default for NGramConfig {
    fn default() -> Self {
        Self {
            order: 3,
            smoothing_k: 1.0,
            synthetic_vocab: DEFAULT_SYNTHETIC_VOCAB,
            max_window: 1024,
        }
    }
}

impl NGramConfig {
    fn validate(&self) -> Result<(), ScoreError> {
        if self.order < 1 {
            return Err(ScoreError::Config("order must be at least 1".into()));
        }
        if !(self.smoothing_k.is_finite() && self.smoothing_k > 0.0) {
            return Err(ScoreError::Config(format!(
                "smoothing_k must be a positive finite number, got {}",
                self.smoothing_k
            )));
        }
        if self.synthetic_vocab < 2 {
            return Err(ScoreError::Config("synthetic vocabulary must have at least 2 entries".into()));
        }
        if self.max_window < 2 {
            return Err(ScoreError::Config("max_window must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    config: NGramConfig,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    counts: HashMap<Vec<u32>, ContextCounts>,
    fingerprint: String,
}

/// On-disk layout of a model.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    order: usize,
    smoothing_k: f64,
    vocab: Vec<String>,
    counts: BTreeMap<String, BTreeMap<String, u64>>,
    #[serde(default = "default_synthetic")]
    synthetic_vocab: u64,
    #[serde(default = "default_max_window")]
    max_window: usize,
}

fn default_synthetic() -> u64 {
    DEFAULT_SYNTHETIC_VOCAB
}

fn default_max_window() -> usize {
    NGramConfig::default().max_window
}

fn context_key(ctx: &[u32]) -> String {
    ctx.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

impl NGramModel {
    /// Counts n-grams over `corpus`. Each string is a separate document.
    pub fn train<S: AsRef<str>>(corpus: &[S], config: NGramConfig) -> Result<Self, ScoreError> {
        config.validate()?;
        let mut vocab = vec![UNK_TOKEN.to_string()];
        let mut index = HashMap::from([(UNK_TOKEN.to_string(), 0u32)]);
        let mut counts: HashMap<Vec<u32>, ContextCounts> = HashMap::new();

        for doc in corpus {
            let ids: Vec<u32> = split_words(doc.as_ref())
                .into_iter()
                .map(|w| {
                    if let Some(&id) = index.get(w) {
                        return id;
                    }
                    let id = vocab.len() as u32;
                    vocab.push(w.to_string());
                    index.insert(w.to_string(), id);
                    id
                })
                .collect();

            for (pos, &tok) in ids.iter().enumerate() {
                let longest = pos.min(config.order - 1);
                for len in 0..=longest {
                    let entry = counts.entry(ids[pos - len..pos].to_vec()).or_default();
                    entry.total += 1;
                    *entry.next.entry(tok).or_insert(0) += 1;
                }
            }
        }

        Ok(Self::assemble(config, vocab, index, counts))
    }

    fn assemble(
        config: NGramConfig,
        vocab: Vec<String>,
        index: HashMap<String, u32>,
        counts: HashMap<Vec<u32>, ContextCounts>,
    ) -> Self {
        let mut model = Self {
            config,
            vocab,
            index,
            counts,
            fingerprint: String::new(),
        };
        let digest = Sha256::digest(model.to_json().as_bytes());
        model.fingerprint = hex::encode(&digest[..6]);
        model
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.config.smoothing_k
    }

    /// Observed tokens plus UNK at id 0.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Size of the distribution support used for smoothing.
    pub fn vocab_size(&self) -> u64 {
        if self.vocab.len() <= 1 {
            self.config.synthetic_vocab
        } else {
            self.vocab.len() as u64
        }
    }

    pub fn token_id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    /// Raw count `c(context, token)`.
    pub fn count(&self, context: &[u32], token: u32) -> u64 {
        self.counts
            .get(context)
            .and_then(|c| c.next.get(&token))
            .copied()
            .unwrap_or(0)
    }

    /// Raw count `c(context)`, summed over continuations.
    pub fn context_total(&self, context: &[u32]) -> u64 {
        self.counts.get(context).map_or(0, |c| c.total)
    }

    /// Smoothed `P(token | context)`. Only the last `order - 1` context
    /// tokens are used.
    pub fn conditional(&self, context: &[u32], token: u32) -> f64 {
        let keep = context.len().min(self.config.order - 1);
        let ctx = &context[context.len() - keep..];
        let k = self.config.smoothing_k;
        let (num, den) = match self.counts.get(ctx) {
            Some(c) => (c.next.get(&token).copied().unwrap_or(0), c.total),
            None => (0, 0),
        };
        (num as f64 + k) / (den as f64 + k * self.vocab_size() as f64)
    }

    pub fn to_json(&self) -> String {
        let mut counts = BTreeMap::new();
        for (ctx, c) in &self.counts {
            let next: BTreeMap<String, u64> =
                c.next.iter().map(|(t, n)| (t.to_string(), *n)).collect();
            counts.insert(context_key(ctx), next);
        }
        let file = ModelFile {
            version: FILE_VERSION,
            order: self.config.order,
            smoothing_k: self.config.smoothing_k,
            vocab: self.vocab.clone(),
            counts,
            synthetic_vocab: self.config.synthetic_vocab,
            max_window: self.config.max_window,
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScoreError> {
        let file: ModelFile = serde_json::from_str(text)
            .map_err(|e| ScoreError::Config(format!("invalid n-gram model file: {e}")))?;
        if file.version != FILE_VERSION {
            return Err(ScoreError::Config(format!(
                "unsupported n-gram model version {}",
                file.version
            )));
        }
        let config = NGramConfig {
            order: file.order,
            smoothing_k: file.smoothing_k,
            synthetic_vocab: file.synthetic_vocab,
            max_window: file.max_window,
        };
        config.validate()?;
        if file.vocab.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(ScoreError::Config("vocab must start with the UNK token".into()));
        }
        let mut index = HashMap::with_capacity(file.vocab.len());
        for (id, tok) in file.vocab.iter().enumerate() {
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(ScoreError::Config(format!("duplicate vocab entry {tok:?}")));
            }
        }

        let vocab_len = file.vocab.len() as u64;
        let parse_id = |s: &str| -> Result<u32, ScoreError> {
            let id: u32 = s
                .parse()
                .map_err(|_| ScoreError::Config(format!("bad token id {s:?} in counts")))?;
            if id as u64 >= vocab_len {
                return Err(ScoreError::Config(format!("token id {id} outside vocab")));
            }
            Ok(id)
        };

        let mut counts = HashMap::with_capacity(file.counts.len());
        for (key, next) in &file.counts {
            let ctx = key
                .split_whitespace()
                .map(parse_id)
                .collect::<Result<Vec<_>, _>>()?;
            if ctx.len() >= config.order {
                return Err(ScoreError::Config(format!(
                    "context {key:?} is too long for order {}",
                    config.order
                )));
            }
            let mut entry = ContextCounts::default();
            for (tok, &n) in next {
                if n == 0 {
                    return Err(ScoreError::Config(format!("zero count stored under {key:?}")));
                }
                entry.total += n;
                entry.next.insert(parse_id(tok)?, n);
            }
            counts.insert(ctx, entry);
        }

        Ok(Self::assemble(config, file.vocab, index, counts))
    }

    pub fn save(&self, path: &Path) -> Result<(), ScoreError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScoreError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Scorer for NGramModel {
    fn descriptor(&self) -> ScorerDescriptor {
        ScorerDescriptor {
            name: format!("ngram{}-{}", self.config.order, self.fingerprint),
            vocab_size: self.vocab_size(),
            max_window: self.config.max_window,
        }
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, ScoreError> {
        let words = split_words(text);
        let ids = words.iter().map(|w| self.token_id(w)).collect();
        TokenSequence::with_surface(ids, words.into_iter().map(str::to_owned).collect())
    }

    fn score_window(&self, window: &[u32], target_len: usize) -> Result<f64, ScoreError> {
        check_window(window.len(), target_len, self.config.max_window)?;
        let vocab = self.vocab_size();
        let mut log_sum = 0.0;
        for pos in window.len() - target_len..window.len() {
            let tok = window[pos];
            if tok as u64 >= vocab {
                return Err(ScoreError::UnknownId(tok));
            }
            let start = pos.saturating_sub(self.config.order - 1);
            log_sum += self.conditional(&window[start..pos], tok).ln();
        }
        Ok(-log_sum / target_len as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(order: usize, k: f64) -> NGramConfig {
        NGramConfig {
            order,
            smoothing_k: k,
            ..NGramConfig::default()
        }
    }

    #[test]
    fn rejects_bad_config() {
        let empty: [&str; 0] = [];
        assert!(NGramModel::train(&empty, cfg(0, 1.0)).is_err());
        assert!(NGramModel::train(&empty, cfg(2, 0.0)).is_err());
        assert!(NGramModel::train(&empty, cfg(2, -1.0)).is_err());
        assert!(NGramModel::train(&empty, cfg(2, f64::NAN)).is_err());
    }

    #[test]
    fn bigram_hand_count() {
        // bigrams of "a b a b": (a,b) x2, (b,a) x1
        let k = 0.5;
        let m = NGramModel::train(&["a b a b"], cfg(2, k)).unwrap();
        assert_eq!(m.vocab(), ["<unk>", "a", "b"]);
        let (a, b) = (m.token_id("a"), m.token_id("b"));
        assert_eq!(m.count(&[a], b), 2);
        assert_eq!(m.count(&[b], a), 1);
        assert_eq!(m.context_total(&[a]), 2);
        let expected = (2.0 + k) / (2.0 + k * 3.0);
        assert!((m.conditional(&[a], b) - expected).abs() < 1e-15);
        // empty context holds unigram counts
        assert_eq!(m.context_total(&[]), 4);
    }

    #[test]
    fn empty_corpus_is_uniform_over_synthetic_vocab() {
        let empty: [&str; 0] = [];
        let m = NGramModel::train(&empty, NGramConfig::default()).unwrap();
        assert_eq!(m.vocab_size(), 256);
        let seq = m.tokenize("anything at all goes here").unwrap();
        assert!(seq.ids().iter().all(|&i| i == 0));
        let nll = m.score_window(seq.ids(), 5).unwrap();
        assert!((nll - 256f64.ln()).abs() < 1e-12);
        assert!((m.conditional(&[0, 0], 17) - 1.0 / 256.0).abs() < 1e-18);
    }

    #[test]
    fn builtin_tokenizer_example() {
        let m = NGramModel::train(&["AI has the potential"], NGramConfig::default()).unwrap();
        let seq = m.tokenize("AI has the potential").unwrap();
        assert_eq!(seq.len(), 4);
        assert_eq!(seq.surface().unwrap(), ["AI", "has", "the", "potential"]);
        assert_eq!(seq, m.tokenize("AI has the potential").unwrap());
        assert_eq!(m.tokenize("").unwrap().len(), 0);
    }

    #[test]
    fn full_target_equals_unmasked_mean() {
        let m = NGramModel::train(&["x y z x y z x y"], cfg(3, 1.0)).unwrap();
        let seq = m.tokenize("x y z x y").unwrap();
        let ids = seq.ids();
        let mut sum = 0.0;
        for pos in 0..ids.len() {
            let start = pos.saturating_sub(2);
            sum -= m.conditional(&ids[start..pos], ids[pos]).ln();
        }
        let direct = sum / ids.len() as f64;
        assert_eq!(m.score_window(ids, ids.len()).unwrap(), direct);
    }

    #[test]
    fn window_errors() {
        let m = NGramModel::train(&["a b"], NGramConfig { max_window: 4, ..cfg(2, 1.0) }).unwrap();
        assert!(matches!(m.score_window(&[1, 2], 3), Err(ScoreError::TargetLen { .. })));
        assert!(matches!(
            m.score_window(&[1, 2, 1, 2, 1], 1),
            Err(ScoreError::WindowTooLong { .. })
        ));
        assert!(matches!(m.score_window(&[1, 9], 1), Err(ScoreError::UnknownId(9))));
    }

    #[test]
    fn file_validation() {
        assert!(NGramModel::from_json("{}").is_err());
        let m = NGramModel::train(&["a b c"], cfg(2, 1.0)).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["version"], 1);
        v["version"] = 2.into();
        assert!(NGramModel::from_json(&v.to_string()).is_err());
        v["version"] = 1.into();
        v["counts"]["1 2 3"] = serde_json::json!({"1": 1});
        assert!(NGramModel::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = NGramModel::train(&["a b c"], cfg(2, 1.0)).unwrap();
        let b = NGramModel::train(&["a b d"], cfg(2, 1.0)).unwrap();
        let a2 = NGramModel::from_json(&a.to_json()).unwrap();
        assert_eq!(a.descriptor(), a2.descriptor());
        assert_ne!(a.descriptor().name, b.descriptor().name);
    }
}
