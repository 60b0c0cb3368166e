use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use super::{
    ConstantScorer, NGramConfig, NGramModel, RemoteScorer, ReplayScorer, ScoreError, Scorer,
};

const FIXED_MAX_WINDOW: usize = 1024;

/// Textual scorer selection, as used by the CLI and pipeline configs.
///
/// * `builtin:<model.json>` - trained n-gram model file
/// * `remote:<url>` - HTTP scorer
/// * `uniform[:<vocab>]` - empty-corpus n-gram model (default vocab 256)
/// * `constant:<nll>` - fixed per-token NLL
/// * `replay:<advance>:<nll>,<nll>,...` - recorded window NLLs
#[derive(Debug, Clone, PartialEq)]
pub enum ScorerSpec {
    Builtin(PathBuf),
    Remote(String),
    Uniform(u64),
    Constant(f64),
    Replay { advance: usize, nlls: Vec<f64> },
}

impl ScorerSpec {
    pub fn open(&self) -> Result<Arc<dyn Scorer>, ScoreError> {
        Ok(match self {
            ScorerSpec::Builtin(path) => Arc::new(NGramModel::load(path).map_err(|e| match e {
                ScoreError::Io(io) => ScoreError::Config(format!(
                    "cannot read model {}: {io}",
                    path.display()
                )),
                other => other,
            })?),
            ScorerSpec::Remote(url) => Arc::new(RemoteScorer::connect(url)?),
            ScorerSpec::Uniform(vocab) => {
                let empty: [&str; 0] = [];
                Arc::new(NGramModel::train(
                    &empty,
                    NGramConfig {
                        synthetic_vocab: *vocab,
                        ..NGramConfig::default()
                    },
                )?)
            }
            ScorerSpec::Constant(nll) => Arc::new(ConstantScorer::new(*nll, FIXED_MAX_WINDOW)),
            ScorerSpec::Replay { advance, nlls } => {
                Arc::new(ReplayScorer::new(nlls.clone(), *advance, FIXED_MAX_WINDOW))
            }
        })
    }
}

impl FromStr for ScorerSpec {
    type Err = ScoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| ScoreError::Config(format!("invalid scorer spec {s:?}: {why}"));
        let (kind, rest) = match s.split_once(':') {
            Some((k, r)) => (k, Some(r)),
            None => (s, None),
        };
        match (kind, rest) {
            ("builtin", Some(path)) if !path.is_empty() => Ok(ScorerSpec::Builtin(path.into())),
            ("remote", Some(url)) if !url.is_empty() => Ok(ScorerSpec::Remote(url.to_string())),
            ("uniform", None) => Ok(ScorerSpec::Uniform(super::DEFAULT_SYNTHETIC_VOCAB)),
            ("uniform", Some(v)) => v
                .parse()
                .map(ScorerSpec::Uniform)
                .map_err(|_| bad("vocab size must be an integer")),
            ("constant", Some(v)) => v
                .parse()
                .map(ScorerSpec::Constant)
                .map_err(|_| bad("nll must be a number")),
            ("replay", Some(r)) => {
                let (advance, list) = r.split_once(':').ok_or_else(|| bad("expected replay:<advance>:<nlls>"))?;
                let advance = advance
                    .parse()
                    .map_err(|_| bad("advance must be a positive integer"))?;
                let nlls = list
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad("nll list must be comma-separated numbers"))?;
                Ok(ScorerSpec::Replay { advance, nlls })
            }
            _ => Err(bad("expected builtin:<path>, remote:<url>, uniform[:<vocab>], constant:<nll> or replay:<advance>:<nlls>")),
        }
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerSpec::Builtin(p) => write!(f, "builtin:{}", p.display()),
            ScorerSpec::Remote(u) => write!(f, "remote:{u}"),
            ScorerSpec::Uniform(v) => write!(f, "uniform:{v}"),
            ScorerSpec::Constant(c) => write!(f, "constant:{c}"),
            ScorerSpec::Replay { advance, nlls } => {
                let list: Vec<String> = nlls.iter().map(f64::to_string).collect();
                write!(f, "replay:{advance}:{}", list.join(","))
            }
        }
    }
}
