use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ppldetect_core::engine::{Advance, Aggregation};

#[derive(Debug, Parser)]
#[command(name = "ppldetect", version, about = "Perplexity-based detection of AI-written answers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sliding-window perplexity of one text.
    Score(ScoreArgs),
    /// Train the built-in n-gram model.
    TrainLm(TrainArgs),
    /// Score a corpus, fit thresholds and evaluate them.
    Calibrate(CalibrateArgs),
    /// Accuracy of a threshold table on a scored corpus.
    Evaluate(EvaluateArgs),
    /// Print a threshold table.
    Thresholds(ThresholdsArgs),
    /// Run the HTTP detector service.
    Serve(ServeArgs),
    /// Rank candidate continuations of a context by perplexity.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AdvanceArg {
    Stride,
    MaxLen,
}

impl From<AdvanceArg> for Advance {
    fn from(a: AdvanceArg) -> Self {
        match a {
            AdvanceArg::Stride => Advance::Stride,
            AdvanceArg::MaxLen => Advance::MaxLen,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    WindowMean,
    TokenWeighted,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::WindowMean => Aggregation::WindowMean,
            AggregationArg::TokenWeighted => Aggregation::TokenWeighted,
        }
    }
}

/// Scorer and window settings shared by scoring commands.
#[derive(Debug, Args)]
pub struct EngineArgs {
    /// builtin:<model.json>, remote:<url>, uniform[:<vocab>], constant:<nll> or replay:<advance>:<nlls>
    #[arg(long, env = "PPLDETECT_SCORER")]
    pub scorer: String,
    /// Window length in tokens; defaults to the scorer's maximum.
    #[arg(long, env = "PPLDETECT_M_LEN")]
    pub m_len: Option<usize>,
    /// Window step; defaults to half the window.
    #[arg(long, env = "PPLDETECT_STRIDE")]
    pub stride: Option<usize>,
    #[arg(long, value_enum, env = "PPLDETECT_ADVANCE", default_value = "stride")]
    pub advance: AdvanceArg,
    #[arg(long, value_enum, env = "PPLDETECT_AGGREGATION", default_value = "window-mean")]
    pub aggregation: AggregationArg,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct TextSource {
    /// Read the text from a file.
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// Read the text from standard input.
    #[arg(long)]
    pub stdin: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub input: TextSource,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Emit the full report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training file, one document per line; repeatable.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    /// Add-k smoothing constant.
    #[arg(long, default_value_t = 1.0)]
    pub k: f64,
    /// Vocabulary size assumed when the training corpus is empty.
    #[arg(long, default_value_t = 256)]
    pub synthetic_vocab: u64,
    #[arg(long, default_value_t = 1024)]
    pub max_window: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Pipeline config (JSON); flags and environment override its fields.
    #[arg(long, env = "PPLDETECT_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "PPLDETECT_CORPUS")]
    pub corpus: Option<PathBuf>,
    #[arg(long, env = "PPLDETECT_SCORER")]
    pub scorer: Option<String>,
    #[arg(long, env = "PPLDETECT_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "PPLDETECT_M_LEN")]
    pub m_len: Option<usize>,
    #[arg(long, env = "PPLDETECT_STRIDE")]
    pub stride: Option<usize>,
    /// Train share of the stratified split.
    #[arg(long, env = "PPLDETECT_FRACTION")]
    pub fraction: Option<f64>,
    #[arg(long, env = "PPLDETECT_SEED")]
    pub seed: Option<u64>,
    /// Ignore cached perplexities.
    #[arg(long)]
    pub rescore: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
    Markdown,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Corpus with cached perplexities (e.g. a pipeline's scored.jsonl).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, env = "PPLDETECT_THRESHOLDS")]
    pub thresholds: PathBuf,
    /// Evaluate only the test side of a split with this train fraction.
    #[arg(long, requires = "seed")]
    pub fraction: Option<f64>,
    #[arg(long, requires = "fraction")]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: FormatArg,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ThresholdsArgs {
    #[arg(long, env = "PPLDETECT_THRESHOLDS")]
    pub thresholds: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "PPLDETECT_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "PPLDETECT_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "PPLDETECT_THRESHOLDS")]
    pub thresholds: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Also expose the scorer itself under /v1 for remote clients.
    #[arg(long)]
    pub scorer_api: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub context: String,
    /// Candidate continuation; repeatable.
    #[arg(long, required = true)]
    pub candidate: Vec<String>,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub json: bool,
}
