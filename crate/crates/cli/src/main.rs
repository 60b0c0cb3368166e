mod args;

use std::fmt::Write as _;
use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use thiserror::Error;

use args::{CalibrateArgs, Cli, Command, CompareArgs, EngineArgs, EvaluateArgs, FormatArg, ScoreArgs, ServeArgs, ThresholdsArgs, TrainArgs};
use ppldetect_core::calibration::CalibrationError;
use ppldetect_core::engine::{compare_candidates, EngineError};
use ppldetect_core::evaluation::{emit_report, evaluate, ReportFormat};
use ppldetect_core::pipeline::{run_offline, FailureKind, PipelineConfig, PipelineError};
use ppldetect_core::scorer::{NGramConfig, NGramModel, ScoreError};
use ppldetect_core::{compute_perplexity, Corpus, EngineConfig, Scorer, ScorerSpec, ThresholdTable};
use ppldetect_service::{router, scorer_router, Detector};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        if e.is_backend() {
            CliError::Backend(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            e if e.is_backend() => CliError::Backend(e.to_string()),
            EngineError::NonFinite { .. } => CliError::Internal(e.to_string()),
            e => CliError::Input(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e.kind {
            FailureKind::Input => CliError::Input(msg),
            FailureKind::Backend => CliError::Backend(msg),
            FailureKind::Internal => CliError::Internal(msg),
        }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn open_scorer(args: &EngineArgs) -> Result<(Arc<dyn Scorer>, EngineConfig), CliError> {
    let spec: ScorerSpec = args.scorer.parse()?;
    let scorer = spec.open()?;
    let descriptor = scorer.descriptor();
    let m_len = args.m_len.unwrap_or(descriptor.max_window);
    let stride = args.stride.unwrap_or((m_len / 2).max(1));
    let engine = EngineConfig::new(m_len, stride)
        .with_advance(args.advance.into())
        .with_aggregation(args.aggregation.into());
    engine.validate_for(&descriptor)?;
    Ok((scorer, engine))
}

fn cmd_score(args: ScoreArgs) -> Result<(), CliError> {
    let text = match &args.input.file {
        Some(path) => read_file(path)?,
        None => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| CliError::Input(format!("cannot read standard input: {e}")))?;
            buf
        }
    };
    let (scorer, engine) = open_scorer(&args.engine)?;
    let report = compute_perplexity(&text, scorer.as_ref(), &engine)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        return Ok(());
    }
    let mut out = format!("{:>9} {:>9} {:>9} {:>10}\n", "begin_loc", "end_loc", "trg_len", "nll");
    for w in &report.windows {
        let _ = writeln!(out, "{:>9} {:>9} {:>9} {:>10.4}", w.begin_loc, w.end_loc, w.trg_len, w.nll);
    }
    let _ = writeln!(
        out,
        "tokens: {}  windows: {}  perplexity: {:.4}  scorer: {}",
        report.token_count,
        report.windows.len(),
        report.perplexity,
        report.scorer_name
    );
    print!("{out}");
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut docs = Vec::new();
    for path in &args.input {
        let text = read_file(path)?;
        docs.extend(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string));
    }
    let config = NGramConfig {
        order: args.order,
        smoothing_k: args.k,
        synthetic_vocab: args.synthetic_vocab,
        max_window: args.max_window,
    };
    let model = NGramModel::train(&docs, config)?;
    model.save(&args.out)?;
    println!(
        "trained {} on {} documents: vocab {} -> {}",
        model.descriptor().name,
        docs.len(),
        model.vocab_size(),
        args.out.display()
    );
    Ok(())
}

fn rebase(base: &Path, path: &Path) -> PathBuf {
    if path.is_relative() {
        base.join(path)
    } else {
        path.to_path_buf()
    }
}

/// Config file, then environment and flags on top. Relative paths in the
/// file resolve against the file's directory.
fn pipeline_config(args: &CalibrateArgs) -> Result<PipelineConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let mut c = PipelineConfig::load(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            c.corpus = rebase(base, &c.corpus);
            c.output_dir = rebase(base, &c.output_dir);
            if let Some(model) = c.scorer.strip_prefix("builtin:") {
                c.scorer = format!("builtin:{}", rebase(base, Path::new(model)).display());
            }
            c
        }
        None => {
            let missing = |flag: &str| CliError::Input(format!("--{flag} is required without --config"));
            PipelineConfig::new(
                args.corpus.clone().ok_or_else(|| missing("corpus"))?,
                args.scorer.clone().ok_or_else(|| missing("scorer"))?,
                args.out.clone().ok_or_else(|| missing("out"))?,
            )
        }
    };
    if let Some(v) = &args.corpus {
        config.corpus = v.clone();
    }
    if let Some(v) = &args.scorer {
        config.scorer = v.clone();
    }
    if let Some(v) = &args.out {
        config.output_dir = v.clone();
    }
    if args.m_len.is_some() {
        config.engine.m_len = args.m_len;
    }
    if args.stride.is_some() {
        config.engine.stride = args.stride;
    }
    if let Some(v) = args.fraction {
        config.split.fraction = v;
    }
    if let Some(v) = args.seed {
        config.split.seed = v;
    }
    config.rescore |= args.rescore;
    Ok(config)
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), CliError> {
    let config = pipeline_config(&args)?;
    let outcome = run_offline(&config)?;
    let table = &outcome.table;
    println!(
        "entries: {} ({} omitted)",
        table.entries.len(),
        table.provenance.omissions.len()
    );
    for (method, threshold) in outcome.global_thresholds() {
        println!("global threshold {method}: {threshold}");
    }
    let stats = outcome.manifest.stats;
    println!("cache hits: {}, scored: {}", stats.cache_hits, stats.scored);
    println!("artifacts: {}", outcome.layout.root.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let corpus = Corpus::load(&args.corpus).map_err(|e| CliError::Input(e.to_string()))?;
    let table = ThresholdTable::load(&args.thresholds)?;
    let corpus = match (args.fraction, args.seed) {
        (Some(fraction), Some(seed)) => {
            corpus
                .split(fraction, seed)
                .map_err(|e| CliError::Input(e.to_string()))?
                .1
        }
        _ => corpus,
    };
    let mut cells: Vec<_> = table.entries.iter().map(|e| e.key).collect();
    cells.extend(table.provenance.omissions.iter().map(|o| o.key));
    cells.sort();
    let report = evaluate(&corpus, &table, &cells).map_err(|e| CliError::Input(e.to_string()))?;
    let format = match args.format {
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Markdown => ReportFormat::Markdown,
    };
    let text = emit_report(&report, format);
    match &args.out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_thresholds(args: ThresholdsArgs) -> Result<(), CliError> {
    let table = ThresholdTable::load(&args.thresholds)?;
    if args.json {
        print!("{}", table.to_json());
        return Ok(());
    }
    let p = &table.provenance;
    println!("scorer {}  m_len {}  stride {}", p.scorer, p.engine.m_len, p.engine.stride);
    println!("{:<16} {:<6} {:<10} {:<14} {:>9} {:>9}", "flavor", "method", "dimension", "category", "threshold", "objective");
    for e in &table.entries {
        println!(
            "{:<16} {:<6} {:<10} {:<14} {:>9} {:>9.4}",
            e.key.flavor.as_str(),
            e.key.method.as_str(),
            e.key.category.dimension().as_str(),
            e.key.category.name().unwrap_or("-"),
            e.threshold,
            e.objective
        );
    }
    for o in &p.omissions {
        println!("omitted {}: {}", o.key, o.reason);
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<(), CliError> {
    let (scorer, engine) = open_scorer(&args.engine)?;
    let detector = Detector::new(scorer.clone(), engine).map_err(|e| CliError::Input(e.to_string()))?;
    detector.reload(&args.thresholds).map_err(|e| CliError::Input(e.to_string()))?;
    let mut app = router(Arc::new(detector));
    if args.scorer_api {
        app = app.merge(scorer_router(scorer));
    }
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::Input(format!("bad listen address: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    eprintln!("listening on http://{addr}");
    runtime
        .block_on(ppldetect_service::serve(addr, app))
        .map_err(|e| CliError::Input(format!("cannot serve on {addr}: {e}")))
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let (scorer, engine) = open_scorer(&args.engine)?;
    let ranked = compare_candidates(&args.context, &args.candidate, scorer.as_ref(), &engine)?;
    if args.json {
        let rows: Vec<_> = ranked
            .iter()
            .map(|(c, p)| serde_json::json!({ "candidate": c, "perplexity": p }))
            .collect();
        println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
    } else {
        for (i, (candidate, ppl)) in ranked.iter().enumerate() {
            println!("{:>2}. {ppl:>10.4}  {candidate}", i + 1);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Score(a) => cmd_score(a),
        Command::TrainLm(a) => cmd_train(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Thresholds(a) => cmd_thresholds(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
