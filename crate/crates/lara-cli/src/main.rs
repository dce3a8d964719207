//! `lara` — seeded forecasting pipeline runs and their individual stages.
//!
//! Every subcommand is a thin film over the library: it parses flags,
//! loads/stores files, and calls one or two module operations. Exit codes:
//! 0 success, 1 bad flags or config, 2 data problems, 3 numeric failures.

mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use lara_core::attention::{self, AttentionConfig, NeighborScheme, WeightKind};
use lara_core::backtest::{self, Side, TradeSignal};
use lara_core::dataset::{self, Dataset, LabelMode, LabelSpec, SplitSpec};
use lara_core::learner::LearnerConfig;
use lara_core::metric::{self, BaselineKind, MahalanobisMetric, MetricLearnConfig};
use lara_core::neighbors::{self, AnnParams};
use lara_core::pipeline::{
    self, BacktestOptions, DataSource, MetricChoice, PipelineConfig,
};
use lara_core::refine::{self, Combiner, RefineConfig, RefineMode};
use lara_core::{Error, Result};

use config::ConfigMap;

#[derive(Parser)]
#[command(name = "lara", version, about = "Locality-aware price-movement forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset CSV.
    Synth(SynthArgs),
    /// Attach fixed-horizon movement labels to a feature CSV.
    Label(LabelArgs),
    /// Fit or construct a Mahalanobis metric and write it to a file.
    Metric(MetricArgs),
    /// Estimate neighborhood probabilities and select samples.
    Select(SelectArgs),
    /// Run label refinement, write the ensemble, optionally predict.
    Refine(RefineArgs),
    /// Turn predictions into trades and write the evaluation report.
    Backtest(BacktestArgs),
    /// Run the whole pipeline end to end from one seed.
    Pipeline(Box<PipelineArgs>),
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Gaussian,
    Correlated,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceKind {
    Gaussian,
    Correlated,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricKind {
    Identity,
    Invcov,
    Sdml,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    KNeighbor,
    RNeighbor,
}

impl From<SchemeArg> for NeighborScheme {
    fn from(v: SchemeArg) -> Self {
        match v {
            SchemeArg::KNeighbor => NeighborScheme::KNeighbor,
            SchemeArg::RNeighbor => NeighborScheme::RNeighbor,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightArg {
    Identical,
    Reciprocal,
}

impl From<WeightArg> for WeightKind {
    fn from(v: WeightArg) -> Self {
        match v {
            WeightArg::Identical => WeightKind::Identical,
            WeightArg::Reciprocal => WeightKind::ReciprocalDistance,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Long,
    Short,
    Magnitude,
}

impl From<ModeArg> for LabelMode {
    fn from(v: ModeArg) -> Self {
        match v {
            ModeArg::Long => LabelMode::Long,
            ModeArg::Short => LabelMode::Short,
            ModeArg::Magnitude => LabelMode::Magnitude,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RefineModeArg {
    HardFlip,
    ConvexBlend,
}

impl From<RefineModeArg> for RefineMode {
    fn from(v: RefineModeArg) -> Self {
        match v {
            RefineModeArg::HardFlip => RefineMode::HardFlip,
            RefineModeArg::ConvexBlend => RefineMode::ConvexBlend,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CombinerArg {
    Last,
    Vote,
}

impl From<CombinerArg> for Combiner {
    fn from(v: CombinerArg) -> Self {
        match v {
            CombinerArg::Last => Combiner::Last,
            CombinerArg::Vote => Combiner::Vote,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Long,
    Short,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalBasis {
    /// Precision from realized returns (real price data).
    Returns,
    /// Precision from test labels (constant-price synthetic data).
    Labels,
}

fn parse_pair(raw: &str) -> std::result::Result<[f64; 2], String> {
    let (a, b) = raw
        .split_once(',')
        .ok_or_else(|| format!("expected `x,y`, got `{raw}`"))?;
    let x: f64 = a.trim().parse().map_err(|_| format!("bad number `{a}`"))?;
    let y: f64 = b.trim().parse().map_err(|_| format!("bad number `{b}`"))?;
    Ok([x, y])
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Gaussian)]
    kind: SynthKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian: samples per class.
    #[arg(long, default_value_t = 400)]
    n_per_class: usize,
    #[arg(long, value_parser = parse_pair, default_value = "-2,2")]
    mean_pos: [f64; 2],
    #[arg(long, value_parser = parse_pair, default_value = "2,-2")]
    mean_neg: [f64; 2],
    #[arg(long, default_value_t = 8.0)]
    cov_scale: f64,
    /// Correlated: total sample count.
    #[arg(long, default_value_t = 800)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    positive_ratio: f64,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Long)]
    mode: ModeArg,
    #[arg(long, default_value_t = 5)]
    horizon: usize,
    #[arg(long, default_value_t = 0.001)]
    threshold: f64,
}

#[derive(Args)]
struct MetricArgs {
    /// Labeled CSV; not needed for the identity kind.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricKind::Sdml)]
    kind: MetricKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    sparsity_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    logdet_weight: f64,
    #[arg(long, default_value_t = 0.01)]
    step_size: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 200_000)]
    max_pairs: usize,
}

#[derive(Args)]
struct SelectArgs {
    /// Labeled training CSV (provides the index and the labels).
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dim: usize,
    /// Metric file from `lara metric`; identity when omitted.
    #[arg(long)]
    metric: Option<PathBuf>,
    /// Optional query CSV; when given, selection runs in the testing
    /// phase over these rows (their labels, if any, are never read).
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SchemeArg::KNeighbor)]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 150)]
    k: usize,
    /// Squared-distance radius for the r-neighbor scheme.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, value_enum, default_value_t = WeightArg::Identical)]
    weight: WeightArg,
    #[arg(long, default_value_t = 0.5)]
    thres: f64,
    /// Let a training query count itself as its own neighbor.
    #[arg(long)]
    include_self: bool,
    #[arg(long, default_value_t = 16)]
    max_links: usize,
    #[arg(long, default_value_t = 200)]
    ef_construction: usize,
    #[arg(long, default_value_t = 100)]
    ef_search: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RefineArgs {
    /// Labeled training CSV.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dim: usize,
    /// Selection file from `lara select`; keeps only the selected rows.
    #[arg(long)]
    selection: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = RefineModeArg::HardFlip)]
    mode: RefineModeArg,
    #[arg(long, value_enum, default_value_t = CombinerArg::Vote)]
    combiner: CombinerArg,
    #[arg(long, default_value_t = 7)]
    iterations: usize,
    #[arg(long, default_value_t = 0.05)]
    ratio: f64,
    #[arg(long, default_value_t = 100)]
    n_estimators: usize,
    #[arg(long, default_value_t = 3)]
    max_depth: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 20)]
    min_samples_leaf: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV to score with the refined ensemble.
    #[arg(long)]
    predict: Option<PathBuf>,
    /// Where to write `id,probability` rows for --predict.
    #[arg(long)]
    predictions_out: Option<PathBuf>,
}

#[derive(Args)]
struct BacktestArgs {
    /// `id,probability` CSV; ids are row indices into --prices.
    #[arg(long)]
    predictions: PathBuf,
    /// CSV with the price series the trades execute against.
    #[arg(long)]
    prices: PathBuf,
    #[arg(long)]
    dim: usize,
    #[arg(long, value_enum, default_value_t = SideArg::Long)]
    side: SideArg,
    #[arg(long, default_value_t = 50)]
    top_n: usize,
    #[arg(long, default_value_t = 5)]
    horizon: usize,
    #[arg(long, default_value_t = 0.001)]
    threshold: f64,
    #[arg(long, default_value_t = 0.0)]
    risk_free: f64,
    /// Report file; printed to stdout regardless.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Flat `key = value` config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum)]
    source: Option<SourceKind>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long, value_parser = parse_pair)]
    mean_pos: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_pair)]
    mean_neg: Option<[f64; 2]>,
    #[arg(long)]
    cov_scale: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    positive_ratio: Option<f64>,
    #[arg(long, value_enum)]
    label_mode: Option<ModeArg>,
    #[arg(long)]
    label_horizon: Option<usize>,
    #[arg(long)]
    label_threshold: Option<f64>,
    #[arg(long)]
    train_end: Option<i64>,
    #[arg(long)]
    valid_end: Option<i64>,
    #[arg(long, value_enum)]
    metric: Option<MetricKind>,
    #[arg(long)]
    sparsity_weight: Option<f64>,
    #[arg(long)]
    logdet_weight: Option<f64>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    max_pairs: Option<usize>,
    #[arg(long)]
    max_links: Option<usize>,
    #[arg(long)]
    ef_construction: Option<usize>,
    #[arg(long)]
    ef_search: Option<usize>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, value_enum)]
    weight: Option<WeightArg>,
    #[arg(long)]
    thres: Option<f64>,
    #[arg(long)]
    include_self: bool,
    #[arg(long, value_enum)]
    refine_mode: Option<RefineModeArg>,
    #[arg(long, value_enum)]
    combiner: Option<CombinerArg>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    n_estimators: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    min_samples_leaf: Option<usize>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    hold_horizon: Option<usize>,
    #[arg(long)]
    profit_threshold: Option<f64>,
    #[arg(long)]
    risk_free: Option<f64>,
    #[arg(long, value_enum)]
    eval_basis: Option<EvalBasis>,
    /// Ablation: replace the metric with the identity.
    #[arg(long)]
    no_metric: bool,
    /// Ablation: skip neighborhood selection entirely.
    #[arg(long)]
    no_attention: bool,
    /// Ablation: skip refinement rounds (single plain fit).
    #[arg(long)]
    no_refine: bool,
}

/// Config-file keys the `pipeline` command accepts; one per flag above.
const PIPELINE_KEYS: &[&str] = &[
    "source",
    "input",
    "dim",
    "n_per_class",
    "mean_pos",
    "mean_neg",
    "cov_scale",
    "n",
    "positive_ratio",
    "label_mode",
    "label_horizon",
    "label_threshold",
    "train_end",
    "valid_end",
    "metric",
    "sparsity_weight",
    "logdet_weight",
    "step_size",
    "tol",
    "max_iters",
    "max_pairs",
    "max_links",
    "ef_construction",
    "ef_search",
    "scheme",
    "k",
    "radius",
    "weight",
    "thres",
    "include_self",
    "refine_mode",
    "combiner",
    "iterations",
    "ratio",
    "n_estimators",
    "max_depth",
    "learning_rate",
    "min_samples_leaf",
    "top_n",
    "hold_horizon",
    "profit_threshold",
    "risk_free",
    "eval_basis",
    "no_metric",
    "no_attention",
    "no_refine",
];

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version land on stdout and exit 0; real parse
            // errors are config errors (exit 1).
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        let mut source = std::error::Error::source(&e);
        while let Some(inner) = source {
            eprintln!("  caused by: {inner}");
            source = inner.source();
        }
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Label(args) => cmd_label(args),
        Command::Metric(args) => cmd_metric(args),
        Command::Select(args) => cmd_select(args),
        Command::Refine(args) => cmd_refine(args),
        Command::Backtest(args) => cmd_backtest(args),
        Command::Pipeline(args) => cmd_pipeline(*args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let ds = match args.kind {
        SynthKind::Gaussian => dataset::synth_gaussian(
            args.n_per_class,
            args.mean_pos,
            args.mean_neg,
            args.cov_scale,
            args.seed,
        )?,
        SynthKind::Correlated => {
            dataset::synth_correlated(args.n, args.positive_ratio, args.seed)?
        }
    };
    dataset::write_csv(&ds, &args.out)?;
    println!(
        "wrote {} samples ({} features) to {}",
        ds.len(),
        ds.dim(),
        args.out.display()
    );
    Ok(())
}

fn cmd_label(args: LabelArgs) -> Result<()> {
    let ds = dataset::load_csv(&args.input, args.dim)?;
    let spec = LabelSpec {
        mode: args.mode.into(),
        horizon_steps: args.horizon,
        threshold: args.threshold,
    };
    let labeled = dataset::generate_labels(&ds, &spec)?;
    dataset::write_csv(&labeled, &args.out)?;
    let positives = labeled
        .labels()
        .map(|l| l.iter().filter(|&&v| v == 1).count())
        .unwrap_or(0);
    println!(
        "labeled {} of {} records ({} positive) -> {}",
        labeled.len(),
        ds.len(),
        positives,
        args.out.display()
    );
    Ok(())
}

fn cmd_metric(args: MetricArgs) -> Result<()> {
    let learned = match args.kind {
        MetricKind::Identity => metric::baseline_metric(BaselineKind::Identity, None, args.dim)?,
        MetricKind::Invcov => {
            let input = args.input.as_ref().ok_or_else(|| {
                Error::param("input", "required for the invcov metric")
            })?;
            let ds = dataset::load_csv(input, args.dim)?;
            metric::baseline_metric(BaselineKind::InverseCovariance, Some(&ds), args.dim)?
        }
        MetricKind::Sdml => {
            let input = args.input.as_ref().ok_or_else(|| {
                Error::param("input", "required for the sdml metric")
            })?;
            let ds = dataset::load_csv(input, args.dim)?;
            let cfg = MetricLearnConfig {
                sparsity_weight: args.sparsity_weight,
                logdet_weight: args.logdet_weight,
                step_size: args.step_size,
                tol: args.tol,
                max_iters: args.max_iters,
                max_pairs: args.max_pairs,
                seed: args.seed,
            };
            let outcome = metric::learn_sdml(&ds, &cfg)?;
            if !outcome.converged {
                eprintln!(
                    "warning: stopped at the iteration cap ({}) without meeting the tolerance",
                    outcome.iterations
                );
            }
            outcome.metric
        }
    };
    metric::write_metric(&learned, &args.out)?;
    println!("wrote {}x{} metric to {}", learned.dim(), learned.dim(), args.out.display());
    Ok(())
}

fn load_metric_or_identity(path: Option<&PathBuf>, dim: usize) -> Result<MahalanobisMetric> {
    match path {
        Some(p) => {
            let m = metric::read_metric(p)?;
            if m.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.dim(),
                });
            }
            Ok(m)
        }
        None => Ok(MahalanobisMetric::identity(dim)),
    }
}

fn cmd_select(args: SelectArgs) -> Result<()> {
    let train = dataset::load_csv(&args.train, args.dim)?;
    let metric = load_metric_or_identity(args.metric.as_ref(), args.dim)?;
    let attention_cfg = AttentionConfig {
        scheme: args.scheme.into(),
        k: args.k,
        radius: args.radius,
        weight: args.weight.into(),
        thres: args.thres,
        exclude_self: !args.include_self,
    };
    let ann = AnnParams {
        max_links: args.max_links,
        ef_construction: args.ef_construction,
        ef_search: args.ef_search,
        seed: args.seed,
    };
    let transformed = metric.transform(train.features())?;
    let index = neighbors::build_index(transformed.view(), &ann)?;
    let result = match &args.test {
        None => attention::select_training(&train, &metric, &index, &attention_cfg)?,
        Some(test_path) => {
            let test = dataset::load_csv(test_path, args.dim)?;
            attention::select_testing(
                test.features(),
                train.label_slice()?,
                &metric,
                &index,
                &attention_cfg,
            )?
        }
    };
    attention::write_selection(&result, &args.out)?;
    println!(
        "selected {} of {} queries ({} undefined) -> {}",
        result.selected_ids.len(),
        result.p_hat.len(),
        result.undefined_count,
        args.out.display()
    );
    Ok(())
}

fn cmd_refine(args: RefineArgs) -> Result<()> {
    let full = dataset::load_csv(&args.train, args.dim)?;
    let train = match &args.selection {
        None => full,
        Some(path) => {
            let selection = attention::read_selection(path)?;
            if selection.p_hat.len() != full.len() {
                return Err(Error::LengthMismatch {
                    left: selection.p_hat.len(),
                    right: full.len(),
                });
            }
            full.subset(&selection.selected_ids)
        }
    };
    if train.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: train.len(),
        });
    }
    let cfg = RefineConfig {
        iterations: args.iterations,
        ratio: args.ratio,
        mode: args.mode.into(),
        combiner: args.combiner.into(),
        learner: LearnerConfig {
            n_estimators: args.n_estimators,
            max_depth: args.max_depth,
            learning_rate: args.learning_rate,
            min_samples_leaf: args.min_samples_leaf,
            seed: args.seed,
        },
    };
    let ensemble = refine::ra_label(train.features(), train.label_slice()?, &cfg)?;
    pipeline::write_ensemble(&ensemble, &cfg.mode.to_string(), &args.out)?;
    println!(
        "fit {} predictors on {} samples (flips per round: {:?}) -> {}",
        ensemble.predictors.len(),
        train.len(),
        ensemble.flip_counts,
        args.out.display()
    );
    if let Some(predict_path) = &args.predict {
        let out_path = args.predictions_out.as_ref().ok_or_else(|| {
            Error::param("predictions_out", "required together with --predict")
        })?;
        let queries = dataset::load_csv(predict_path, args.dim)?;
        let probs = refine::ensemble_predict(&ensemble, queries.features())?;
        let ids: Vec<usize> = (0..probs.len()).collect();
        write_predictions(&ids, &probs, out_path)?;
        println!("scored {} rows -> {}", probs.len(), out_path.display());
    }
    Ok(())
}

fn cmd_backtest(args: BacktestArgs) -> Result<()> {
    let (ids, probs) = read_predictions(&args.predictions)?;
    let prices_ds = dataset::load_csv(&args.prices, args.dim)?;
    if let Some(&bad) = ids.iter().find(|&&i| i >= prices_ds.len()) {
        return Err(Error::param(
            "predictions",
            format!("id {bad} is outside the {}-row price series", prices_ds.len()),
        ));
    }
    let side = match args.side {
        SideArg::Long => Side::Long,
        SideArg::Short => Side::Short,
    };
    let mut signals = backtest::top_n_signals(&probs, args.top_n, side)?;
    for signal in &mut signals {
        signal.record_index = ids[signal.record_index];
    }
    let report = evaluate_signals(
        &signals,
        &prices_ds,
        args.horizon,
        args.threshold,
        args.risk_free,
    )?;
    print!("{}", backtest::format_report(&report));
    if let Some(out) = &args.out {
        backtest::emit_report(&report, out)?;
        println!("report: {}", out.display());
    }
    Ok(())
}

fn evaluate_signals(
    signals: &[TradeSignal],
    prices_ds: &Dataset,
    horizon: usize,
    threshold: f64,
    risk_free: f64,
) -> Result<backtest::BacktestReport> {
    let sim = backtest::simulate(signals, prices_ds.prices(), horizon)?;
    if sim.dropped > 0 {
        eprintln!(
            "warning: {} signal(s) too close to the end of the series were not traded",
            sim.dropped
        );
    }
    let core = backtest::core_metrics(&sim.trades, threshold);
    let financial = if sim.trades.is_empty() {
        None
    } else {
        let ts: Vec<i64> = sim
            .trades
            .iter()
            .map(|t| prices_ds.timestamps()[t.entry_index])
            .collect();
        let rets: Vec<f64> = sim.trades.iter().map(|t| t.ret).collect();
        let dailies = backtest::group_daily_returns(&ts, &rets)?;
        let total = dailies.iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0;
        Some(backtest::financial_metrics(&dailies, total, risk_free)?)
    };
    Ok(backtest::build_report(&core, financial.as_ref()))
}

fn write_predictions(ids: &[usize], probs: &[f64], path: &Path) -> Result<()> {
    let mut out = String::from("id,probability\n");
    for (&id, p) in ids.iter().zip(probs) {
        out.push_str(&format!("{id},{p}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("write `{}`", path.display()), e))
}

fn read_predictions(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("read `{}`", path.display()), e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != "id,probability" {
        return Err(Error::ParseCell {
            row: 1,
            column: "header".into(),
            value: header.to_string(),
        });
    }
    let mut ids = Vec::new();
    let mut probs = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let Some((id_raw, p_raw)) = line.split_once(',') else {
            return Err(Error::ParseCell {
                row,
                column: "<row width>".into(),
                value: line.to_string(),
            });
        };
        ids.push(id_raw.parse().map_err(|_| Error::ParseCell {
            row,
            column: "id".into(),
            value: id_raw.to_string(),
        })?);
        probs.push(p_raw.parse().map_err(|_| Error::ParseCell {
            row,
            column: "probability".into(),
            value: p_raw.to_string(),
        })?);
    }
    Ok((ids, probs))
}

/// Flag, then config file, then default — the file only fills gaps.
fn pick<T>(
    flag: Option<T>,
    from_cfg: impl FnOnce() -> Result<Option<T>>,
) -> Result<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => from_cfg(),
    }
}

fn resolve_pipeline(args: PipelineArgs) -> Result<PipelineConfig> {
    let cfg = match &args.config {
        Some(path) => ConfigMap::load(path, PIPELINE_KEYS)?,
        None => ConfigMap::empty(),
    };

    let source_kind =
        pick(args.source, || cfg.parse_enum("source"))?.unwrap_or(SourceKind::Gaussian);
    let source = match source_kind {
        SourceKind::Gaussian => DataSource::Gaussian {
            n_per_class: pick(args.n_per_class, || cfg.parse("n_per_class"))?.unwrap_or(400),
            mean_pos: pick(args.mean_pos, || cfg.parse_with("mean_pos", parse_pair))?
                .unwrap_or([-2.0, 2.0]),
            mean_neg: pick(args.mean_neg, || cfg.parse_with("mean_neg", parse_pair))?
                .unwrap_or([2.0, -2.0]),
            cov_scale: pick(args.cov_scale, || cfg.parse("cov_scale"))?.unwrap_or(8.0),
        },
        SourceKind::Correlated => DataSource::Correlated {
            n: pick(args.n, || cfg.parse("n"))?.unwrap_or(800),
            positive_ratio: pick(args.positive_ratio, || cfg.parse("positive_ratio"))?
                .unwrap_or(0.5),
        },
        SourceKind::Csv => {
            let path: PathBuf = pick(args.input, || cfg.parse("input"))?
                .ok_or_else(|| Error::param("input", "required for the csv source"))?;
            let dim = pick(args.dim, || cfg.parse("dim"))?
                .ok_or_else(|| Error::param("dim", "required for the csv source"))?;
            DataSource::Csv { path, dim }
        }
    };

    let label = LabelSpec {
        mode: pick(args.label_mode, || cfg.parse_enum("label_mode"))?
            .unwrap_or(ModeArg::Long)
            .into(),
        horizon_steps: pick(args.label_horizon, || cfg.parse("label_horizon"))?.unwrap_or(5),
        threshold: pick(args.label_threshold, || cfg.parse("label_threshold"))?
            .unwrap_or(0.001),
    };

    // Synthetic timestamps run 0..N-1, so a 60/20/20 split is derivable;
    // CSV sources must state their boundaries.
    let synth_n = match &source {
        DataSource::Gaussian { n_per_class, .. } => Some(2 * n_per_class),
        DataSource::Correlated { n, .. } => Some(*n),
        DataSource::Csv { .. } => None,
    };
    let train_end = pick(args.train_end, || cfg.parse("train_end"))?;
    let valid_end = pick(args.valid_end, || cfg.parse("valid_end"))?;
    let split = match (train_end, valid_end, synth_n) {
        (Some(t), Some(v), _) => SplitSpec {
            train_end: t,
            valid_end: v,
        },
        (t, v, Some(n)) => SplitSpec {
            train_end: t.unwrap_or((n as f64 * 0.6).round() as i64 - 1),
            valid_end: v.unwrap_or((n as f64 * 0.8).round() as i64 - 1),
        },
        _ => {
            return Err(Error::param(
                "train_end",
                "train_end and valid_end are required for the csv source",
            ))
        }
    };

    let metric_kind = pick(args.metric, || cfg.parse_enum("metric"))?.unwrap_or(MetricKind::Sdml);
    let metric = match metric_kind {
        MetricKind::Identity => MetricChoice::Identity,
        MetricKind::Invcov => MetricChoice::InverseCovariance,
        MetricKind::Sdml => {
            let base = MetricLearnConfig::default();
            MetricChoice::Learned(MetricLearnConfig {
                sparsity_weight: pick(args.sparsity_weight, || cfg.parse("sparsity_weight"))?
                    .unwrap_or(base.sparsity_weight),
                logdet_weight: pick(args.logdet_weight, || cfg.parse("logdet_weight"))?
                    .unwrap_or(base.logdet_weight),
                step_size: pick(args.step_size, || cfg.parse("step_size"))?
                    .unwrap_or(base.step_size),
                tol: pick(args.tol, || cfg.parse("tol"))?.unwrap_or(base.tol),
                max_iters: pick(args.max_iters, || cfg.parse("max_iters"))?
                    .unwrap_or(base.max_iters),
                max_pairs: pick(args.max_pairs, || cfg.parse("max_pairs"))?
                    .unwrap_or(base.max_pairs),
                seed: 0, // overridden by the pipeline's per-stage seed
            })
        }
    };

    let ann_base = AnnParams::default();
    let ann = AnnParams {
        max_links: pick(args.max_links, || cfg.parse("max_links"))?.unwrap_or(ann_base.max_links),
        ef_construction: pick(args.ef_construction, || cfg.parse("ef_construction"))?
            .unwrap_or(ann_base.ef_construction),
        ef_search: pick(args.ef_search, || cfg.parse("ef_search"))?.unwrap_or(ann_base.ef_search),
        seed: 0, // overridden by the pipeline's per-stage seed
    };

    let include_self = args.include_self || cfg.parse_bool("include_self")?.unwrap_or(false);
    let attention = AttentionConfig {
        scheme: pick(args.scheme, || cfg.parse_enum("scheme"))?
            .unwrap_or(SchemeArg::KNeighbor)
            .into(),
        k: pick(args.k, || cfg.parse("k"))?.unwrap_or(150),
        radius: pick(args.radius, || cfg.parse("radius"))?,
        weight: pick(args.weight, || cfg.parse_enum("weight"))?
            .unwrap_or(WeightArg::Identical)
            .into(),
        thres: pick(args.thres, || cfg.parse("thres"))?.unwrap_or(0.5),
        exclude_self: !include_self,
    };

    let refine = RefineConfig {
        iterations: pick(args.iterations, || cfg.parse("iterations"))?.unwrap_or(7),
        ratio: pick(args.ratio, || cfg.parse("ratio"))?.unwrap_or(0.05),
        mode: pick(args.refine_mode, || cfg.parse_enum("refine_mode"))?
            .unwrap_or(RefineModeArg::HardFlip)
            .into(),
        combiner: pick(args.combiner, || cfg.parse_enum("combiner"))?
            .unwrap_or(CombinerArg::Vote)
            .into(),
        learner: LearnerConfig {
            n_estimators: pick(args.n_estimators, || cfg.parse("n_estimators"))?.unwrap_or(100),
            max_depth: pick(args.max_depth, || cfg.parse("max_depth"))?.unwrap_or(3),
            learning_rate: pick(args.learning_rate, || cfg.parse("learning_rate"))?
                .unwrap_or(0.1),
            min_samples_leaf: pick(args.min_samples_leaf, || cfg.parse("min_samples_leaf"))?
                .unwrap_or(20),
            seed: 0, // overridden by the pipeline's per-stage seed
        },
    };

    let eval_basis = pick(args.eval_basis, || cfg.parse_enum("eval_basis"))?;
    let precision_from_labels = match eval_basis {
        Some(EvalBasis::Labels) => true,
        Some(EvalBasis::Returns) => false,
        // Synthetic prices are constant, so returns carry no signal there.
        None => !matches!(source, DataSource::Csv { .. }),
    };
    let backtest_options = BacktestOptions {
        top_n: pick(args.top_n, || cfg.parse("top_n"))?.unwrap_or(50),
        hold_horizon: pick(args.hold_horizon, || cfg.parse("hold_horizon"))?.unwrap_or(5),
        profit_threshold: pick(args.profit_threshold, || cfg.parse("profit_threshold"))?
            .unwrap_or(0.001),
        risk_free: pick(args.risk_free, || cfg.parse("risk_free"))?.unwrap_or(0.0),
        precision_from_labels,
    };

    Ok(PipelineConfig {
        source,
        label,
        split,
        metric,
        ann,
        attention,
        refine,
        backtest: backtest_options,
        no_metric: args.no_metric || cfg.parse_bool("no_metric")?.unwrap_or(false),
        no_attention: args.no_attention || cfg.parse_bool("no_attention")?.unwrap_or(false),
        no_refine: args.no_refine || cfg.parse_bool("no_refine")?.unwrap_or(false),
        seed: args.seed,
        out_dir: args.out_dir,
    })
}

fn cmd_pipeline(args: PipelineArgs) -> Result<()> {
    let cfg = resolve_pipeline(args)?;
    let outcome = pipeline::run_pipeline(&cfg)?;
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    print!("{}", backtest::format_report(&outcome.report));
    println!(
        "trained on {} of {} samples, traded {} of {} test rows",
        outcome.selected_train, outcome.n_train, outcome.n_trades, outcome.n_test
    );
    println!("report: {}", outcome.report_path.display());
    Ok(())
}
