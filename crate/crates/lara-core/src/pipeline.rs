//! End-to-end orchestration: data in, report and artifacts out.
//!
//! Stage order is load → label → split → balance → metric → index →
//! select(train) → refine → select(test) → predict → trade → report.
//! Every stage failure is wrapped with the stage name so the operator can
//! see where a run died. All randomness derives from the single run seed
//! through fixed per-stage offsets, which makes whole runs reproducible
//! byte for byte.

use std::path::{Path, PathBuf};

use crate::attention::{self, AttentionConfig, SelectionResult};
use crate::backtest::{self, BacktestReport, Side};
use crate::dataset::{self, Dataset, LabelMode, LabelSpec, SplitSpec};
use crate::error::{Error, Result};
use crate::metric::{self, BaselineKind, MahalanobisMetric, MetricLearnConfig};
use crate::neighbors::{self, AnnParams};
use crate::refine::{self, Ensemble, RefineConfig};

/// Per-stage seed offsets. Keeping them distinct means, say, re-rolling the
/// synthetic source does not silently reshuffle class balancing too.
const SEED_SYNTH: u64 = 1;
const SEED_BALANCE: u64 = 2;
const SEED_METRIC: u64 = 3;
const SEED_INDEX: u64 = 4;
const SEED_LEARNER: u64 = 5;

/// Where the pipeline gets its records.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A CSV on disk; may already carry a label column.
    Csv { path: PathBuf, dim: usize },
    /// Two synthetic Gaussian classes (labels included, prices constant).
    Gaussian {
        n_per_class: usize,
        mean_pos: [f64; 2],
        mean_neg: [f64; 2],
        cov_scale: f64,
    },
    /// Synthetic classes with correlated noise dimensions.
    Correlated { n: usize, positive_ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricChoice {
    Identity,
    InverseCovariance,
    Learned(MetricLearnConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestOptions {
    /// Trade the n highest-probability test signals.
    pub top_n: usize,
    /// Exit a trade this many records after entry.
    pub hold_horizon: usize,
    /// A trade counts as precise when its return strictly exceeds this.
    pub profit_threshold: f64,
    pub risk_free: f64,
    /// Score precision against test labels instead of realized returns;
    /// the only meaningful choice for constant-price synthetic sources.
    pub precision_from_labels: bool,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        BacktestOptions {
            top_n: 50,
            hold_horizon: 5,
            profit_threshold: 0.001,
            risk_free: 0.0,
            precision_from_labels: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub source: DataSource,
    /// Applied only when the source does not already provide labels.
    pub label: LabelSpec,
    pub split: SplitSpec,
    pub metric: MetricChoice,
    pub ann: AnnParams,
    pub attention: AttentionConfig,
    pub refine: RefineConfig,
    pub backtest: BacktestOptions,
    /// Ablations: drop the learned metric, the neighborhood selection, or
    /// the refinement rounds while keeping the rest of the run identical.
    pub no_metric: bool,
    pub no_attention: bool,
    pub no_refine: bool,
    pub seed: u64,
    pub out_dir: PathBuf,
}

/// What a finished run reports back to the caller.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub report: BacktestReport,
    pub report_path: PathBuf,
    pub warnings: Vec<String>,
    pub n_train: usize,
    pub n_test: usize,
    pub selected_train: usize,
    pub selected_test: usize,
    pub n_trades: usize,
    pub dropped_signals: usize,
}

fn side_for_mode(mode: LabelMode) -> Side {
    match mode {
        // Magnitude labels do not carry a direction; trade them long.
        LabelMode::Long | LabelMode::Magnitude => Side::Long,
        LabelMode::Short => Side::Short,
    }
}

fn load_source(cfg: &PipelineConfig) -> Result<Dataset> {
    match &cfg.source {
        DataSource::Csv { path, dim } => dataset::load_csv(path, *dim),
        DataSource::Gaussian {
            n_per_class,
            mean_pos,
            mean_neg,
            cov_scale,
        } => dataset::synth_gaussian(
            *n_per_class,
            *mean_pos,
            *mean_neg,
            *cov_scale,
            cfg.seed.wrapping_add(SEED_SYNTH),
        ),
        DataSource::Correlated { n, positive_ratio } => dataset::synth_correlated(
            *n,
            *positive_ratio,
            cfg.seed.wrapping_add(SEED_SYNTH),
        ),
    }
}

fn resolve_metric(
    cfg: &PipelineConfig,
    train: &Dataset,
    warnings: &mut Vec<String>,
) -> Result<MahalanobisMetric> {
    if cfg.no_metric {
        return Ok(MahalanobisMetric::identity(train.dim()));
    }
    match cfg.metric {
        MetricChoice::Identity => Ok(MahalanobisMetric::identity(train.dim())),
        MetricChoice::InverseCovariance => {
            metric::baseline_metric(BaselineKind::InverseCovariance, Some(train), train.dim())
        }
        MetricChoice::Learned(mut learn_cfg) => {
            learn_cfg.seed = cfg.seed.wrapping_add(SEED_METRIC);
            let outcome = metric::learn_sdml(train, &learn_cfg)?;
            if !outcome.converged {
                warnings.push(format!(
                    "metric learning stopped at the iteration cap ({} iterations) without \
                     meeting the tolerance",
                    outcome.iterations
                ));
            }
            Ok(outcome.metric)
        }
    }
}

/// Writes the per-round ensemble as a single plain-text manifest.
pub fn write_ensemble(ensemble: &Ensemble, mode_line: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str("ensemble v1\n");
    out.push_str(&format!("mode={mode_line}\n"));
    out.push_str(&format!("combiner={}\n", ensemble.combiner));
    out.push_str(&format!(
        "flip_counts={}\n",
        ensemble
            .flip_counts
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",")
    ));
    out.push_str(&format!("predictors={}\n", ensemble.predictors.len()));
    for (i, predictor) in ensemble.predictors.iter().enumerate() {
        out.push_str(&format!("predictor {i}\n"));
        out.push_str(&predictor.to_text());
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("write `{}`", path.display()), e))
}

/// Runs the full pipeline and writes `report.txt`, `metric.csv`,
/// `ensemble.txt`, and (when selection is active) `selection_train.csv`
/// and `selection_test.csv` into the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let mut warnings = Vec::new();

    let ds = load_source(cfg).map_err(Error::stage("load"))?;

    let ds = if ds.labels().is_some() {
        ds
    } else {
        dataset::generate_labels(&ds, &cfg.label).map_err(Error::stage("label"))?
    };

    let split = dataset::chronological_split(&ds, &cfg.split).map_err(Error::stage("split"))?;
    warnings.extend(split.warnings.iter().cloned());
    let test = split.test;

    let train = dataset::balance_classes(&split.train, cfg.seed.wrapping_add(SEED_BALANCE))
        .map_err(Error::stage("balance"))?;

    let metric = resolve_metric(cfg, &train, &mut warnings).map_err(Error::stage("metric"))?;

    let transformed_train = metric.transform(train.features()).map_err(Error::stage("metric"))?;
    let mut ann = cfg.ann;
    ann.seed = cfg.seed.wrapping_add(SEED_INDEX);
    let index = neighbors::build_index(transformed_train.view(), &ann).map_err(Error::stage("index"))?;

    let train_selection: Option<SelectionResult> = if cfg.no_attention {
        None
    } else {
        Some(
            attention::select_training(&train, &metric, &index, &cfg.attention)
                .map_err(Error::stage("select"))?,
        )
    };
    let selected_train_ids: Vec<usize> = match &train_selection {
        Some(sel) => sel.selected_ids.clone(),
        None => (0..train.len()).collect(),
    };
    if selected_train_ids.len() < 2 {
        return Err(Error::stage("select")(Error::InsufficientData {
            needed: 2,
            got: selected_train_ids.len(),
        }));
    }
    let fit_set = train.subset(&selected_train_ids);

    let mut refine_cfg: RefineConfig = cfg.refine;
    refine_cfg.learner.seed = cfg.seed.wrapping_add(SEED_LEARNER);
    if cfg.no_refine {
        refine_cfg.iterations = 0;
    }
    let ensemble = refine::ra_label(
        fit_set.features(),
        fit_set.label_slice().map_err(Error::stage("refine"))?,
        &refine_cfg,
    )
    .map_err(Error::stage("refine"))?;

    let test_selection: Option<SelectionResult> = if cfg.no_attention {
        None
    } else {
        Some(
            attention::select_testing(
                test.features(),
                train.label_slice().map_err(Error::stage("select"))?,
                &metric,
                &index,
                &cfg.attention,
            )
            .map_err(Error::stage("select"))?,
        )
    };
    let selected_test_ids: Vec<usize> = match &test_selection {
        Some(sel) => sel.selected_ids.clone(),
        None => (0..test.len()).collect(),
    };

    // An empty selection is a legitimate outcome (nothing confident to
    // trade), not an error: the report then shows zero transactions.
    let trades;
    let dropped;
    if selected_test_ids.is_empty() {
        trades = Vec::new();
        dropped = 0;
    } else {
        let eval_set = test.subset(&selected_test_ids);
        let probs =
            refine::ensemble_predict(&ensemble, eval_set.features()).map_err(Error::stage("predict"))?;
        let side = side_for_mode(cfg.label.mode);
        let mut signals = backtest::top_n_signals(&probs, cfg.backtest.top_n, side)
            .map_err(Error::stage("trade"))?;
        for signal in &mut signals {
            signal.record_index = selected_test_ids[signal.record_index];
        }
        let sim = backtest::simulate(&signals, test.prices(), cfg.backtest.hold_horizon)
            .map_err(Error::stage("trade"))?;
        trades = sim.trades;
        dropped = sim.dropped;
    }
    if dropped > 0 {
        warnings.push(format!(
            "{dropped} signal(s) fell within {} record(s) of the end of the test range and \
             were not traded",
            cfg.backtest.hold_horizon
        ));
    }

    let mut core = backtest::core_metrics(&trades, cfg.backtest.profit_threshold);
    if cfg.backtest.precision_from_labels && !trades.is_empty() {
        match test.labels() {
            Some(labels) => {
                let hits = trades.iter().filter(|t| labels[t.entry_index] == 1).count();
                core.precision = Some(hits as f64 / trades.len() as f64);
            }
            None => warnings.push(
                "precision_from_labels requested but the test range has no labels; \
                 falling back to return-based precision"
                    .to_string(),
            ),
        }
    }

    let financial = if trades.is_empty() {
        None
    } else {
        let ts: Vec<i64> = trades.iter().map(|t| test.timestamps()[t.entry_index]).collect();
        let rets: Vec<f64> = trades.iter().map(|t| t.ret).collect();
        let dailies = backtest::group_daily_returns(&ts, &rets).map_err(Error::stage("report"))?;
        let total = dailies.iter().fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0;
        Some(
            backtest::financial_metrics(&dailies, total, cfg.backtest.risk_free)
                .map_err(Error::stage("report"))?,
        )
    };
    let report = backtest::build_report(&core, financial.as_ref());

    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::stage("report")(Error::io(format!("create `{}`", cfg.out_dir.display()), e)))?;
    metric::write_metric(&metric, cfg.out_dir.join("metric.csv")).map_err(Error::stage("report"))?;
    if let Some(sel) = &train_selection {
        attention::write_selection(sel, cfg.out_dir.join("selection_train.csv"))
            .map_err(Error::stage("report"))?;
    }
    if let Some(sel) = &test_selection {
        attention::write_selection(sel, cfg.out_dir.join("selection_test.csv"))
            .map_err(Error::stage("report"))?;
    }
    let mode_line = if cfg.no_refine {
        "off".to_string()
    } else {
        cfg.refine.mode.to_string()
    };
    write_ensemble(&ensemble, &mode_line, cfg.out_dir.join("ensemble.txt"))
        .map_err(Error::stage("report"))?;
    let report_path = cfg.out_dir.join("report.txt");
    backtest::emit_report(&report, &report_path).map_err(Error::stage("report"))?;

    Ok(PipelineOutcome {
        report,
        report_path,
        warnings,
        n_train: train.len(),
        n_test: test.len(),
        selected_train: selected_train_ids.len(),
        selected_test: selected_test_ids.len(),
        n_trades: trades.len(),
        dropped_signals: dropped,
    })
}
