//! End-to-end pipeline runs against synthetic sources: artifact layout,
//! byte-level reproducibility, ablation switches, and stage-tagged errors.

use std::path::Path;

use lara_core::attention::AttentionConfig;
use lara_core::backtest;
use lara_core::dataset::{LabelMode, LabelSpec, SplitSpec};
use lara_core::learner::LearnerConfig;
use lara_core::metric::{self, MetricLearnConfig};
use lara_core::neighbors::AnnParams;
use lara_core::pipeline::{
    run_pipeline, BacktestOptions, DataSource, MetricChoice, PipelineConfig,
};
use lara_core::refine::RefineConfig;
use lara_core::Error;

fn gaussian_cfg(out_dir: &Path, seed: u64) -> PipelineConfig {
    PipelineConfig {
        source: DataSource::Gaussian {
            n_per_class: 150,
            mean_pos: [-2.0, 2.0],
            mean_neg: [2.0, -2.0],
            cov_scale: 1.0,
        },
        label: LabelSpec {
            mode: LabelMode::Long,
            horizon_steps: 5,
            threshold: 0.001,
        },
        // Synthetic timestamps run 0..299: 200 train, 40 valid, 60 test.
        split: SplitSpec {
            train_end: 199,
            valid_end: 239,
        },
        metric: MetricChoice::Identity,
        ann: AnnParams::default(),
        attention: AttentionConfig {
            k: 15,
            ..AttentionConfig::default()
        },
        refine: RefineConfig {
            iterations: 2,
            learner: LearnerConfig {
                n_estimators: 15,
                min_samples_leaf: 5,
                ..LearnerConfig::default()
            },
            ..RefineConfig::default()
        },
        backtest: BacktestOptions {
            top_n: 10,
            hold_horizon: 1,
            precision_from_labels: true,
            ..BacktestOptions::default()
        },
        no_metric: false,
        no_attention: false,
        no_refine: false,
        seed,
        out_dir: out_dir.to_path_buf(),
    }
}

#[test]
fn gaussian_run_produces_report_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = gaussian_cfg(&dir.path().join("run"), 7);
    let outcome = run_pipeline(&cfg).unwrap();

    assert!(outcome.report_path.ends_with("report.txt"));
    let text = std::fs::read_to_string(&outcome.report_path).unwrap();
    let parsed = backtest::parse_report(&text).unwrap();
    assert_eq!(parsed, outcome.report);

    for artifact in [
        "metric.csv",
        "ensemble.txt",
        "selection_train.csv",
        "selection_test.csv",
    ] {
        assert!(
            cfg.out_dir.join(artifact).is_file(),
            "missing artifact {artifact}"
        );
    }

    assert_eq!(outcome.n_train, 200);
    assert_eq!(outcome.n_test, 60);
    assert!(outcome.selected_train >= 2 && outcome.selected_train <= outcome.n_train);
    assert!(outcome.selected_test <= outcome.n_test);
    assert!(outcome.n_trades <= cfg.backtest.top_n);

    // Constant synthetic prices: no realized losses, so the win/loss ratio
    // must stay undefined rather than collapsing to a number.
    assert_eq!(outcome.report.wlr, None);
    assert!(text.contains("wlr: undefined\n"));
    // Label-based precision on well-separated blobs should be strong.
    let precision = outcome.report.precision.expect("trades were made");
    assert!(
        (0.0..=1.0).contains(&precision),
        "precision out of range: {precision}"
    );
    assert!(precision >= 0.8, "blobs should be easy: {precision}");
}

#[test]
fn same_seed_reproduces_every_artifact_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_a = gaussian_cfg(&dir.path().join("a"), 42);
    let cfg_b = gaussian_cfg(&dir.path().join("b"), 42);
    run_pipeline(&cfg_a).unwrap();
    run_pipeline(&cfg_b).unwrap();

    for artifact in [
        "report.txt",
        "metric.csv",
        "ensemble.txt",
        "selection_train.csv",
        "selection_test.csv",
    ] {
        let a = std::fs::read(cfg_a.out_dir.join(artifact)).unwrap();
        let b = std::fs::read(cfg_b.out_dir.join(artifact)).unwrap();
        assert_eq!(a, b, "artifact {artifact} differs between identical runs");
    }

    // A different seed draws a different synthetic sample, which must show
    // up in the selection estimates.
    let cfg_c = gaussian_cfg(&dir.path().join("c"), 43);
    run_pipeline(&cfg_c).unwrap();
    let b = std::fs::read(cfg_b.out_dir.join("selection_train.csv")).unwrap();
    let c = std::fs::read(cfg_c.out_dir.join("selection_train.csv")).unwrap();
    assert_ne!(b, c, "seed change did not affect the run");
}

#[test]
fn ablation_switches_change_the_run_shape() {
    let dir = tempfile::tempdir().unwrap();

    let mut cfg = gaussian_cfg(&dir.path().join("no-attention"), 7);
    cfg.no_attention = true;
    let outcome = run_pipeline(&cfg).unwrap();
    assert_eq!(outcome.selected_train, outcome.n_train);
    assert_eq!(outcome.selected_test, outcome.n_test);
    assert!(!cfg.out_dir.join("selection_train.csv").exists());
    assert!(!cfg.out_dir.join("selection_test.csv").exists());

    let mut cfg = gaussian_cfg(&dir.path().join("no-refine"), 7);
    cfg.no_refine = true;
    run_pipeline(&cfg).unwrap();
    let manifest = std::fs::read_to_string(cfg.out_dir.join("ensemble.txt")).unwrap();
    assert!(manifest.contains("predictors=1\n"), "{manifest}");
    assert!(manifest.contains("mode=off\n"));

    // no_metric forces the identity even when a learned metric was asked for.
    let mut cfg = gaussian_cfg(&dir.path().join("no-metric"), 7);
    cfg.metric = MetricChoice::Learned(MetricLearnConfig {
        max_iters: 50,
        ..MetricLearnConfig::default()
    });
    cfg.no_metric = true;
    run_pipeline(&cfg).unwrap();
    let written = metric::read_metric(cfg.out_dir.join("metric.csv")).unwrap();
    let eye = ndarray::Array2::<f64>::eye(2);
    assert_eq!(written.matrix(), &eye);
}

#[test]
fn learned_metric_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = gaussian_cfg(&dir.path().join("sdml"), 3);
    cfg.metric = MetricChoice::Learned(MetricLearnConfig {
        max_iters: 60,
        ..MetricLearnConfig::default()
    });
    let outcome = run_pipeline(&cfg).unwrap();
    assert!(outcome.report.precision.is_some());
    let written = metric::read_metric(cfg.out_dir.join("metric.csv")).unwrap();
    assert_eq!(written.dim(), 2);
}

#[test]
fn all_signals_dropped_yields_an_all_undefined_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = gaussian_cfg(&dir.path().join("dropped"), 7);
    // Exits would land past the end of the test range for every signal.
    cfg.backtest.hold_horizon = 10_000;
    let outcome = run_pipeline(&cfg).unwrap();
    assert_eq!(outcome.n_trades, 0);
    assert!(outcome.dropped_signals > 0);
    assert!(outcome
        .warnings
        .iter()
        .any(|w| w.contains("not traded")));
    assert_eq!(outcome.report.n_transactions, 0);
    assert_eq!(outcome.report.precision, None);
    assert_eq!(outcome.report.ar, None);
    let text = std::fs::read_to_string(outcome.report_path).unwrap();
    assert!(text.contains("precision: undefined\n"));
    assert!(text.contains("n_transactions: 0\n"));
}

#[test]
fn missing_csv_fails_in_the_load_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = gaussian_cfg(&dir.path().join("x"), 1);
    cfg.source = DataSource::Csv {
        path: dir.path().join("nope.csv"),
        dim: 2,
    };
    let err = run_pipeline(&cfg).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(*stage, "load"),
        other => panic!("expected a stage error, got {other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn oversized_label_horizon_fails_in_the_label_stage() {
    let dir = tempfile::tempdir().unwrap();
    // A small unlabeled CSV so labeling actually has to run.
    let csv_path = dir.path().join("tiny.csv");
    let mut text = String::from("timestamp,price,f0,f1\n");
    for i in 0..10 {
        text.push_str(&format!("{i},100.0,{}.5,0.25\n", i));
    }
    std::fs::write(&csv_path, text).unwrap();

    let mut cfg = gaussian_cfg(&dir.path().join("y"), 1);
    cfg.source = DataSource::Csv {
        path: csv_path,
        dim: 2,
    };
    cfg.label.horizon_steps = 50;
    let err = run_pipeline(&cfg).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(*stage, "label"),
        other => panic!("expected a stage error, got {other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn all_undefined_report_round_trips_through_the_writer() {
    // The no-trade report exercises every `undefined` branch at once.
    let core = backtest::core_metrics(&[], 0.001);
    let report = backtest::build_report(&core, None);
    let text = backtest::format_report(&report);
    let back = backtest::parse_report(&text).unwrap();
    assert_eq!(report, back);
}
