//! Behavior of the `lara` binary itself: exit codes per error category,
//! flag/config-file precedence, and a full stage-by-stage run where each
//! subcommand consumes the files the previous one wrote.

use std::path::Path;
use std::process::{Command, Output};

/// Runs the binary with `args`, the last resort being a panic with the
/// captured streams so a failing test shows what the process actually said.
fn lara(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lara"))
        .args(args)
        .output()
        .expect("spawn lara")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_code(out: &Output, expected: i32) {
    assert_eq!(
        out.status.code(),
        Some(expected),
        "expected exit {expected}\nstdout:\n{}\nstderr:\n{}",
        stdout_of(out),
        stderr_of(out),
    );
}

/// Price series whose direction alternates every step: even rows move up
/// 1%, odd rows move down 1%. `f0` anticipates the next move (so a model
/// can actually learn something) and `f1` breaks distance ties.
fn write_prices_csv(path: &Path, rows: usize) {
    let mut text = String::from("timestamp,price,f0,f1\n");
    let mut price = 100.0f64;
    for i in 0..rows {
        let up_next = i % 2 == 0;
        text.push_str(&format!(
            "{},{},{},{}\n",
            i as i64 * 86_400_000,
            price,
            if up_next { 1.0 } else { 0.0 },
            i as f64 * 0.1,
        ));
        price *= if up_next { 1.01 } else { 0.99 };
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn help_and_version_exit_zero() {
    let help = lara(&["--help"]);
    assert_code(&help, 0);
    let text = stdout_of(&help);
    assert!(text.contains("price-movement forecasting"), "help text:\n{text}");
    for sub in ["synth", "label", "metric", "select", "refine", "backtest", "pipeline"] {
        assert!(text.contains(sub), "help does not list `{sub}`:\n{text}");
    }
    assert_code(&lara(&["--version"]), 0);
}

#[test]
fn unknown_flag_is_a_config_error() {
    let out = lara(&["synth", "--no-such-flag", "--out", "x.csv"]);
    assert_code(&out, 1);
    assert!(stderr_of(&out).contains("--no-such-flag"));
}

#[test]
fn missing_input_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let absent = dir.path().join("absent.csv");
    let out_path = dir.path().join("labeled.csv");
    let out = lara(&[
        "label",
        "--input",
        absent.to_str().unwrap(),
        "--dim",
        "2",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(stderr_of(&out).contains("error: open"));
}

#[test]
fn learned_metric_without_input_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("metric.csv");
    let out = lara(&["metric", "--kind", "sdml", "--dim", "4", "--out", out_path.to_str().unwrap()]);
    assert_code(&out, 1);
    assert!(stderr_of(&out).contains("invalid parameter `input`"));
}

#[test]
fn degenerate_covariance_is_a_numeric_error() {
    // Two records cannot support a 5-dimensional sample covariance.
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("thin.csv");
    std::fs::write(
        &input,
        "timestamp,price,f0,f1,f2,f3,f4\n0,1,0,0,0,0,0\n1,1,1,1,1,1,1\n",
    )
    .unwrap();
    let out_path = dir.path().join("metric.csv");
    let out = lara(&[
        "metric",
        "--kind",
        "invcov",
        "--input",
        input.to_str().unwrap(),
        "--dim",
        "5",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_code(&out, 3);
    assert!(stderr_of(&out).contains("numeric failure"));
}

#[test]
fn predict_without_predictions_out_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("prices.csv");
    write_prices_csv(&prices, 20);
    let labeled = dir.path().join("labeled.csv");
    let out = lara(&[
        "label",
        "--input",
        prices.to_str().unwrap(),
        "--dim",
        "2",
        "--horizon",
        "1",
        "--out",
        labeled.to_str().unwrap(),
    ]);
    assert_code(&out, 0);

    let ensemble = dir.path().join("ensemble.txt");
    let out = lara(&[
        "refine",
        "--train",
        labeled.to_str().unwrap(),
        "--dim",
        "2",
        "--iterations",
        "1",
        "--n-estimators",
        "2",
        "--min-samples-leaf",
        "1",
        "--out",
        ensemble.to_str().unwrap(),
        "--predict",
        labeled.to_str().unwrap(),
    ]);
    assert_code(&out, 1);
    assert!(stderr_of(&out).contains("predictions_out"));
}

#[test]
fn synth_writes_the_requested_number_of_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("synth.csv");
    let out = lara(&[
        "synth",
        "--kind",
        "correlated",
        "--n",
        "50",
        "--positive-ratio",
        "0.3",
        "--seed",
        "9",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(stdout_of(&out).contains("wrote 50 samples (6 features)"));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().count(), 51, "header plus one line per sample");
}

/// Every subcommand once, in dependency order, over one small price
/// series: label -> metric -> select (both phases) -> refine -> backtest.
#[test]
fn stage_chain_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name);
    let arg = |p: &Path| p.to_str().unwrap().to_string();

    let prices = path("prices.csv");
    write_prices_csv(&prices, 20);

    // Horizon 1 leaves 19 labelable rows; even rows precede the up moves.
    let labeled = path("labeled.csv");
    let out = lara(&[
        "label",
        "--input",
        &arg(&prices),
        "--dim",
        "2",
        "--mode",
        "long",
        "--horizon",
        "1",
        "--out",
        &arg(&labeled),
    ]);
    assert_code(&out, 0);
    assert!(stdout_of(&out).contains("labeled 19 of 20 records (10 positive)"));

    let metric = path("metric.csv");
    let out = lara(&["metric", "--kind", "identity", "--dim", "2", "--out", &arg(&metric)]);
    assert_code(&out, 0);

    // Training phase: `f0` separates the classes, so each positive row's
    // four nearest neighbors are positive and only positives pass 0.5.
    let selection = path("selection.csv");
    let out = lara(&[
        "select",
        "--train",
        &arg(&labeled),
        "--dim",
        "2",
        "--metric",
        &arg(&metric),
        "--k",
        "4",
        "--thres",
        "0.5",
        "--out",
        &arg(&selection),
    ]);
    assert_code(&out, 0);
    assert!(stdout_of(&out).contains("selected 10 of 19 queries"));

    // Testing phase over the same rows: queries keep themselves as
    // neighbors (they are index members), which changes nothing here.
    let selection_test = path("selection_test.csv");
    let out = lara(&[
        "select",
        "--train",
        &arg(&labeled),
        "--dim",
        "2",
        "--metric",
        &arg(&metric),
        "--test",
        &arg(&labeled),
        "--k",
        "4",
        "--thres",
        "0.5",
        "--out",
        &arg(&selection_test),
    ]);
    assert_code(&out, 0);
    assert!(stdout_of(&out).contains("selected 10 of 19 queries"));

    // Selection keeps only one class, so refinement trains on the full
    // labeled set and scores the same rows it trained on.
    let ensemble = path("ensemble.txt");
    let predictions = path("predictions.csv");
    let out = lara(&[
        "refine",
        "--train",
        &arg(&labeled),
        "--dim",
        "2",
        "--iterations",
        "2",
        "--ratio",
        "0.1",
        "--n-estimators",
        "10",
        "--max-depth",
        "2",
        "--min-samples-leaf",
        "1",
        "--out",
        &arg(&ensemble),
        "--predict",
        &arg(&labeled),
        "--predictions-out",
        &arg(&predictions),
    ]);
    assert_code(&out, 0);
    assert!(stdout_of(&out).contains("fit 3 predictors on 19 samples"));
    let preds_text = std::fs::read_to_string(&predictions).unwrap();
    assert_eq!(preds_text.lines().next(), Some("id,probability"));
    assert_eq!(preds_text.lines().count(), 20, "header plus one row per query");

    // The top five probabilities sit on rows that precede up moves, so
    // every trade wins and the loss-free ratio renders as undefined.
    let report = path("report.txt");
    let out = lara(&[
        "backtest",
        "--predictions",
        &arg(&predictions),
        "--prices",
        &arg(&prices),
        "--dim",
        "2",
        "--top-n",
        "5",
        "--horizon",
        "1",
        "--out",
        &arg(&report),
    ]);
    assert_code(&out, 0);
    let text = stdout_of(&out);
    assert!(text.contains("precision: 1\n"), "report:\n{text}");
    assert!(text.contains("wlr: undefined\n"), "report:\n{text}");
    assert!(text.contains("n_transactions: 5\n"), "report:\n{text}");
    let written = std::fs::read_to_string(&report).unwrap();
    assert!(
        text.starts_with(&written),
        "stdout should open with the written report\nstdout:\n{text}\nfile:\n{written}"
    );
}

#[test]
fn backtest_out_into_missing_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("prices.csv");
    write_prices_csv(&prices, 10);
    let predictions = dir.path().join("predictions.csv");
    std::fs::write(&predictions, "id,probability\n0,0.9\n1,0.2\n").unwrap();
    let out = lara(&[
        "backtest",
        "--predictions",
        predictions.to_str().unwrap(),
        "--prices",
        prices.to_str().unwrap(),
        "--dim",
        "2",
        "--top-n",
        "1",
        "--horizon",
        "1",
        "--out",
        dir.path().join("no-such-dir/report.txt").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn pipeline_config_unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    std::fs::write(&config, "n_per_class = 50\nbogus = 1\n").unwrap();
    let out = lara(&[
        "pipeline",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "1",
        "--out-dir",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_code(&out, 1);
    assert!(stderr_of(&out).contains("unknown key `bogus`"));
}

#[test]
fn pipeline_config_bad_value_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    std::fs::write(&config, "k = banana\n").unwrap();
    let out = lara(&[
        "pipeline",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "1",
        "--out-dir",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_code(&out, 1);
    assert!(stderr_of(&out).contains("key `k`: cannot parse `banana`"));
}

/// The config file fills gaps; explicit flags always win over it.
#[test]
fn pipeline_flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        "# fast settings for a smoke run\n\
         n_per_class = 100\n\
         metric = identity\n\
         k = 10\n\
         iterations = 1\n\
         n_estimators = 5\n\
         min_samples_leaf = 2\n\
         top_n = 10\n\
         hold_horizon = 1\n",
    )
    .unwrap();

    // Config-only run: 200 samples split 60/20/20 puts 120 in training.
    let out = lara(&[
        "pipeline",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "5",
        "--out-dir",
        dir.path().join("from-config").to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(
        stdout_of(&out).contains("of 120 samples"),
        "stdout:\n{}",
        stdout_of(&out)
    );

    // The flag shrinks the dataset to 120 samples even though the config
    // still says 100 per class.
    let out = lara(&[
        "pipeline",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "5",
        "--n-per-class",
        "60",
        "--out-dir",
        dir.path().join("from-flag").to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(
        stdout_of(&out).contains("of 72 samples"),
        "stdout:\n{}",
        stdout_of(&out)
    );
}
