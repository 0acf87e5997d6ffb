//! CLI surface checks: file emission, exit codes, plot data, and the
//! comparison table.

use hvfl_cli::compare::run_comparison;
use hvfl_cli::config::{ComparisonSpec, ExperimentConfig};
use hvfl_cli::plot::emit_plot_data;
use hvfl_cli::runner::run_experiment;
use hvfl_cli::CliError;
use std::path::Path;
use std::process::Command;

const SMOKE_CONFIG: &str = r#"
seed = 5
[dataset]
kind = "regression"
n_samples = 80
n_features = 5
noise_std = 0.3
[topology]
n_horizontal = 2
n_vertical = 1
[model]
kind = "ridge"
[train]
learning_rate = 0.05
rounds = 5
alpha = 0.1
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_emits_the_three_formats_with_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMOKE_CONFIG);
    let cfg = ExperimentConfig::load(&config).unwrap();
    let out = dir.path().join("out");
    let summary = run_experiment(&cfg, &out).unwrap();
    assert_eq!(summary.rounds, 5);
    for file in ["history.csv", "analysis.json", "config_echo.json"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let rows: Vec<&str> = history.lines().collect();
    assert_eq!(rows[0], "round,train_loss,test_loss,grad_norm,sigma_hat");
    assert_eq!(rows.len(), 1 + 5, "expected header plus one row per round");
}

#[test]
fn validation_failure_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMOKE_CONFIG.replace("learning_rate = 0.05", "learning_rate = -1.0");
    let config = write_config(dir.path(), &bad);
    let cfg = ExperimentConfig::load(&config).unwrap();
    let out = dir.path().join("out");
    let err = run_experiment(&cfg, &out).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert!(err.to_string().contains("train.learning_rate"));
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists(), "output directory created despite invalid config");
}

#[test]
fn binary_exit_codes_for_ok_invalid_and_divergent_runs() {
    let binary = env!("CARGO_BIN_EXE_hvfl");
    let dir = tempfile::tempdir().unwrap();
    // Valid run: exit 0.
    let config = write_config(dir.path(), SMOKE_CONFIG);
    let out = dir.path().join("ok");
    let status = Command::new(binary)
        .args(["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    // Invalid config (negative learning rate): exit 2, message names the field.
    let bad = SMOKE_CONFIG.replace("learning_rate = 0.05", "learning_rate = -3.0");
    let bad_path = dir.path().join("bad.toml");
    std::fs::write(&bad_path, bad).unwrap();
    let output = Command::new(binary)
        .args(["run", bad_path.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("train.learning_rate"));
    // Diverging run (absurd learning rate): exit 3, message names a round.
    let hot = SMOKE_CONFIG
        .replace("learning_rate = 0.05", "learning_rate = 1e9")
        .replace("rounds = 5", "rounds = 500");
    let hot_path = dir.path().join("hot.toml");
    std::fs::write(&hot_path, hot).unwrap();
    let output = Command::new(binary)
        .args(["run", hot_path.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&output.stderr).contains("round"));
}

#[test]
fn seed_and_rounds_flags_override_the_config() {
    let binary = env!("CARGO_BIN_EXE_hvfl");
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMOKE_CONFIG);
    let out = dir.path().join("out");
    let status = Command::new(binary)
        .args([
            "run",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "99",
            "--rounds",
            "3",
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config_echo.json")).unwrap())
            .unwrap();
    assert_eq!(echo["seed"], 99);
    assert_eq!(echo["train"]["rounds"], 3);
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 3);
}

#[test]
fn plot_emits_dat_files_matching_history_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMOKE_CONFIG);
    let cfg = ExperimentConfig::load(&config).unwrap();
    let out = dir.path().join("out");
    run_experiment(&cfg, &out).unwrap();
    let summary = emit_plot_data(&out).unwrap();
    assert!(summary.files.contains(&"train_loss.dat".to_string()));
    assert!(summary.files.contains(&"bound.dat".to_string()));
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let train = std::fs::read_to_string(out.join("train_loss.dat")).unwrap();
    let test = std::fs::read_to_string(out.join("test_loss.dat")).unwrap();
    assert_eq!(train.lines().count(), 5);
    assert_eq!(test.lines().count(), 5);
    for (h, (t_train, t_test)) in history
        .lines()
        .skip(1)
        .zip(train.lines().zip(test.lines()))
    {
        let cols: Vec<&str> = h.split(',').collect();
        // Plot values are copied verbatim from the history columns.
        assert_eq!(t_train, format!("{} {}", cols[0], cols[1]));
        assert_eq!(t_test, format!("{} {}", cols[0], cols[2]));
    }
}

#[test]
fn plot_without_analysis_skips_bound_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let no_analysis = format!("{SMOKE_CONFIG}\n[analysis]\nenabled = false\n");
    let config = write_config(dir.path(), &no_analysis);
    let cfg = ExperimentConfig::load(&config).unwrap();
    let out = dir.path().join("out");
    run_experiment(&cfg, &out).unwrap();
    let analysis = std::fs::read_to_string(out.join("analysis.json")).unwrap();
    assert!(analysis.contains("\"enabled\": false"));
    let summary = emit_plot_data(&out).unwrap();
    assert!(!summary.files.contains(&"bound.dat".to_string()));
    assert!(!out.join("bound.dat").exists());
    assert!(out.join("train_loss.dat").exists());
}

#[test]
fn plot_on_missing_history_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = emit_plot_data(dir.path()).unwrap_err();
    assert!(err.to_string().contains("history"));
}

const COMPARE_SPEC: &str = r#"
seeds = [1, 2, 3]

[base]
seed = 0
[base.dataset]
kind = "classification"
n_samples = 120
n_features = 8
n_classes = 3
cluster_sep = 3.0
[base.topology]
n_horizontal = 2
n_vertical = 2
[base.model]
kind = "logistic"
[base.train]
learning_rate = 0.1
rounds = 4
[base.analysis]
enabled = false

[[arms]]
label = "left"

[[arms]]
label = "right"
"#;

#[test]
fn identical_arms_have_zero_relative_difference() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("compare.toml");
    std::fs::write(&spec_path, COMPARE_SPEC).unwrap();
    let spec = ComparisonSpec::load(&spec_path).unwrap();
    let out = dir.path().join("cmp");
    let summary = run_comparison(&spec, &out).unwrap();
    assert_eq!(summary.arms.len(), 2);
    // Same config, paired seeds: the arms are bit-identical.
    assert_eq!(
        summary.arms[0].final_test_losses,
        summary.arms[1].final_test_losses
    );
    assert_eq!(summary.relative_differences[0].percent, 0.0);
    assert!(out.join("summary.csv").exists());
    assert!(out.join("comparison.json").exists());
    assert!(out.join("curves_left.csv").exists());
    assert!(out.join("curves_right.csv").exists());
    let line = &summary.report_lines()[0];
    assert!(line.contains('%'), "report line should carry a percentage: {line}");
}

#[test]
fn single_seed_comparison_leaves_sd_absent() {
    let dir = tempfile::tempdir().unwrap();
    let single = COMPARE_SPEC.replace("seeds = [1, 2, 3]", "seeds = [1]");
    let spec_path = dir.path().join("compare.toml");
    std::fs::write(&spec_path, single).unwrap();
    let spec = ComparisonSpec::load(&spec_path).unwrap();
    let out = dir.path().join("cmp");
    let summary = run_comparison(&spec, &out).unwrap();
    assert!(summary.arms.iter().all(|a| a.sd_final_test_loss.is_none()));
    let table = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    for line in table.lines().skip(1) {
        assert!(line.ends_with(','), "sd column should be empty: {line}");
    }
}

#[test]
fn comparison_requires_two_arms() {
    let dir = tempfile::tempdir().unwrap();
    let one_arm = COMPARE_SPEC.replace("\n[[arms]]\nlabel = \"right\"\n", "");
    let spec_path = dir.path().join("compare.toml");
    std::fs::write(&spec_path, one_arm).unwrap();
    let spec = ComparisonSpec::load(&spec_path).unwrap();
    let err = run_comparison(&spec, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn device_mix_arms_override_topology() {
    let dir = tempfile::tempdir().unwrap();
    let mixed = COMPARE_SPEC
        .replace(
            "[[arms]]\nlabel = \"left\"",
            "[[arms]]\nlabel = \"left\"\nn_horizontal = 3\nn_vertical = 1",
        )
        .replace(
            "[[arms]]\nlabel = \"right\"",
            "[[arms]]\nlabel = \"right\"\nn_horizontal = 1\nn_vertical = 3",
        );
    let spec_path = dir.path().join("compare.toml");
    std::fs::write(&spec_path, mixed).unwrap();
    let spec = ComparisonSpec::load(&spec_path).unwrap();
    let out = dir.path().join("cmp");
    let summary = run_comparison(&spec, &out).unwrap();
    // Different topologies: the loss tracks genuinely differ.
    assert_ne!(
        summary.arms[0].final_test_losses,
        summary.arms[1].final_test_losses
    );
}
