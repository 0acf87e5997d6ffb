//! Paired-seed device-mix comparisons: every arm runs the same seed list,
//! and the final test losses are summarized per arm and against the first
//! arm as a relative percentage.

use crate::config::ComparisonSpec;
use crate::runner::execute;
use crate::CliError;
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Clone, Serialize)]
pub struct ArmResult {
    pub label: String,
    pub final_test_losses: Vec<f64>,
    pub mean_final_test_loss: f64,
    /// Sample standard deviation; absent for single-seed sweeps.
    pub sd_final_test_loss: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RelativeDifference {
    pub label: String,
    pub versus: String,
    pub percent: f64,
    /// Seeds (out of the paired total) where this arm beat the baseline.
    pub wins: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonSummary {
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmResult>,
    pub relative_differences: Vec<RelativeDifference>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    let var =
        values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() as f64 - 1.0);
    Some(var.sqrt())
}

/// Runs every (arm, seed) pair and writes `summary.csv`,
/// `comparison.json`, and one loss-curve CSV per arm under `out_dir`.
pub fn run_comparison(
    spec: &ComparisonSpec,
    out_dir: &Path,
) -> Result<ComparisonSummary, CliError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut arms = Vec::with_capacity(spec.arms.len());
    for arm in &spec.arms {
        let mut finals = Vec::with_capacity(spec.seeds.len());
        // round -> (train losses, test losses) across seeds.
        let mut train_curves: Vec<Vec<f64>> = Vec::new();
        let mut test_curves: Vec<Vec<f64>> = Vec::new();
        for &seed in &spec.seeds {
            let cfg = spec.arm_config(arm, seed);
            let output = execute(&cfg)?;
            let final_test = output
                .history
                .records
                .last()
                .map(|r| r.test_loss)
                .unwrap_or(output.history.initial.test_loss);
            finals.push(final_test);
            for (i, record) in output.history.records.iter().enumerate() {
                if train_curves.len() <= i {
                    train_curves.push(Vec::new());
                    test_curves.push(Vec::new());
                }
                train_curves[i].push(record.train_loss);
                test_curves[i].push(record.test_loss);
            }
        }
        let mut curve_csv =
            String::from("round,train_loss_mean,test_loss_mean,test_loss_sd\n");
        for (i, (train, test)) in train_curves.iter().zip(test_curves.iter()).enumerate() {
            let sd = sample_sd(test)
                .map(|s| format!("{s:.12e}"))
                .unwrap_or_default();
            curve_csv.push_str(&format!(
                "{},{:.12e},{:.12e},{}\n",
                i + 1,
                mean(train),
                mean(test),
                sd
            ));
        }
        let curve_path = out_dir.join(format!("curves_{}.csv", arm.label));
        std::fs::write(&curve_path, curve_csv)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", curve_path.display())))?;
        arms.push(ArmResult {
            label: arm.label.clone(),
            mean_final_test_loss: mean(&finals),
            sd_final_test_loss: sample_sd(&finals),
            final_test_losses: finals,
        });
    }
    // Relative difference of every arm against the first (the baseline).
    let baseline = &arms[0];
    let mut relative_differences = Vec::new();
    for arm in arms.iter().skip(1) {
        let percent = (arm.mean_final_test_loss - baseline.mean_final_test_loss)
            / baseline.mean_final_test_loss
            * 100.0;
        let wins = arm
            .final_test_losses
            .iter()
            .zip(baseline.final_test_losses.iter())
            .filter(|(a, b)| a <= b)
            .count();
        relative_differences.push(RelativeDifference {
            label: arm.label.clone(),
            versus: baseline.label.clone(),
            percent,
            wins,
        });
    }
    let summary = ComparisonSummary {
        seeds: spec.seeds.clone(),
        arms,
        relative_differences,
    };
    let mut table = String::from("label,n_seeds,final_test_loss_mean,final_test_loss_sd\n");
    for arm in &summary.arms {
        let sd = arm
            .sd_final_test_loss
            .map(|s| format!("{s:.12e}"))
            .unwrap_or_default();
        table.push_str(&format!(
            "{},{},{:.12e},{}\n",
            arm.label,
            summary.seeds.len(),
            arm.mean_final_test_loss,
            sd
        ));
    }
    let table_path = out_dir.join("summary.csv");
    std::fs::write(&table_path, table)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", table_path.display())))?;
    let json_path = out_dir.join("comparison.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&summary).expect("summary serialize"),
    )
    .map_err(|e| CliError::Io(format!("cannot write {}: {e}", json_path.display())))?;
    Ok(summary)
}

impl ComparisonSummary {
    /// The printed comparison lines, one per non-baseline arm.
    pub fn report_lines(&self) -> Vec<String> {
        self.relative_differences
            .iter()
            .map(|d| {
                let direction = if d.percent >= 0.0 { "higher" } else { "lower" };
                format!(
                    "final test loss of arm '{}' is {:.1}% {} than arm '{}' ({} of {} paired seeds at or below baseline)",
                    d.label,
                    d.percent.abs(),
                    direction,
                    d.versus,
                    d.wins,
                    self.seeds.len()
                )
            })
            .collect()
    }
}
