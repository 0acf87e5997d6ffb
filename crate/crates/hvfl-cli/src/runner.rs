//! Single-run orchestration: dataset construction, train/test split,
//! topology, the federated run, optional convergence analysis, and
//! artifact emission.

use crate::config::{AnalysisConfig, BoundFormConfig, DatasetKind, ExperimentConfig};
use crate::CliError;
use hvfl_core::analysis::reference_f_star;
use hvfl_core::data::{HorizontalParams, VerticalParams};
use hvfl_core::{
    build_topology, estimate_lipschitz, estimate_pl, generate_classification,
    generate_regression, load_csv, AnalysisReport, BoundForm, ConvergenceEstimates, CsvSchema,
    Dataset, Federation, FederationError, ModelKind, Provenance, RngStream, RunHistory,
    ShardObjective, Topology,
};
use std::path::Path;

/// Stream ids for the orchestration-level draws.
const SPLIT_STREAM: u64 = 10;
const PARTITION_STREAM: u64 = 11;
const LIPSCHITZ_PROBE_STREAM: u64 = 500;
const PL_PROBE_STREAM: u64 = 501;

/// In-memory result of one experiment, before anything is written.
pub struct ExperimentOutput {
    pub history: RunHistory,
    pub analysis: Option<AnalysisReport>,
    pub topology_json: String,
    pub n_train: usize,
    pub n_test: usize,
}

/// Console summary for one run.
#[derive(Debug)]
pub struct RunSummary {
    pub rounds: usize,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub descent_violations: Option<usize>,
    pub dominance_violations: Option<usize>,
}

pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let d = &cfg.dataset;
    match d.kind {
        DatasetKind::Regression => Ok(generate_regression(
            d.n_samples,
            d.n_features,
            d.noise_std,
            cfg.seed,
        )),
        DatasetKind::Classification => Ok(generate_classification(
            d.n_samples,
            d.n_features,
            d.n_classes,
            d.cluster_sep,
            cfg.seed,
        )),
        DatasetKind::Csv => {
            let path = d.path.as_ref().expect("validated");
            let schema = CsvSchema {
                label_column: d.label_column.clone(),
                feature_columns: None,
                task: cfg.task(),
            };
            load_csv(Path::new(path), &schema)
                .map_err(|e| CliError::Config(format!("dataset.path: {e}")))
        }
    }
}

/// Seed-deterministic train/test split: shuffled rows, at least one test row.
pub fn split_rows(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rows: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, SPLIT_STREAM);
    rng.shuffle(&mut rows);
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n.saturating_sub(1));
    let mut test: Vec<usize> = rows[..n_test].to_vec();
    let mut train: Vec<usize> = rows[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

fn build_run_topology(
    cfg: &ExperimentConfig,
    data: &Dataset,
    train_rows: &[usize],
) -> Result<Topology, CliError> {
    let spec = cfg.model_spec(data.n_features())?;
    let t = &cfg.topology;
    let mut rng = RngStream::new(cfg.seed, PARTITION_STREAM);
    build_topology(
        data,
        train_rows,
        t.n_horizontal,
        t.n_vertical,
        HorizontalParams {
            dirichlet_beta: t.dirichlet_beta,
            min_per_device: t.min_per_device,
        },
        VerticalParams {
            overlap_fraction: t.overlap_fraction,
        },
        &spec,
        t.pool_ratio,
        &mut rng,
    )
    .map_err(|e| CliError::Config(format!("topology: {e}")))
}

fn build_estimates(
    cfg: &ExperimentConfig,
    data: &Dataset,
    train_rows: &[usize],
    global_objective: &ShardObjective<'_>,
    history: &RunHistory,
) -> Result<ConvergenceEstimates, CliError> {
    let a = &cfg.analysis;
    let spec = global_objective.spec;
    let est = if spec.kind == ModelKind::RidgeLinear {
        ConvergenceEstimates::analytic_ridge(
            data,
            train_rows,
            cfg.train.alpha,
            history.initial.objective,
        )
        .map_err(|e| CliError::Run(format!("analysis: {e}")))?
    } else {
        let f_star = reference_f_star(global_objective, a.reference_steps)
            .map_err(|e| CliError::Run(format!("analysis reference run: {e}")))?;
        let mut l_stream = RngStream::new(cfg.seed, LIPSCHITZ_PROBE_STREAM);
        let lipschitz =
            estimate_lipschitz(global_objective, a.probe_count, a.probe_radius, &mut l_stream)
                .map_err(|e| CliError::Run(format!("analysis: {e}")))?;
        let mut pl_stream = RngStream::new(cfg.seed, PL_PROBE_STREAM);
        let pl_constant =
            estimate_pl(global_objective, f_star, a.probe_count, a.probe_radius, &mut pl_stream)
                .map_err(|e| CliError::Run(format!("analysis: {e}")))?;
        ConvergenceEstimates {
            lipschitz,
            pl_constant: pl_constant.min(lipschitz),
            sigma: 0.0,
            initial_gap: (history.initial.objective - f_star).max(0.0),
            f_star,
            lipschitz_provenance: Provenance::Empirical,
            pl_provenance: Provenance::Empirical,
            f_star_provenance: Provenance::Empirical,
        }
    };
    Ok(est.with_sigma_from(history))
}

pub fn bound_form(a: &AnalysisConfig) -> BoundForm {
    match a.bound_form {
        BoundFormConfig::GeometricSum => BoundForm::GeometricSum,
        BoundFormConfig::ClosedForm => BoundForm::ClosedForm,
    }
}

/// Runs one experiment entirely in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    cfg.validate()?;
    let data = build_dataset(cfg)?;
    let (train_rows, test_rows) = split_rows(data.n_samples(), cfg.dataset.test_fraction, cfg.seed);
    let topology = build_run_topology(cfg, &data, &train_rows)?;
    let spec = cfg.model_spec(data.n_features())?;
    let fed = Federation::new(
        &data,
        &topology,
        spec,
        cfg.train_config(),
        train_rows.clone(),
        test_rows.clone(),
    )
    .map_err(map_federation_error)?;
    let history = fed.run(cfg.seed).map_err(map_federation_error)?;
    let analysis = if cfg.analysis.enabled {
        let est = build_estimates(cfg, &data, &train_rows, fed.global_objective(), &history)?;
        let report = AnalysisReport::for_run(
            &history,
            &est,
            cfg.train.learning_rate,
            bound_form(&cfg.analysis),
        )
        .map_err(|e| CliError::Run(format!("analysis: {e}")))?;
        Some(report)
    } else {
        None
    };
    Ok(ExperimentOutput {
        history,
        analysis,
        topology_json: topology.to_dump_json(),
        n_train: train_rows.len(),
        n_test: test_rows.len(),
    })
}

fn map_federation_error(e: FederationError) -> CliError {
    match e {
        FederationError::Divergence { .. } | FederationError::GlobalDivergence { .. } => {
            CliError::Divergence(e.to_string())
        }
        FederationError::InvalidConfig { .. } => CliError::Config(e.to_string()),
        other => CliError::Run(other.to_string()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Runs one experiment and writes `history.csv`, `analysis.json` (plus
/// `bound.csv` when analysis ran), `config_echo.json`, and `topology.json`
/// under `out_dir`. Validation happens before the directory is created, so
/// a rejected config leaves no output behind.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let output = execute(cfg)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    write_file(&out_dir.join("config_echo.json"), &cfg.echo_json())?;
    write_file(&out_dir.join("history.csv"), &output.history.to_csv())?;
    write_file(&out_dir.join("topology.json"), &output.topology_json)?;
    let analysis_json = match &output.analysis {
        Some(report) => format!(
            "{{\n  \"enabled\": true,\n  \"report\": {}\n}}\n",
            indent_json(&report.to_json(), 2)
        ),
        None => "{\n  \"enabled\": false,\n  \"report\": null\n}\n".to_string(),
    };
    write_file(&out_dir.join("analysis.json"), &analysis_json)?;
    if let Some(report) = &output.analysis {
        write_file(&out_dir.join("bound.csv"), &report.bound_csv())?;
    }
    let (final_train, final_test) = match output.history.records.last() {
        Some(r) => (r.train_loss, r.test_loss),
        None => (
            output.history.initial.train_loss,
            output.history.initial.test_loss,
        ),
    };
    Ok(RunSummary {
        rounds: output.history.records.len(),
        final_train_loss: final_train,
        final_test_loss: final_test,
        descent_violations: output.analysis.as_ref().map(|a| a.descent_audit.n_violations),
        dominance_violations: output.analysis.as_ref().map(|a| a.dominance.n_violations),
    })
}

/// Re-indents a pretty-printed JSON body so it nests inside a wrapper.
fn indent_json(json: &str, spaces: usize) -> String {
    let pad = " ".repeat(spaces);
    json.lines()
        .enumerate()
        .map(|(i, line)| {
            if i == 0 {
                line.to_string()
            } else {
                format!("{pad}{line}")
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}
