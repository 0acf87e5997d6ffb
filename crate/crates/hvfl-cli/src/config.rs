//! Experiment configuration: a single human-editable tree (TOML, or the
//! JSON echo of a previous run), schema-validated with unknown keys
//! rejected and every default made explicit in the echo.

use hvfl_core::{
    BatchSize, InitScheme, ModelKind, ModelSpec, Optimizer, TaskKind, TrainConfig, WeightScheme,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Regression,
    Classification,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default = "defaults::n_samples")]
    pub n_samples: usize,
    #[serde(default = "defaults::n_features")]
    pub n_features: usize,
    #[serde(default = "defaults::noise_std")]
    pub noise_std: f64,
    #[serde(default = "defaults::n_classes")]
    pub n_classes: usize,
    #[serde(default = "defaults::cluster_sep")]
    pub cluster_sep: f64,
    /// CSV source path (kind = "csv" only).
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default = "defaults::label_column")]
    pub label_column: String,
    /// Task of a CSV source: "regression", "binary", or "multiclass".
    #[serde(default = "defaults::csv_task")]
    pub csv_task: String,
    #[serde(default = "defaults::test_fraction")]
    pub test_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Regression,
            n_samples: defaults::n_samples(),
            n_features: defaults::n_features(),
            noise_std: defaults::noise_std(),
            n_classes: defaults::n_classes(),
            cluster_sep: defaults::cluster_sep(),
            path: None,
            label_column: defaults::label_column(),
            csv_task: defaults::csv_task(),
            test_fraction: defaults::test_fraction(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub n_horizontal: usize,
    pub n_vertical: usize,
    #[serde(default = "defaults::dirichlet_beta")]
    pub dirichlet_beta: f64,
    #[serde(default)]
    pub overlap_fraction: f64,
    #[serde(default = "defaults::pool_ratio")]
    pub pool_ratio: f64,
    #[serde(default = "defaults::min_per_device")]
    pub min_per_device: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKindConfig {
    Ridge,
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKindConfig,
    #[serde(default = "defaults::hidden_width")]
    pub hidden_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKindConfig::Ridge,
            hidden_width: defaults::hidden_width(),
        }
    }
}

/// Batch size as written in config files: "full" or a positive integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSizeConfig {
    Count(usize),
    Named(FullBatch),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullBatch {
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::t_local")]
    pub t_local: usize,
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "defaults::optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default = "defaults::adam_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "defaults::adam_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "defaults::adam_epsilon")]
    pub adam_epsilon: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: BatchSizeConfig,
    #[serde(default = "defaults::weight_scheme")]
    pub weight_scheme: WeightSchemeConfig,
    #[serde(default = "defaults::init")]
    pub init: InitConfig,
    #[serde(default = "defaults::init_scale")]
    pub init_scale: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: defaults::learning_rate(),
            t_local: defaults::t_local(),
            rounds: defaults::rounds(),
            alpha: 0.0,
            optimizer: defaults::optimizer(),
            adam_beta1: defaults::adam_beta1(),
            adam_beta2: defaults::adam_beta2(),
            adam_epsilon: defaults::adam_epsilon(),
            batch_size: defaults::batch_size(),
            weight_scheme: defaults::weight_scheme(),
            init: defaults::init(),
            init_scale: defaults::init_scale(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSchemeConfig {
    SampleProportional,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitConfig {
    Zeros,
    Gaussian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "defaults::enabled")]
    pub enabled: bool,
    #[serde(default = "defaults::probe_count")]
    pub probe_count: usize,
    #[serde(default = "defaults::probe_radius")]
    pub probe_radius: f64,
    #[serde(default = "defaults::bound_form")]
    pub bound_form: BoundFormConfig,
    #[serde(default = "defaults::reference_steps")]
    pub reference_steps: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            enabled: defaults::enabled(),
            probe_count: defaults::probe_count(),
            probe_radius: defaults::probe_radius(),
            bound_form: defaults::bound_form(),
            reference_steps: defaults::reference_steps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundFormConfig {
    GeometricSum,
    ClosedForm,
}

mod defaults {
    use super::*;

    pub fn n_samples() -> usize {
        300
    }
    pub fn n_features() -> usize {
        10
    }
    pub fn noise_std() -> f64 {
        0.1
    }
    pub fn n_classes() -> usize {
        4
    }
    pub fn cluster_sep() -> f64 {
        3.0
    }
    pub fn label_column() -> String {
        "label".to_string()
    }
    pub fn csv_task() -> String {
        "regression".to_string()
    }
    pub fn test_fraction() -> f64 {
        0.2
    }
    pub fn dirichlet_beta() -> f64 {
        0.5
    }
    pub fn pool_ratio() -> f64 {
        0.5
    }
    pub fn min_per_device() -> usize {
        1
    }
    pub fn hidden_width() -> usize {
        16
    }
    pub fn learning_rate() -> f64 {
        0.05
    }
    pub fn t_local() -> usize {
        1
    }
    pub fn rounds() -> usize {
        50
    }
    pub fn optimizer() -> OptimizerConfig {
        OptimizerConfig::Sgd
    }
    pub fn adam_beta1() -> f64 {
        0.9
    }
    pub fn adam_beta2() -> f64 {
        0.999
    }
    pub fn adam_epsilon() -> f64 {
        1e-8
    }
    pub fn batch_size() -> BatchSizeConfig {
        BatchSizeConfig::Named(FullBatch::Full)
    }
    pub fn weight_scheme() -> WeightSchemeConfig {
        WeightSchemeConfig::SampleProportional
    }
    pub fn init() -> InitConfig {
        InitConfig::Zeros
    }
    pub fn init_scale() -> f64 {
        1.0
    }
    pub fn enabled() -> bool {
        true
    }
    pub fn probe_count() -> usize {
        200
    }
    pub fn probe_radius() -> f64 {
        1.0
    }
    pub fn bound_form() -> BoundFormConfig {
        BoundFormConfig::GeometricSum
    }
    pub fn reference_steps() -> usize {
        2000
    }
}

impl ExperimentConfig {
    /// Parses a config file; `.json` files use the JSON echo format,
    /// everything else is TOML. Parse errors carry line locations.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| {
                CliError::Config(format!(
                    "{}: line {}, column {}: {e}",
                    path.display(),
                    e.line(),
                    e.column()
                ))
            })?
        } else {
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    /// Field-located validation; runs before anything is written.
    /// Comparisons are written in negated form so NaN values fail too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), CliError> {
        let mut issues = Vec::new();
        let d = &self.dataset;
        match d.kind {
            DatasetKind::Regression | DatasetKind::Classification => {
                if d.n_samples < 4 {
                    issues.push("dataset.n_samples must be at least 4".to_string());
                }
                if d.n_features < 1 {
                    issues.push("dataset.n_features must be at least 1".to_string());
                }
                if d.noise_std < 0.0 {
                    issues.push("dataset.noise_std must be nonnegative".to_string());
                }
                if d.kind == DatasetKind::Classification {
                    if d.n_classes < 2 {
                        issues.push("dataset.n_classes must be at least 2".to_string());
                    }
                    if d.cluster_sep <= 0.0 {
                        issues.push("dataset.cluster_sep must be positive".to_string());
                    }
                }
            }
            DatasetKind::Csv => {
                if d.path.is_none() {
                    issues.push("dataset.path is required when dataset.kind = \"csv\"".to_string());
                }
                if !matches!(d.csv_task.as_str(), "regression" | "binary" | "multiclass") {
                    issues.push(format!(
                        "dataset.csv_task must be \"regression\", \"binary\", or \"multiclass\", got \"{}\"",
                        d.csv_task
                    ));
                }
                if d.csv_task == "multiclass" && d.n_classes < 2 {
                    issues.push("dataset.n_classes must be at least 2 for multiclass CSV".to_string());
                }
            }
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            issues.push(format!(
                "dataset.test_fraction must lie in (0, 1), got {}",
                d.test_fraction
            ));
        }
        let t = &self.topology;
        if t.n_horizontal + t.n_vertical == 0 {
            issues.push("topology needs n_horizontal + n_vertical >= 1".to_string());
        }
        if t.dirichlet_beta <= 0.0 {
            issues.push(format!(
                "topology.dirichlet_beta must be positive, got {}",
                t.dirichlet_beta
            ));
        }
        if !(0.0..1.0).contains(&t.overlap_fraction) {
            issues.push(format!(
                "topology.overlap_fraction must lie in [0, 1), got {}",
                t.overlap_fraction
            ));
        }
        if !(t.pool_ratio > 0.0 && t.pool_ratio < 1.0) {
            issues.push(format!(
                "topology.pool_ratio must lie in (0, 1), got {}",
                t.pool_ratio
            ));
        }
        if t.min_per_device < 1 {
            issues.push("topology.min_per_device must be at least 1".to_string());
        }
        let m = &self.model;
        if m.kind == ModelKindConfig::Mlp && m.hidden_width < 1 {
            issues.push("model.hidden_width must be at least 1".to_string());
        }
        let task_is_regression = match d.kind {
            DatasetKind::Regression => true,
            DatasetKind::Classification => false,
            DatasetKind::Csv => d.csv_task == "regression",
        };
        if m.kind == ModelKindConfig::Ridge && !task_is_regression {
            issues.push("model.kind = \"ridge\" requires a regression dataset".to_string());
        }
        if m.kind == ModelKindConfig::Logistic && task_is_regression {
            issues.push("model.kind = \"logistic\" requires a classification dataset".to_string());
        }
        let tr = &self.train;
        if !(tr.learning_rate > 0.0) {
            issues.push(format!(
                "train.learning_rate must be positive, got {}",
                tr.learning_rate
            ));
        }
        if tr.t_local < 1 {
            issues.push("train.t_local must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&tr.alpha) {
            issues.push(format!("train.alpha must lie in [0, 1], got {}", tr.alpha));
        }
        if let BatchSizeConfig::Count(0) = tr.batch_size {
            issues.push("train.batch_size must be at least 1 (or \"full\")".to_string());
        }
        if !(tr.adam_beta1 > 0.0 && tr.adam_beta1 < 1.0) {
            issues.push(format!(
                "train.adam_beta1 must lie in (0, 1), got {}",
                tr.adam_beta1
            ));
        }
        if !(tr.adam_beta2 > 0.0 && tr.adam_beta2 < 1.0) {
            issues.push(format!(
                "train.adam_beta2 must lie in (0, 1), got {}",
                tr.adam_beta2
            ));
        }
        if !(tr.adam_epsilon > 0.0) {
            issues.push(format!(
                "train.adam_epsilon must be positive, got {}",
                tr.adam_epsilon
            ));
        }
        if tr.init == InitConfig::Gaussian && !(tr.init_scale > 0.0) {
            issues.push(format!(
                "train.init_scale must be positive, got {}",
                tr.init_scale
            ));
        }
        let a = &self.analysis;
        if a.enabled {
            if a.probe_count < 2 {
                issues.push("analysis.probe_count must be at least 2".to_string());
            }
            if !(a.probe_radius > 0.0) {
                issues.push(format!(
                    "analysis.probe_radius must be positive, got {}",
                    a.probe_radius
                ));
            }
            if a.reference_steps < 1 {
                issues.push("analysis.reference_steps must be at least 1".to_string());
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(issues.join("; ")))
        }
    }

    /// The task this configuration trains on.
    pub fn task(&self) -> TaskKind {
        match self.dataset.kind {
            DatasetKind::Regression => TaskKind::Regression,
            DatasetKind::Classification => {
                if self.dataset.n_classes == 2 {
                    TaskKind::BinaryClassification
                } else {
                    TaskKind::Multiclass {
                        n_classes: self.dataset.n_classes,
                    }
                }
            }
            DatasetKind::Csv => match self.dataset.csv_task.as_str() {
                "binary" => TaskKind::BinaryClassification,
                "multiclass" => TaskKind::Multiclass {
                    n_classes: self.dataset.n_classes,
                },
                _ => TaskKind::Regression,
            },
        }
    }

    pub fn model_spec(&self, n_features: usize) -> Result<ModelSpec, CliError> {
        let kind = match self.model.kind {
            ModelKindConfig::Ridge => ModelKind::RidgeLinear,
            ModelKindConfig::Logistic => ModelKind::Logistic,
            ModelKindConfig::Mlp => ModelKind::Mlp1,
        };
        ModelSpec::for_task(kind, &self.task(), n_features, self.model.hidden_width)
            .map_err(|e| CliError::Config(format!("model: {e}")))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            t_local: t.t_local,
            rounds: t.rounds,
            alpha: t.alpha,
            optimizer: match t.optimizer {
                OptimizerConfig::Sgd => Optimizer::Sgd,
                OptimizerConfig::Adam => Optimizer::Adam {
                    beta1: t.adam_beta1,
                    beta2: t.adam_beta2,
                    epsilon: t.adam_epsilon,
                },
            },
            batch_size: match t.batch_size {
                BatchSizeConfig::Count(k) => BatchSize::Size(k),
                BatchSizeConfig::Named(FullBatch::Full) => BatchSize::Full,
            },
            weight_scheme: match t.weight_scheme {
                WeightSchemeConfig::SampleProportional => WeightScheme::SampleProportional,
                WeightSchemeConfig::Uniform => WeightScheme::Uniform,
            },
            init: match t.init {
                InitConfig::Zeros => InitScheme::Zeros,
                InitConfig::Gaussian => InitScheme::Gaussian {
                    scale: t.init_scale,
                },
            },
            record_grad_trace: false,
        }
    }

    /// Echo with every effective value explicit; reloading it reproduces
    /// the identical run.
    pub fn echo_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialize")
    }
}

/// A paired-seed comparison: one shared base config, two or more arms that
/// override only topology knobs, and a common seed list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub base: ExperimentConfig,
    pub arms: Vec<ComparisonArm>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonArm {
    pub label: String,
    #[serde(default)]
    pub n_horizontal: Option<usize>,
    #[serde(default)]
    pub n_vertical: Option<usize>,
    #[serde(default)]
    pub dirichlet_beta: Option<f64>,
    #[serde(default)]
    pub overlap_fraction: Option<f64>,
    #[serde(default)]
    pub pool_ratio: Option<f64>,
}

impl ComparisonSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let spec: ComparisonSpec = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| {
                CliError::Config(format!(
                    "{}: line {}, column {}: {e}",
                    path.display(),
                    e.line(),
                    e.column()
                ))
            })?
        } else {
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.arms.len() < 2 {
            return Err(CliError::Config(
                "comparison needs at least 2 arms".to_string(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config(
                "comparison needs at least 1 seed".to_string(),
            ));
        }
        let mut labels: Vec<&str> = self.arms.iter().map(|a| a.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.arms.len() {
            return Err(CliError::Config("arm labels must be unique".to_string()));
        }
        for arm in &self.arms {
            self.arm_config(arm, self.seeds[0]).validate()?;
        }
        Ok(())
    }

    /// The base config with one arm's topology overrides and a seed applied.
    pub fn arm_config(&self, arm: &ComparisonArm, seed: u64) -> ExperimentConfig {
        let mut cfg = self.base.clone();
        cfg.seed = seed;
        cfg.output_dir = None;
        if let Some(v) = arm.n_horizontal {
            cfg.topology.n_horizontal = v;
        }
        if let Some(v) = arm.n_vertical {
            cfg.topology.n_vertical = v;
        }
        if let Some(v) = arm.dirichlet_beta {
            cfg.topology.dirichlet_beta = v;
        }
        if let Some(v) = arm.overlap_fraction {
            cfg.topology.overlap_fraction = v;
        }
        if let Some(v) = arm.pool_ratio {
            cfg.topology.pool_ratio = v;
        }
        cfg
    }
}
