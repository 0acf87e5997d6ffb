//! Parameter spaces, loss functions, regularizer, local objectives, and
//! analytic gradients for three model kinds: ridge-linear, logistic, and a
//! one-hidden-layer MLP.
//!
//! All devices share one global parameter space of dimension `M`. A device
//! that lacks some input features zero-fills them in the forward pass and
//! trains only the coordinates reachable from its own features: the input
//! weights of those features plus every coordinate not tied to a specific
//! input feature (biases and the MLP head). The local objective is the mean
//! per-sample loss plus `alpha * 0.5 * ||theta||^2` restricted to the
//! device's trainable coordinates.

use crate::data::{Dataset, TaskKind};
use crate::numerics::{solve_spd, Matrix, NumericsError, Vector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model kind {kind:?} does not support task {task:?}")]
    TaskMismatch { kind: ModelKind, task: TaskKind },
    #[error("label {label} out of range for {n_classes} classes (sample {sample})")]
    LabelOutOfRange {
        label: f64,
        n_classes: usize,
        sample: usize,
    },
    #[error("empty shard: objective needs at least one sample")]
    EmptyShard,
    #[error("parameter dimension {got} does not match layout dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("normal equations are singular; a positive ridge penalty (alpha > 0) makes them solvable")]
    SingularSystem,
    #[error("hidden width must be at least 1 for the MLP")]
    ZeroHiddenWidth,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// The model families supported by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    RidgeLinear,
    Logistic,
    Mlp1,
}

/// Output head: squared error, sigmoid cross-entropy, or softmax cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Squared,
    Sigmoid,
    Softmax,
}

/// Role of one coordinate in the global parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordRole {
    /// Weight from input `feature` into `unit` (output unit for the linear
    /// family, hidden unit for the MLP).
    InputWeight { unit: usize, feature: usize },
    /// Bias of `unit` (output bias for the linear family, hidden bias for
    /// the MLP).
    UnitBias { unit: usize },
    /// MLP second-layer weight from hidden `unit` into `output`.
    HeadWeight { output: usize, unit: usize },
    /// MLP output bias.
    HeadBias { output: usize },
}

/// Shape of the global parameter space: model kind, dimensions, and head.
///
/// The coordinate layout is fixed: input weights (unit-major), unit biases,
/// then for the MLP the head weights (output-major) and head biases. The
/// layout is a bijection between coordinates and [`CoordRole`]s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n_features: usize,
    pub n_outputs: usize,
    pub hidden_width: usize,
    pub head: Head,
}

impl ModelSpec {
    /// Builds the spec for a task, validating kind/task compatibility.
    pub fn for_task(
        kind: ModelKind,
        task: &TaskKind,
        n_features: usize,
        hidden_width: usize,
    ) -> Result<Self, ModelError> {
        let (head, n_outputs) = match (kind, task) {
            (ModelKind::RidgeLinear, TaskKind::Regression) => (Head::Squared, 1),
            (ModelKind::RidgeLinear, _) => {
                return Err(ModelError::TaskMismatch { kind, task: *task })
            }
            (ModelKind::Logistic, TaskKind::BinaryClassification) => (Head::Sigmoid, 1),
            (ModelKind::Logistic, TaskKind::Multiclass { n_classes }) => {
                (Head::Softmax, *n_classes)
            }
            (ModelKind::Logistic, TaskKind::Regression) => {
                return Err(ModelError::TaskMismatch { kind, task: *task })
            }
            (ModelKind::Mlp1, TaskKind::Regression) => (Head::Squared, 1),
            (ModelKind::Mlp1, TaskKind::BinaryClassification) => (Head::Sigmoid, 1),
            (ModelKind::Mlp1, TaskKind::Multiclass { n_classes }) => (Head::Softmax, *n_classes),
        };
        if kind == ModelKind::Mlp1 && hidden_width == 0 {
            return Err(ModelError::ZeroHiddenWidth);
        }
        let hidden = if kind == ModelKind::Mlp1 { hidden_width } else { 0 };
        Ok(Self {
            kind,
            n_features,
            n_outputs,
            hidden_width: hidden,
            head,
        })
    }

    /// Total number of global coordinates `M`.
    pub fn dim(&self) -> usize {
        match self.kind {
            ModelKind::RidgeLinear | ModelKind::Logistic => {
                self.n_outputs * self.n_features + self.n_outputs
            }
            ModelKind::Mlp1 => {
                self.hidden_width * self.n_features
                    + self.hidden_width
                    + self.n_outputs * self.hidden_width
                    + self.n_outputs
            }
        }
    }

    /// Role of coordinate `c` under the fixed layout.
    pub fn coord_role(&self, c: usize) -> CoordRole {
        match self.kind {
            ModelKind::RidgeLinear | ModelKind::Logistic => {
                let w = self.n_outputs * self.n_features;
                if c < w {
                    CoordRole::InputWeight {
                        unit: c / self.n_features,
                        feature: c % self.n_features,
                    }
                } else {
                    CoordRole::UnitBias { unit: c - w }
                }
            }
            ModelKind::Mlp1 => {
                let w1 = self.hidden_width * self.n_features;
                let b1 = w1 + self.hidden_width;
                let w2 = b1 + self.n_outputs * self.hidden_width;
                if c < w1 {
                    CoordRole::InputWeight {
                        unit: c / self.n_features,
                        feature: c % self.n_features,
                    }
                } else if c < b1 {
                    CoordRole::UnitBias { unit: c - w1 }
                } else if c < w2 {
                    let k = c - b1;
                    CoordRole::HeadWeight {
                        output: k / self.hidden_width,
                        unit: k % self.hidden_width,
                    }
                } else {
                    CoordRole::HeadBias { output: c - w2 }
                }
            }
        }
    }

    fn input_weight_index(&self, unit: usize, feature: usize) -> usize {
        unit * self.n_features + feature
    }

    fn unit_bias_index(&self, unit: usize) -> usize {
        match self.kind {
            ModelKind::RidgeLinear | ModelKind::Logistic => {
                self.n_outputs * self.n_features + unit
            }
            ModelKind::Mlp1 => self.hidden_width * self.n_features + unit,
        }
    }

    fn head_weight_index(&self, output: usize, unit: usize) -> usize {
        self.hidden_width * self.n_features + self.hidden_width + output * self.hidden_width + unit
    }

    fn head_bias_index(&self, output: usize) -> usize {
        self.hidden_width * self.n_features
            + self.hidden_width
            + self.n_outputs * self.hidden_width
            + output
    }

    /// Trainable-coordinate mask for a device holding `live_features`:
    /// the input weights of those features plus every coordinate not tied
    /// to a specific input feature.
    pub fn mask_for_features(&self, live_features: &[usize]) -> CoordMask {
        let mut live = vec![false; self.n_features];
        for &f in live_features {
            live[f] = true;
        }
        let bits = (0..self.dim())
            .map(|c| match self.coord_role(c) {
                CoordRole::InputWeight { feature, .. } => live[feature],
                _ => true,
            })
            .collect();
        CoordMask { bits }
    }
}

/// Bitmask over the global coordinates a device is permitted to train.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordMask {
    bits: Vec<bool>,
}

impl CoordMask {
    pub fn ones(dim: usize) -> Self {
        Self {
            bits: vec![true; dim],
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_set(&self, c: usize) -> bool {
        self.bits[c]
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().copied()
    }
}

/// A point in the global parameter space plus its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub theta: Vector,
}

impl ModelParams {
    pub fn zeros(spec: ModelSpec) -> Self {
        Self {
            theta: Vector::zeros(spec.dim()),
            spec,
        }
    }

    pub fn from_theta(spec: ModelSpec, theta: Vector) -> Result<Self, ModelError> {
        if theta.dim() != spec.dim() {
            return Err(ModelError::DimMismatch {
                expected: spec.dim(),
                got: theta.dim(),
            });
        }
        Ok(Self { spec, theta })
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }

    /// JSON serialization: layout descriptor plus the flat coefficient array.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Breakdown of one local objective evaluation:
/// `total = mean_sample_loss + alpha * reg_value`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossReport {
    pub mean_sample_loss: f64,
    pub reg_value: f64,
    pub total: f64,
    pub alpha: f64,
}

/// Scalar objective over the global parameter space; the probing and
/// auditing code only needs values and gradients.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, theta: &Vector) -> Result<f64, ModelError>;
    fn gradient(&self, theta: &Vector) -> Result<Vector, ModelError>;
}

/// One device's view of the training objective: a dataset slice, the
/// features the device actually holds (missing ones are zero-filled), the
/// coordinate mask it may train, and the regularizer weight.
#[derive(Debug, Clone)]
pub struct ShardObjective<'a> {
    pub data: &'a Dataset,
    pub spec: ModelSpec,
    pub rows: Vec<usize>,
    pub live_features: Vec<usize>,
    pub mask: CoordMask,
    pub alpha: f64,
}

impl<'a> ShardObjective<'a> {
    /// Full view: every sample in `rows`, every feature, all coordinates.
    pub fn full(data: &'a Dataset, spec: ModelSpec, rows: Vec<usize>, alpha: f64) -> Self {
        Self {
            data,
            spec,
            rows,
            live_features: (0..data.n_features()).collect(),
            mask: CoordMask::ones(spec.dim()),
            alpha,
        }
    }

    /// Restricted view for a device with `live_features` and `mask`.
    pub fn masked(
        data: &'a Dataset,
        spec: ModelSpec,
        rows: Vec<usize>,
        live_features: Vec<usize>,
        mask: CoordMask,
        alpha: f64,
    ) -> Self {
        Self {
            data,
            spec,
            rows,
            live_features,
            mask,
            alpha,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    /// Mean per-sample loss, the regularizer over the masked coordinates,
    /// and their `alpha`-weighted total.
    pub fn loss_report(&self, params: &ModelParams) -> Result<LossReport, ModelError> {
        self.loss_report_rows(params, &self.rows)
    }

    pub fn loss_report_rows(
        &self,
        params: &ModelParams,
        rows: &[usize],
    ) -> Result<LossReport, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::EmptyShard);
        }
        self.check_params(params)?;
        let mut sum = 0.0;
        for &r in rows {
            sum += self.sample_loss_at(params, r)?;
        }
        let mean = sum / rows.len() as f64;
        let reg = self.regularizer(params);
        Ok(LossReport {
            mean_sample_loss: mean,
            reg_value: reg,
            total: mean + self.alpha * reg,
            alpha: self.alpha,
        })
    }

    /// `0.5 * sum_{c in mask} theta_c^2`.
    pub fn regularizer(&self, params: &ModelParams) -> f64 {
        let mut acc = 0.0;
        for (c, on) in self.mask.iter().enumerate() {
            if on {
                let v = params.theta[c];
                acc += v * v;
            }
        }
        0.5 * acc
    }

    /// Loss of one sample under this view's zero-filling.
    pub fn sample_loss_at(&self, params: &ModelParams, row: usize) -> Result<f64, ModelError> {
        let x = self.data.x.row(row);
        let y = self.data.y[row];
        sample_loss(params, x, &self.live_features, y, row)
    }

    /// Analytic gradient of the local objective over all `rows`; exactly
    /// zero outside the mask.
    pub fn gradient(&self, params: &ModelParams) -> Result<Vector, ModelError> {
        self.gradient_rows(params, &self.rows)
    }

    /// Analytic gradient over a row subset (mini-batch).
    pub fn gradient_rows(
        &self,
        params: &ModelParams,
        rows: &[usize],
    ) -> Result<Vector, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::EmptyShard);
        }
        self.check_params(params)?;
        let mut acc = Vector::zeros(params.dim());
        for &r in rows {
            accumulate_sample_gradient(
                params,
                self.data.x.row(r),
                &self.live_features,
                self.data.y[r],
                r,
                &mut acc,
            )?;
        }
        let inv = 1.0 / rows.len() as f64;
        for c in 0..acc.dim() {
            if self.mask.is_set(c) {
                acc[c] = acc[c] * inv + self.alpha * params.theta[c];
            } else {
                acc[c] = 0.0;
            }
        }
        Ok(acc)
    }

    fn check_params(&self, params: &ModelParams) -> Result<(), ModelError> {
        if params.dim() != self.spec.dim() {
            return Err(ModelError::DimMismatch {
                expected: self.spec.dim(),
                got: params.dim(),
            });
        }
        Ok(())
    }
}

impl Objective for ShardObjective<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn value(&self, theta: &Vector) -> Result<f64, ModelError> {
        let params = ModelParams::from_theta(self.spec, theta.clone())?;
        Ok(self.loss_report(&params)?.total)
    }

    fn gradient(&self, theta: &Vector) -> Result<Vector, ModelError> {
        let params = ModelParams::from_theta(self.spec, theta.clone())?;
        ShardObjective::gradient(self, &params)
    }
}

/// Loss of a single sample. `x` is the full feature row; only the entries
/// listed in `live_features` enter the forward pass (the rest read as zero).
pub fn sample_loss(
    params: &ModelParams,
    x: &[f64],
    live_features: &[usize],
    y: f64,
    sample: usize,
) -> Result<f64, ModelError> {
    let spec = &params.spec;
    let logits = forward_logits(params, x, live_features);
    match spec.head {
        Head::Squared => {
            let diff = logits[0] - y;
            Ok(0.5 * diff * diff)
        }
        Head::Sigmoid => {
            let label = class_label(y, 2, sample)?;
            let z = logits[0];
            let target = label as f64;
            // Stable binary cross-entropy: max(z,0) - z*y + ln(1 + e^-|z|).
            Ok(z.max(0.0) - z * target + (-z.abs()).exp().ln_1p())
        }
        Head::Softmax => {
            let label = class_label(y, spec.n_outputs, sample)?;
            Ok(log_sum_exp(&logits) - logits[label])
        }
    }
}

fn class_label(y: f64, n_classes: usize, sample: usize) -> Result<usize, ModelError> {
    let rounded = y.round();
    if (y - rounded).abs() > 1e-9 || rounded < 0.0 || rounded >= n_classes as f64 {
        return Err(ModelError::LabelOutOfRange {
            label: y,
            n_classes,
            sample,
        });
    }
    Ok(rounded as usize)
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    for v in z {
        acc += (v - m).exp();
    }
    m + acc.ln()
}

/// Output logits (for `Squared`, the raw prediction) under zero-filling.
pub fn predict_logits(params: &ModelParams, x: &[f64], live_features: &[usize]) -> Vec<f64> {
    forward_logits(params, x, live_features)
}

fn forward_logits(params: &ModelParams, x: &[f64], live: &[usize]) -> Vec<f64> {
    let spec = &params.spec;
    let theta = params.theta.as_slice();
    match spec.kind {
        ModelKind::RidgeLinear | ModelKind::Logistic => {
            let mut z = vec![0.0; spec.n_outputs];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut acc = theta[spec.unit_bias_index(o)];
                for &f in live {
                    acc += theta[spec.input_weight_index(o, f)] * x[f];
                }
                *zo = acc;
            }
            z
        }
        ModelKind::Mlp1 => {
            let act = hidden_activations(params, x, live);
            let mut z = vec![0.0; spec.n_outputs];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut acc = theta[spec.head_bias_index(o)];
                for (h, a) in act.iter().enumerate() {
                    acc += theta[spec.head_weight_index(o, h)] * a;
                }
                *zo = acc;
            }
            z
        }
    }
}

fn hidden_activations(params: &ModelParams, x: &[f64], live: &[usize]) -> Vec<f64> {
    let spec = &params.spec;
    let theta = params.theta.as_slice();
    let mut act = vec![0.0; spec.hidden_width];
    for (h, a) in act.iter_mut().enumerate() {
        let mut acc = theta[spec.unit_bias_index(h)];
        for &f in live {
            acc += theta[spec.input_weight_index(h, f)] * x[f];
        }
        *a = acc.tanh();
    }
    act
}

/// Softmax probabilities from logits (stable).
fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Adds one sample's loss gradient (data term only) into `acc`.
fn accumulate_sample_gradient(
    params: &ModelParams,
    x: &[f64],
    live: &[usize],
    y: f64,
    sample: usize,
    acc: &mut Vector,
) -> Result<(), ModelError> {
    let spec = &params.spec;
    let theta = params.theta.as_slice();
    let logits = forward_logits(params, x, live);
    // dL/dz per output unit.
    let dz: Vec<f64> = match spec.head {
        Head::Squared => vec![logits[0] - y],
        Head::Sigmoid => {
            let label = class_label(y, 2, sample)? as f64;
            vec![sigmoid(logits[0]) - label]
        }
        Head::Softmax => {
            let label = class_label(y, spec.n_outputs, sample)?;
            let mut p = softmax(&logits);
            p[label] -= 1.0;
            p
        }
    };
    match spec.kind {
        ModelKind::RidgeLinear | ModelKind::Logistic => {
            for (o, d) in dz.iter().enumerate() {
                for &f in live {
                    acc[spec.input_weight_index(o, f)] += d * x[f];
                }
                acc[spec.unit_bias_index(o)] += d;
            }
        }
        ModelKind::Mlp1 => {
            let act = hidden_activations(params, x, live);
            // Head layer.
            for (o, d) in dz.iter().enumerate() {
                for (h, a) in act.iter().enumerate() {
                    acc[spec.head_weight_index(o, h)] += d * a;
                }
                acc[spec.head_bias_index(o)] += d;
            }
            // Backprop through tanh into the first layer.
            for (h, a) in act.iter().enumerate() {
                let mut up = 0.0;
                for (o, d) in dz.iter().enumerate() {
                    up += d * theta[spec.head_weight_index(o, h)];
                }
                let delta = up * (1.0 - a * a);
                for &f in live {
                    acc[spec.input_weight_index(h, f)] += delta * x[f];
                }
                acc[spec.unit_bias_index(h)] += delta;
            }
        }
    }
    Ok(())
}

/// Regularized Hessian of the ridge objective over `rows`:
/// `X~^T X~ / D + alpha I` with the bias column appended to `X`.
#[allow(clippy::needless_range_loop)] // explicit indexing over the augmented column
pub fn ridge_hessian(data: &Dataset, rows: &[usize], alpha: f64) -> Result<Matrix, ModelError> {
    if rows.is_empty() {
        return Err(ModelError::EmptyShard);
    }
    let d = data.n_features();
    let m = d + 1;
    let inv = 1.0 / rows.len() as f64;
    let mut h = Matrix::zeros(m, m);
    for &r in rows {
        let x = data.x.row(r);
        for i in 0..m {
            let xi = if i < d { x[i] } else { 1.0 };
            for j in i..m {
                let xj = if j < d { x[j] } else { 1.0 };
                let v = h.get(i, j) + xi * xj * inv;
                h.set(i, j, v);
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            let v = h.get(j, i);
            h.set(i, j, v);
        }
        let v = h.get(i, i) + alpha;
        h.set(i, i, v);
    }
    Ok(h)
}

/// Exact minimizer of the ridge objective over `rows` via the regularized
/// normal equations, plus the minimal objective value.
pub fn ridge_closed_form(
    data: &Dataset,
    rows: &[usize],
    alpha: f64,
) -> Result<(ModelParams, f64), ModelError> {
    if !matches!(data.task, TaskKind::Regression) {
        return Err(ModelError::TaskMismatch {
            kind: ModelKind::RidgeLinear,
            task: data.task,
        });
    }
    if rows.is_empty() {
        return Err(ModelError::EmptyShard);
    }
    let spec = ModelSpec::for_task(
        ModelKind::RidgeLinear,
        &TaskKind::Regression,
        data.n_features(),
        0,
    )?;
    let d = data.n_features();
    let m = d + 1;
    let h = ridge_hessian(data, rows, alpha)?;
    let inv = 1.0 / rows.len() as f64;
    let mut rhs = Vector::zeros(m);
    for &r in rows {
        let x = data.x.row(r);
        let y = data.y[r];
        for i in 0..d {
            rhs[i] += x[i] * y * inv;
        }
        rhs[d] += y * inv;
    }
    let theta = solve_spd(&h, &rhs).map_err(|e| match e {
        NumericsError::NotPositiveDefinite { .. } if alpha == 0.0 => ModelError::SingularSystem,
        other => ModelError::Numerics(other),
    })?;
    let params = ModelParams::from_theta(spec, theta)?;
    let objective = ShardObjective::full(data, spec, rows.to_vec(), alpha);
    let f_star = objective.loss_report(&params)?.total;
    Ok((params, f_star))
}
