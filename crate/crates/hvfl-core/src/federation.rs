//! The hybrid round protocol: local training on every device, weighted
//! aggregation at the server, broadcast, and evaluation.
//!
//! Each round broadcasts the global parameters, lets every device run
//! `t_local` optimizer steps on its own masked objective (mini-batches come
//! from the device's private random stream), then aggregates coordinate-wise:
//! a coordinate's new value is the weighted mean over exactly the devices
//! whose mask covers it. Rounds are sequential; within a round the device
//! order is irrelevant because all randomness is per-device.
//!
//! Alongside the protocol itself, every round records the diagnostics the
//! convergence analysis needs at the broadcast point: the pooled-objective
//! gradient norm and the dispersion of per-device gradients.

use crate::analysis::gradient_variance;
use crate::data::{Dataset, Role, Topology};
use crate::models::{
    CoordMask, LossReport, ModelError, ModelParams, ModelSpec, ShardObjective,
};
use crate::numerics::{RngStream, Vector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stream ids reserved by the simulator; device streams start at
/// [`DEVICE_STREAM_BASE`] + device id.
pub const INIT_STREAM: u64 = 20;
pub const DEVICE_STREAM_BASE: u64 = 1000;

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("device {device} diverged (non-finite values) at local iteration {iteration} of round {round}")]
    Divergence {
        device: usize,
        round: usize,
        iteration: usize,
    },
    #[error("global model became non-finite after aggregation in round {round}")]
    GlobalDivergence { round: usize },
    #[error("coordinate {coordinate} has no contributing device")]
    Coverage { coordinate: usize },
    #[error("expected one update per device: got {got}, topology has {expected}")]
    UpdateCountMismatch { expected: usize, got: usize },
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error("invalid train config: {reason}")]
    InvalidConfig { reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Local optimizer run on every device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam_default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Mini-batch size per local step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSize {
    Full,
    Size(usize),
}

/// How device updates are weighted during aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    SampleProportional,
    Uniform,
}

/// Starting point of the global model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    Zeros,
    Gaussian { scale: f64 },
}

/// Round-protocol configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate (constant across rounds).
    pub learning_rate: f64,
    /// Local optimizer steps per round.
    pub t_local: usize,
    /// Number of aggregation rounds.
    pub rounds: usize,
    /// Regularizer coefficient in `[0, 1]`.
    pub alpha: f64,
    pub optimizer: Optimizer,
    pub batch_size: BatchSize,
    pub weight_scheme: WeightScheme,
    pub init: InitScheme,
    /// Record per-iteration local gradient norms in each update.
    pub record_grad_trace: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        // Negated form so NaN fails validation too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.learning_rate > 0.0) {
            return Err(FederationError::InvalidConfig {
                reason: format!("learning_rate must be positive, got {}", self.learning_rate),
            });
        }
        if self.t_local < 1 {
            return Err(FederationError::InvalidConfig {
                reason: "t_local must be at least 1".to_string(),
            });
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(FederationError::InvalidConfig {
                reason: format!("alpha must lie in [0, 1], got {}", self.alpha),
            });
        }
        if let BatchSize::Size(0) = self.batch_size {
            return Err(FederationError::InvalidConfig {
                reason: "batch_size must be at least 1".to_string(),
            });
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            t_local: 1,
            rounds: 50,
            alpha: 0.0,
            optimizer: Optimizer::Sgd,
            batch_size: BatchSize::Full,
            weight_scheme: WeightScheme::SampleProportional,
            init: InitScheme::Zeros,
            record_grad_trace: false,
        }
    }
}

/// One device's post-training result for a round.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub device_id: usize,
    pub params_after: ModelParams,
    pub mask: CoordMask,
    pub sample_count: usize,
    pub grad_trace: Option<Vec<f64>>,
}

/// The broadcast model plus its latest evaluation.
#[derive(Debug, Clone)]
pub struct GlobalModel {
    pub params: ModelParams,
    pub round: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// Everything recorded about one completed round.
///
/// `grad_norm_broadcast` and `sigma_broadcast` are measured at the model the
/// round started from; the losses and `objective` describe the aggregated
/// model the round produced.
#[derive(Debug, Clone, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub device_reports: Vec<DeviceReport>,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: Option<f64>,
    /// Pooled training objective (with regularizer) at the aggregated model.
    pub objective: f64,
    /// Norm of the pooled-objective gradient at the broadcast model.
    pub grad_norm_broadcast: f64,
    /// Dispersion of per-device gradients at the broadcast model.
    pub sigma_broadcast: f64,
    #[serde(skip)]
    pub wall_secs: f64,
}

/// Per-device local loss after training, for round-level reporting.
#[derive(Debug, Clone, Serialize)]
pub struct DeviceReport {
    pub device_id: usize,
    pub report: LossReport,
}

/// State of the global model at round zero, before any training.
#[derive(Debug, Clone, Serialize)]
pub struct InitialState {
    pub train_loss: f64,
    pub test_loss: f64,
    pub objective: f64,
}

/// What a diverging run looked like right before it left the finite
/// domain: the index of the round that blew up and the audit inputs
/// measured at its broadcast point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DivergenceInfo {
    pub round: usize,
    pub objective_before: f64,
    pub grad_norm_broadcast: f64,
    pub sigma_broadcast: f64,
}

/// Full run history: the initial state plus one record per round.
#[derive(Debug, Clone)]
pub struct RunHistory {
    pub initial: InitialState,
    pub records: Vec<RoundRecord>,
    pub final_params: ModelParams,
}

impl RunHistory {
    /// Pooled objective at rounds `0..=T`.
    pub fn objective_series(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.records.len() + 1);
        out.push(self.initial.objective);
        out.extend(self.records.iter().map(|r| r.objective));
        out
    }

    /// Largest per-round gradient dispersion observed at broadcast points.
    pub fn max_sigma(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.sigma_broadcast)
            .fold(0.0, f64::max)
    }

    /// History CSV with pinned columns and `%.12e` floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,train_loss,test_loss,grad_norm,sigma_hat\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                r.round, r.train_loss, r.test_loss, r.grad_norm_broadcast, r.sigma_broadcast
            ));
        }
        out
    }
}

/// Evaluation of a model on a data split: mean sample loss without
/// regularizer, plus accuracy for classification tasks.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalReport {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Mean sample loss (no regularizer) of `params` over `rows`, with accuracy
/// for classification heads.
pub fn evaluate(
    data: &Dataset,
    spec: ModelSpec,
    params: &ModelParams,
    rows: &[usize],
) -> Result<EvalReport, FederationError> {
    if rows.is_empty() {
        return Err(FederationError::EmptySplit);
    }
    let objective = ShardObjective::full(data, spec, rows.to_vec(), 0.0);
    let report = objective.loss_report(params)?;
    let accuracy = if data.task.is_classification() {
        let mut hits = 0usize;
        for &r in rows {
            if predicted_class(params, data.x.row(r)) == data.y[r] as usize {
                hits += 1;
            }
        }
        Some(hits as f64 / rows.len() as f64)
    } else {
        None
    };
    Ok(EvalReport {
        loss: report.mean_sample_loss,
        accuracy,
    })
}

fn predicted_class(params: &ModelParams, x: &[f64]) -> usize {
    let live: Vec<usize> = (0..x.len()).collect();
    let logits = crate::models::predict_logits(params, x, &live);
    if logits.len() == 1 {
        usize::from(logits[0] > 0.0)
    } else {
        logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .expect("nonempty logits")
    }
}

/// Adam moment state, reset at the start of every round.
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl AdamState {
    fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    fn apply(
        &mut self,
        theta: &mut Vector,
        grad: &Vector,
        mask: &CoordMask,
        lr: f64,
        (beta1, beta2, epsilon): (f64, f64, f64),
    ) {
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for c in 0..theta.dim() {
            if !mask.is_set(c) {
                continue;
            }
            let g = grad[c];
            self.m[c] = beta1 * self.m[c] + (1.0 - beta1) * g;
            self.v[c] = beta2 * self.v[c] + (1.0 - beta2) * g * g;
            let m_hat = self.m[c] / bc1;
            let v_hat = self.v[c] / bc2;
            theta[c] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

/// One plain gradient step restricted to the mask.
pub fn sgd_step(theta: &mut Vector, grad: &Vector, mask: &CoordMask, lr: f64) {
    for c in 0..theta.dim() {
        if mask.is_set(c) {
            theta[c] -= lr * grad[c];
        }
    }
}

/// Runs `t_local` optimizer steps on the device's masked objective starting
/// from the broadcast parameters. Off-mask coordinates are never touched.
/// Adam state starts fresh each call.
pub fn local_train(
    objective: &ShardObjective<'_>,
    broadcast: &ModelParams,
    cfg: &TrainConfig,
    device_id: usize,
    round: usize,
    rng: &mut RngStream,
) -> Result<LocalUpdate, FederationError> {
    let mut theta = broadcast.theta.clone();
    let mut adam = match cfg.optimizer {
        Optimizer::Adam { .. } => Some(AdamState::new(theta.dim())),
        Optimizer::Sgd => None,
    };
    let mut trace = cfg.record_grad_trace.then(Vec::new);
    let n_local = objective.rows.len();
    for iteration in 1..=cfg.t_local {
        let params = ModelParams::from_theta(objective.spec, theta.clone())?;
        let grad = match cfg.batch_size {
            BatchSize::Full => objective.gradient(&params)?,
            BatchSize::Size(k) => {
                let picks = rng.sample_with_replacement(n_local, k.min(n_local));
                let rows: Vec<usize> = picks.into_iter().map(|i| objective.rows[i]).collect();
                objective.gradient_rows(&params, &rows)?
            }
        };
        if grad.check_finite("local gradient").is_err() {
            return Err(FederationError::Divergence {
                device: device_id,
                round,
                iteration,
            });
        }
        if let Some(t) = trace.as_mut() {
            t.push(grad.norm());
        }
        match cfg.optimizer {
            Optimizer::Sgd => sgd_step(&mut theta, &grad, &objective.mask, cfg.learning_rate),
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => adam.as_mut().expect("adam state").apply(
                &mut theta,
                &grad,
                &objective.mask,
                cfg.learning_rate,
                (beta1, beta2, epsilon),
            ),
        }
        if theta.check_finite("local parameters").is_err() {
            return Err(FederationError::Divergence {
                device: device_id,
                round,
                iteration,
            });
        }
    }
    Ok(LocalUpdate {
        device_id,
        params_after: ModelParams::from_theta(objective.spec, theta)?,
        mask: objective.mask.clone(),
        sample_count: n_local,
        grad_trace: trace,
    })
}

/// Coordinate-wise weighted mean over contributing devices. A device
/// contributes to a coordinate only if its mask covers it; weights are
/// normalized per coordinate over the contributors.
pub fn aggregate(
    updates: &[LocalUpdate],
    topology: &Topology,
    scheme: WeightScheme,
) -> Result<ModelParams, FederationError> {
    if updates.len() != topology.n_devices() {
        return Err(FederationError::UpdateCountMismatch {
            expected: topology.n_devices(),
            got: updates.len(),
        });
    }
    let spec = updates[0].params_after.spec;
    let dim = spec.dim();
    let weights: Vec<f64> = updates
        .iter()
        .map(|u| match scheme {
            WeightScheme::SampleProportional => u.sample_count as f64,
            WeightScheme::Uniform => 1.0,
        })
        .collect();
    let mut theta = Vector::zeros(dim);
    for c in 0..dim {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut contributors = 0usize;
        let mut last = 0.0;
        for (u, w) in updates.iter().zip(weights.iter()) {
            if u.mask.is_set(c) {
                num += w * u.params_after.theta[c];
                den += w;
                contributors += 1;
                last = u.params_after.theta[c];
            }
        }
        if contributors == 0 || den == 0.0 {
            return Err(FederationError::Coverage { coordinate: c });
        }
        // A single contributor passes its value through exactly.
        theta[c] = if contributors == 1 { last } else { num / den };
    }
    Ok(ModelParams::from_theta(spec, theta)?)
}

/// An in-process federation: dataset, topology, model layout, train and
/// test row sets, and the round configuration.
pub struct Federation<'a> {
    pub data: &'a Dataset,
    pub topology: &'a Topology,
    pub spec: ModelSpec,
    pub cfg: TrainConfig,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    device_objectives: Vec<ShardObjective<'a>>,
    global_objective: ShardObjective<'a>,
}

impl<'a> Federation<'a> {
    pub fn new(
        data: &'a Dataset,
        topology: &'a Topology,
        spec: ModelSpec,
        cfg: TrainConfig,
        train_rows: Vec<usize>,
        test_rows: Vec<usize>,
    ) -> Result<Self, FederationError> {
        cfg.validate()?;
        let device_objectives = topology
            .shards
            .iter()
            .zip(topology.masks.iter())
            .map(|(shard, mask)| {
                let live = match shard.role {
                    Role::Horizontal => (0..data.n_features()).collect(),
                    Role::Vertical => shard.feature_indices.clone(),
                };
                ShardObjective::masked(
                    data,
                    spec,
                    shard.sample_indices.clone(),
                    live,
                    mask.clone(),
                    cfg.alpha,
                )
            })
            .collect();
        let global_objective = ShardObjective::full(data, spec, train_rows.clone(), cfg.alpha);
        Ok(Self {
            data,
            topology,
            spec,
            cfg,
            train_rows,
            test_rows,
            device_objectives,
            global_objective,
        })
    }

    /// The pooled training objective the convergence analysis audits.
    pub fn global_objective(&self) -> &ShardObjective<'a> {
        &self.global_objective
    }

    pub fn device_objectives(&self) -> &[ShardObjective<'a>] {
        &self.device_objectives
    }

    pub fn initial_params(&self, seed: u64) -> ModelParams {
        match self.cfg.init {
            InitScheme::Zeros => ModelParams::zeros(self.spec),
            InitScheme::Gaussian { scale } => {
                let mut stream = RngStream::new(seed, INIT_STREAM);
                let mut theta = stream.gaussian(self.spec.dim());
                theta.scale(scale);
                ModelParams::from_theta(self.spec, theta).expect("init shape")
            }
        }
    }

    /// Per-device full-batch gradients at a common parameter point.
    pub fn device_gradients_at(
        &self,
        params: &ModelParams,
    ) -> Result<Vec<Vector>, FederationError> {
        self.device_objectives
            .iter()
            .map(|obj| obj.gradient(params).map_err(FederationError::from))
            .collect()
    }

    /// One full round: local training on every device, aggregation, and
    /// evaluation. Returns the new model and its record.
    pub fn run_round(
        &self,
        global: &GlobalModel,
        streams: &mut [RngStream],
    ) -> Result<(GlobalModel, RoundRecord), FederationError> {
        let started = std::time::Instant::now();
        let round = global.round + 1;
        // Diagnostics at the broadcast point.
        let device_grads = self.device_gradients_at(&global.params)?;
        let sigma_broadcast = gradient_variance(&device_grads).unwrap_or(0.0);
        let grad_norm_broadcast = self.global_objective.gradient(&global.params)?.norm();
        // Local training, one private stream per device.
        let mut updates = Vec::with_capacity(self.device_objectives.len());
        for (i, obj) in self.device_objectives.iter().enumerate() {
            let device_id = self.topology.shards[i].device_id;
            let update = local_train(
                obj,
                &global.params,
                &self.cfg,
                device_id,
                round,
                &mut streams[i],
            )?;
            updates.push(update);
        }
        let new_params = aggregate(&updates, self.topology, self.cfg.weight_scheme)?;
        if new_params.theta.check_finite("aggregated model").is_err() {
            return Err(FederationError::GlobalDivergence { round });
        }
        let device_reports = self
            .device_objectives
            .iter()
            .zip(updates.iter())
            .map(|(obj, u)| {
                Ok(DeviceReport {
                    device_id: u.device_id,
                    report: obj.loss_report(&u.params_after)?,
                })
            })
            .collect::<Result<Vec<_>, FederationError>>()?;
        let train = evaluate(self.data, self.spec, &new_params, &self.train_rows)?;
        let test = evaluate(self.data, self.spec, &new_params, &self.test_rows)?;
        let objective = self.global_objective.loss_report(&new_params)?.total;
        if !objective.is_finite() || !train.loss.is_finite() || !test.loss.is_finite() {
            return Err(FederationError::GlobalDivergence { round });
        }
        let record = RoundRecord {
            round,
            device_reports,
            train_loss: train.loss,
            test_loss: test.loss,
            test_accuracy: test.accuracy,
            objective,
            grad_norm_broadcast,
            sigma_broadcast,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        let new_global = GlobalModel {
            params: new_params,
            round,
            train_loss: train.loss,
            test_loss: test.loss,
        };
        Ok((new_global, record))
    }

    /// Like [`Federation::run`], but a divergence stops the run instead of
    /// failing it: the completed rounds are returned together with the
    /// diagnostics of the round that blew up, measured at its (still
    /// finite) broadcast point. Negative-control experiments audit these
    /// truncated histories.
    pub fn run_until_divergence(
        &self,
        seed: u64,
    ) -> Result<(RunHistory, Option<DivergenceInfo>), FederationError> {
        let params = self.initial_params(seed);
        let train = evaluate(self.data, self.spec, &params, &self.train_rows)?;
        let test = evaluate(self.data, self.spec, &params, &self.test_rows)?;
        let objective = self.global_objective.loss_report(&params)?.total;
        let initial = InitialState {
            train_loss: train.loss,
            test_loss: test.loss,
            objective,
        };
        let mut streams: Vec<RngStream> = self
            .topology
            .shards
            .iter()
            .map(|s| RngStream::new(seed, DEVICE_STREAM_BASE + s.device_id as u64))
            .collect();
        let mut global = GlobalModel {
            params,
            round: 0,
            train_loss: train.loss,
            test_loss: test.loss,
        };
        let mut records = Vec::with_capacity(self.cfg.rounds);
        let mut divergence = None;
        for _ in 0..self.cfg.rounds {
            match self.run_round(&global, &mut streams) {
                Ok((next, record)) => {
                    global = next;
                    records.push(record);
                }
                Err(FederationError::Divergence { round, .. })
                | Err(FederationError::GlobalDivergence { round }) => {
                    let grads = self.device_gradients_at(&global.params)?;
                    let sigma_broadcast = gradient_variance(&grads).unwrap_or(f64::NAN);
                    let grad_norm_broadcast =
                        self.global_objective.gradient(&global.params)?.norm();
                    let objective_before =
                        self.global_objective.loss_report(&global.params)?.total;
                    divergence = Some(DivergenceInfo {
                        round,
                        objective_before,
                        grad_norm_broadcast,
                        sigma_broadcast,
                    });
                    break;
                }
                Err(other) => return Err(other),
            }
        }
        Ok((
            RunHistory {
                initial,
                records,
                final_params: global.params,
            },
            divergence,
        ))
    }

    /// Runs the configured number of rounds from the configured init.
    /// Reruns with the same seed are bit-identical.
    pub fn run(&self, seed: u64) -> Result<RunHistory, FederationError> {
        let params = self.initial_params(seed);
        let train = evaluate(self.data, self.spec, &params, &self.train_rows)?;
        let test = evaluate(self.data, self.spec, &params, &self.test_rows)?;
        let objective = self.global_objective.loss_report(&params)?.total;
        let initial = InitialState {
            train_loss: train.loss,
            test_loss: test.loss,
            objective,
        };
        let mut streams: Vec<RngStream> = self
            .topology
            .shards
            .iter()
            .map(|s| RngStream::new(seed, DEVICE_STREAM_BASE + s.device_id as u64))
            .collect();
        let mut global = GlobalModel {
            params,
            round: 0,
            train_loss: train.loss,
            test_loss: test.loss,
        };
        let mut records = Vec::with_capacity(self.cfg.rounds);
        for _ in 0..self.cfg.rounds {
            let (next, record) = self.run_round(&global, &mut streams)?;
            global = next;
            records.push(record);
        }
        Ok(RunHistory {
            initial,
            records,
            final_params: global.params,
        })
    }
}
