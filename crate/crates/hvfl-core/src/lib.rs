//! Deterministic simulator and analysis toolkit for hybrid
//! horizontal-vertical federated learning.
//!
//! A set of devices jointly trains one global model: *horizontal* devices
//! hold disjoint, possibly non-IID sample sets over the full feature space,
//! while *vertical* devices share one sample set but each train only the
//! parameters reachable from their own feature subset. The server performs
//! per-coordinate weighted averaging over the devices that actually train
//! each coordinate.
//!
//! The crate is split into five modules:
//!
//! - [`numerics`]: dense vectors/matrices with fixed summation order,
//!   counter-based seeded random streams, and a finite-difference gradient
//!   oracle.
//! - [`data`]: dataset representation, synthetic generators, CSV ingestion,
//!   and the horizontal (Dirichlet label-skew) / vertical (feature-block)
//!   partitioners.
//! - [`models`]: ridge-linear, logistic, and one-hidden-layer MLP objectives
//!   with hand-derived analytic gradients and coordinate masking.
//! - [`federation`]: the round protocol (local SGD/Adam steps, weighted
//!   aggregation, broadcast, evaluation) with per-device random streams.
//! - [`analysis`]: empirical estimation of smoothness/PL/gradient-dispersion
//!   constants, closed-form convergence bound curves, and per-round audits
//!   of the descent inequality against measured runs.
//!
//! Every run is a pure function of its configuration and seed: reruns are
//! bit-identical regardless of platform or device iteration order.

pub mod analysis;
pub mod data;
pub mod federation;
pub mod models;
pub mod numerics;

pub use analysis::{
    audit_descent, audit_descent_with_divergence, bound_curve, bound_vs_run, check_bound_convexity,
    estimate_lipschitz, estimate_pl, gradient_variance, AnalysisError, AnalysisReport, BoundCurve,
    BoundForm, ConvergenceEstimates, Provenance,
};
pub use data::{
    build_topology, generate_classification, generate_regression, load_csv, partition_horizontal,
    partition_vertical, CsvSchema, DataError, Dataset, DeviceShard, Role, TaskKind, Topology,
};
pub use federation::{
    aggregate, local_train, BatchSize, DivergenceInfo, Federation, FederationError, GlobalModel,
    InitScheme, LocalUpdate, Optimizer, RoundRecord, RunHistory, TrainConfig, WeightScheme,
};
pub use models::{
    ridge_closed_form, CoordMask, CoordRole, Head, LossReport, ModelError, ModelKind, ModelParams,
    ModelSpec, Objective, ShardObjective,
};
pub use numerics::{finite_diff_gradient, Matrix, NumericsError, RngStream, Vector};
