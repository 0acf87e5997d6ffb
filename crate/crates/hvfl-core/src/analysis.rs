//! Empirical estimation of the convergence-theory constants (gradient
//! smoothness `L`, PL constant `rho`, gradient dispersion `sigma`, initial
//! gap `theta`), evaluation of the closed-form bound curve, a convexity
//! check of that curve, and per-round auditing of the descent inequality
//! against a measured run.
//!
//! Two algebraic routes to the bound are kept side by side. With
//! `factor = 2 rho (L mu^2 - mu) + 1`, the recurrence form accumulates
//!
//! ```text
//! B(t) = factor^t * theta + 2 rho L mu^2 sigma^2 * sum_{i=1..t} factor^(i-1)
//! ```
//!
//! while the closed form evaluates
//!
//! ```text
//! B(t) = factor^t * theta + L mu sigma^2 * (factor^(t+1) - 1) / (L mu - 1)
//! ```
//!
//! The two disagree by one exponent in the geometric term; both are
//! reported rather than silently reconciled, and the closed form is
//! rejected near `L mu = 1` where its denominator vanishes.

use crate::federation::RunHistory;
use crate::models::{ridge_closed_form, ridge_hessian, ModelError, Objective};
use crate::numerics::{sym_eigenvalues, NumericsError, RngStream, Vector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} probes, got {got}")]
    TooFewProbes { needed: usize, got: usize },
    #[error("PL estimation failed: every probe was degenerate (objective within 1e-10 of f*)")]
    EstimationFailed,
    #[error("no device gradients supplied")]
    NoGradients,
    #[error("bound overflowed at round {round}")]
    BoundOverflow { round: usize },
    #[error("empty run history: nothing to audit")]
    EmptyHistory,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Whether a constant came from exact structure or from probing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    Empirical,
}

/// The measured constants feeding the convergence bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceEstimates {
    /// Gradient smoothness constant.
    pub lipschitz: f64,
    /// PL constant.
    pub pl_constant: f64,
    /// Gradient dispersion (max over observed rounds).
    pub sigma: f64,
    /// Initial optimality gap.
    pub initial_gap: f64,
    /// Minimal objective value.
    pub f_star: f64,
    pub lipschitz_provenance: Provenance,
    pub pl_provenance: Provenance,
    pub f_star_provenance: Provenance,
}

impl ConvergenceEstimates {
    /// Exact constants for a ridge objective: eigenvalues of the regularized
    /// Hessian, the closed-form minimum, and the gap at `initial_objective`.
    pub fn analytic_ridge(
        data: &crate::data::Dataset,
        rows: &[usize],
        alpha: f64,
        initial_objective: f64,
    ) -> Result<Self, AnalysisError> {
        let h = ridge_hessian(data, rows, alpha)?;
        let eigs = sym_eigenvalues(&h)?;
        let (_, f_star) = ridge_closed_form(data, rows, alpha)?;
        Ok(Self {
            lipschitz: eigs[eigs.len() - 1],
            pl_constant: eigs[0],
            sigma: 0.0,
            initial_gap: (initial_objective - f_star).max(0.0),
            f_star,
            lipschitz_provenance: Provenance::Analytic,
            pl_provenance: Provenance::Analytic,
            f_star_provenance: Provenance::Analytic,
        })
    }

    /// Fills the dispersion constant from a measured run (max over rounds).
    pub fn with_sigma_from(mut self, history: &RunHistory) -> Self {
        self.sigma = history.max_sigma();
        self
    }
}

/// Largest observed gradient-difference ratio over random probe pairs,
/// scaled by a 1.1 safety factor.
pub fn estimate_lipschitz<O: Objective>(
    objective: &O,
    probe_count: usize,
    radius: f64,
    rng: &mut RngStream,
) -> Result<f64, AnalysisError> {
    if probe_count < 2 {
        return Err(AnalysisError::TooFewProbes {
            needed: 2,
            got: probe_count,
        });
    }
    let dim = objective.dim();
    let mut max_ratio = 0.0f64;
    for _ in 0..probe_count {
        let mut a = rng.gaussian(dim);
        let mut b = rng.gaussian(dim);
        a.scale(radius);
        b.scale(radius);
        let dist = a.distance(&b)?;
        if dist < 1e-12 {
            continue;
        }
        let ga = objective.gradient(&a)?;
        let gb = objective.gradient(&b)?;
        let ratio = ga.distance(&gb)? / dist;
        max_ratio = max_ratio.max(ratio);
    }
    Ok(1.1 * max_ratio)
}

/// Smallest observed PL ratio `|grad|^2 / (2 (F - f*))` over random probes;
/// probes with a vanishing gap are skipped.
pub fn estimate_pl<O: Objective>(
    objective: &O,
    f_star: f64,
    probe_count: usize,
    radius: f64,
    rng: &mut RngStream,
) -> Result<f64, AnalysisError> {
    let dim = objective.dim();
    let mut best: Option<f64> = None;
    for _ in 0..probe_count {
        let mut probe = rng.gaussian(dim);
        probe.scale(radius);
        let gap = objective.value(&probe)? - f_star;
        if gap < 1e-10 {
            continue;
        }
        let grad = objective.gradient(&probe)?;
        let ratio = grad.norm().powi(2) / (2.0 * gap);
        best = Some(match best {
            Some(b) => b.min(ratio),
            None => ratio,
        });
    }
    best.ok_or(AnalysisError::EstimationFailed)
}

/// Reference minimum for objectives without a closed form: the best value
/// seen along a long full-batch Adam run from zero, minus a small margin.
pub fn reference_f_star<O: Objective>(objective: &O, steps: usize) -> Result<f64, AnalysisError> {
    let dim = objective.dim();
    let mut theta = Vector::zeros(dim);
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let (beta1, beta2, epsilon, lr) = (0.9, 0.999, 1e-8, 0.05);
    let mut best = objective.value(&theta)?;
    for t in 1..=steps {
        let g = objective.gradient(&theta)?;
        for c in 0..dim {
            m[c] = beta1 * m[c] + (1.0 - beta1) * g[c];
            v[c] = beta2 * v[c] + (1.0 - beta2) * g[c] * g[c];
            let m_hat = m[c] / (1.0 - beta1.powi(t as i32));
            let v_hat = v[c] / (1.0 - beta2.powi(t as i32));
            theta[c] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        let value = objective.value(&theta)?;
        if value.is_finite() && value < best {
            best = value;
        }
    }
    Ok(best - 1e-9)
}

/// Dispersion of per-device gradients taken at one common parameter point:
/// `sqrt( sum_n ||g_n - mean(g)||^2 )`, the tightest constant bounding the
/// squared deviations at that point.
pub fn gradient_variance(gradients: &[Vector]) -> Result<f64, AnalysisError> {
    if gradients.is_empty() {
        return Err(AnalysisError::NoGradients);
    }
    let dim = gradients[0].dim();
    let mut mean = Vector::zeros(dim);
    for g in gradients {
        mean.add_scaled(g, 1.0)?;
    }
    mean.scale(1.0 / gradients.len() as f64);
    let mut total = 0.0;
    for g in gradients {
        let d = g.distance(&mean)?;
        total += d * d;
    }
    Ok(total.sqrt())
}

/// Which algebraic route evaluates the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundForm {
    /// Accumulates the geometric sum of the recurrence term by term.
    GeometricSum,
    /// Evaluates the closed-form expression literally.
    ClosedForm,
}

/// The bound values `B(0..=T)` plus the per-round contraction factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCurve {
    pub values: Vec<f64>,
    pub factor: f64,
    pub form: BoundForm,
    /// Set when the requested learning rate exceeds `1/L`, outside the
    /// regime where the bound is meaningful.
    pub lr_exceeds_smoothness: bool,
}

/// Evaluates the bound curve for `t = 0..=t_max`. Near `L mu = 1` the
/// closed form has a vanishing denominator and is replaced by the
/// geometric-sum route (recorded in `form`).
pub fn bound_curve(
    est: &ConvergenceEstimates,
    learning_rate: f64,
    t_max: usize,
    form: BoundForm,
) -> Result<BoundCurve, AnalysisError> {
    assert!(learning_rate > 0.0, "learning rate must be positive");
    let l = est.lipschitz;
    let rho = est.pl_constant;
    let mu = learning_rate;
    let sigma_sq = est.sigma * est.sigma;
    let theta = est.initial_gap;
    let factor = 2.0 * rho * (l * mu * mu - mu) + 1.0;
    let lr_exceeds_smoothness = l > 0.0 && mu > 1.0 / l;
    let effective_form = if form == BoundForm::ClosedForm && (l * mu - 1.0).abs() < 1e-9 {
        BoundForm::GeometricSum
    } else {
        form
    };
    let mut values = Vec::with_capacity(t_max + 1);
    match effective_form {
        BoundForm::GeometricSum => {
            let noise = 2.0 * rho * l * mu * mu * sigma_sq;
            let mut pow = 1.0; // factor^t
            let mut geo = 0.0; // sum_{i=1..t} factor^(i-1)
            values.push(theta);
            for t in 1..=t_max {
                geo += pow;
                pow *= factor;
                let b = theta * pow + noise * geo;
                if !b.is_finite() {
                    return Err(AnalysisError::BoundOverflow { round: t });
                }
                values.push(b);
            }
        }
        BoundForm::ClosedForm => {
            let denom = l * mu - 1.0;
            let coef = l * mu * sigma_sq;
            let mut pow = 1.0;
            for t in 0..=t_max {
                let b = theta * pow + coef * (pow * factor - 1.0) / denom;
                if !b.is_finite() {
                    return Err(AnalysisError::BoundOverflow { round: t });
                }
                values.push(b);
                pow *= factor;
            }
        }
    }
    Ok(BoundCurve {
        values,
        factor,
        form: effective_form,
        lr_exceeds_smoothness,
    })
}

/// Outcome of the bound-convexity check: the learning-rate condition,
/// the initial-gap threshold, and a numerical second-difference scan of the
/// bound curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundConvexityReport {
    pub lr_ok: bool,
    pub theta_threshold: f64,
    pub theta_ok: bool,
    /// `None` when the learning-rate condition fails: no convexity claim.
    pub curve_convex: Option<bool>,
    pub min_second_difference: f64,
}

/// Checks the convexity conditions of the bound curve (learning rate at
/// most 1/L and the initial gap above its threshold) and numerically
/// verifies convexity via second differences (tolerance -1e-12).
pub fn check_bound_convexity(
    est: &ConvergenceEstimates,
    learning_rate: f64,
    t_max: usize,
) -> Result<BoundConvexityReport, AnalysisError> {
    let l = est.lipschitz;
    let rho = est.pl_constant;
    let mu = learning_rate;
    let sigma_sq = est.sigma * est.sigma;
    let lr_ok = l <= 0.0 || mu <= 1.0 / l;
    let denom = 1.0 - l * mu;
    let theta_threshold = if sigma_sq == 0.0 {
        0.0
    } else if denom.abs() < 1e-300 {
        f64::INFINITY
    } else {
        (1.0 - 2.0 * rho * mu + 2.0 * rho * l * mu * mu) * l * mu * sigma_sq / denom
    };
    let theta_ok = est.initial_gap >= theta_threshold;
    if !lr_ok {
        return Ok(BoundConvexityReport {
            lr_ok,
            theta_threshold,
            theta_ok,
            curve_convex: None,
            min_second_difference: f64::NAN,
        });
    }
    let curve = bound_curve(est, learning_rate, t_max, BoundForm::ClosedForm)?;
    let mut min_diff = f64::INFINITY;
    for t in 1..curve.values.len().saturating_sub(1) {
        let second = curve.values[t + 1] - 2.0 * curve.values[t] + curve.values[t - 1];
        min_diff = min_diff.min(second);
    }
    if !min_diff.is_finite() {
        min_diff = 0.0; // curves shorter than three points are trivially convex
    }
    Ok(BoundConvexityReport {
        lr_ok,
        theta_threshold,
        theta_ok,
        curve_convex: Some(min_diff >= -1e-12),
        min_second_difference: min_diff,
    })
}

/// One audited round of the descent inequality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescentRound {
    pub round: usize,
    pub objective_before: f64,
    pub objective_after: f64,
    /// `F(t) - mu |g|^2 + (L mu^2 / 2)(|g| + sigma_t)^2`.
    pub budget: f64,
    pub violated: bool,
}

/// Per-round audit of the smoothness descent inequality over a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescentAudit {
    pub rounds: Vec<DescentRound>,
    pub n_violations: usize,
}

/// Checks, for every recorded round, that the objective drop respected
/// `F(t+1) <= F(t) - mu |grad F(t)|^2 + (L mu^2 / 2)(|grad F(t)| + sigma_t)^2`
/// with the gradient norm and dispersion measured at the broadcast point.
/// Violating rounds are flagged, not fatal.
pub fn audit_descent(
    history: &RunHistory,
    est: &ConvergenceEstimates,
    learning_rate: f64,
) -> DescentAudit {
    let l = est.lipschitz;
    let mu = learning_rate;
    let mut prev = history.initial.objective;
    let mut rounds = Vec::with_capacity(history.records.len());
    let mut n_violations = 0;
    for record in &history.records {
        let g = record.grad_norm_broadcast;
        let s = record.sigma_broadcast;
        let budget = prev - mu * g * g + 0.5 * l * mu * mu * (g + s) * (g + s);
        // Negated form so a NaN objective counts as a violation.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let violated = !(record.objective <= budget);
        if violated {
            n_violations += 1;
        }
        rounds.push(DescentRound {
            round: record.round,
            objective_before: prev,
            objective_after: record.objective,
            budget,
            violated,
        });
        prev = record.objective;
    }
    DescentAudit {
        rounds,
        n_violations,
    }
}

/// Descent audit over a possibly truncated run: when the run diverged, the
/// round that left the finite domain is appended as a flagged entry — its
/// measured objective is non-finite and therefore exceeds the finite budget
/// computed from the last broadcast point.
pub fn audit_descent_with_divergence(
    history: &RunHistory,
    est: &ConvergenceEstimates,
    learning_rate: f64,
    divergence: Option<&crate::federation::DivergenceInfo>,
) -> DescentAudit {
    let mut audit = audit_descent(history, est, learning_rate);
    if let Some(info) = divergence {
        let g = info.grad_norm_broadcast;
        let s = info.sigma_broadcast;
        let mu = learning_rate;
        let budget =
            info.objective_before - mu * g * g + 0.5 * est.lipschitz * mu * mu * (g + s) * (g + s);
        audit.rounds.push(DescentRound {
            round: info.round,
            objective_before: info.objective_before,
            objective_after: f64::INFINITY,
            budget,
            violated: true,
        });
        audit.n_violations += 1;
    }
    audit
}

/// One round of the bound-dominance comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapRow {
    pub round: usize,
    pub empirical_gap: f64,
    pub bound: f64,
    pub margin: f64,
    pub violated: bool,
}

/// Bound-vs-run dominance report: `F(m(t)) - f* <= B(t)` per round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominanceReport {
    pub rows: Vec<GapRow>,
    pub n_violations: usize,
    pub curve: BoundCurve,
}

/// Compares the measured optimality gap per round against the bound curve.
pub fn bound_vs_run(
    history: &RunHistory,
    est: &ConvergenceEstimates,
    learning_rate: f64,
    form: BoundForm,
) -> Result<DominanceReport, AnalysisError> {
    let t_max = history.records.len();
    let curve = bound_curve(est, learning_rate, t_max, form)?;
    let series = history.objective_series();
    let mut rows = Vec::with_capacity(series.len());
    let mut n_violations = 0;
    for (t, objective) in series.iter().enumerate() {
        let gap = objective - est.f_star;
        let bound = curve.values[t];
        // Negated form so a NaN gap counts as a violation.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let violated = !(gap <= bound);
        if violated {
            n_violations += 1;
        }
        rows.push(GapRow {
            round: t,
            empirical_gap: gap,
            bound,
            margin: bound - gap,
            violated,
        });
    }
    Ok(DominanceReport {
        rows,
        n_violations,
        curve,
    })
}

/// Full analysis bundle, serialized to `analysis.json` by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub estimates: ConvergenceEstimates,
    pub learning_rate: f64,
    pub bound: BoundCurve,
    pub convexity: BoundConvexityReport,
    pub descent_audit: DescentAudit,
    pub dominance: DominanceReport,
}

impl AnalysisReport {
    /// Assembles every analysis artifact for one measured run.
    pub fn for_run(
        history: &RunHistory,
        est: &ConvergenceEstimates,
        learning_rate: f64,
        form: BoundForm,
    ) -> Result<Self, AnalysisError> {
        let dominance = bound_vs_run(history, est, learning_rate, form)?;
        let convexity = check_bound_convexity(est, learning_rate, history.records.len().max(2))?;
        let descent_audit = audit_descent(history, est, learning_rate);
        Ok(Self {
            estimates: est.clone(),
            learning_rate,
            bound: dominance.curve.clone(),
            convexity,
            descent_audit,
            dominance,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("analysis serialize")
    }

    /// Bound curve and measured gap as CSV (`t,bound,empirical_gap`).
    pub fn bound_csv(&self) -> String {
        let mut out = String::from("t,bound,empirical_gap\n");
        for row in &self.dominance.rows {
            out.push_str(&format!(
                "{},{:.12e},{:.12e}\n",
                row.round, row.bound, row.empirical_gap
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_regression, TaskKind};
    use crate::models::{ModelKind, ModelSpec, ShardObjective};

    fn estimates(l: f64, rho: f64, sigma: f64, theta: f64) -> ConvergenceEstimates {
        ConvergenceEstimates {
            lipschitz: l,
            pl_constant: rho,
            sigma,
            initial_gap: theta,
            f_star: 0.0,
            lipschitz_provenance: Provenance::Empirical,
            pl_provenance: Provenance::Empirical,
            f_star_provenance: Provenance::Empirical,
        }
    }

    struct Quadratic {
        curvature: f64,
        center: f64,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, theta: &Vector) -> Result<f64, ModelError> {
            let d = theta[0] - self.center;
            Ok(self.curvature * d * d)
        }
        fn gradient(&self, theta: &Vector) -> Result<Vector, ModelError> {
            Ok(Vector::from_vec(vec![
                2.0 * self.curvature * (theta[0] - self.center),
            ]))
        }
    }

    struct Constant;

    impl Objective for Constant {
        fn dim(&self) -> usize {
            3
        }
        fn value(&self, _theta: &Vector) -> Result<f64, ModelError> {
            Ok(4.2)
        }
        fn gradient(&self, _theta: &Vector) -> Result<Vector, ModelError> {
            Ok(Vector::zeros(3))
        }
    }

    #[test]
    fn analytic_ridge_constants_match_eigenvalue_oracle() {
        let ds = generate_regression(50, 4, 0.3, 5);
        let rows: Vec<usize> = (0..50).collect();
        let alpha = 0.2;
        let spec =
            ModelSpec::for_task(ModelKind::RidgeLinear, &TaskKind::Regression, 4, 0).unwrap();
        let obj = ShardObjective::full(&ds, spec, rows.clone(), alpha);
        let initial = Objective::value(&obj, &Vector::zeros(spec.dim())).unwrap();
        let est = ConvergenceEstimates::analytic_ridge(&ds, &rows, alpha, initial).unwrap();
        // Independent eigenvalue computation of the regularized Hessian.
        let h = ridge_hessian(&ds, &rows, alpha).unwrap();
        let eigs = sym_eigenvalues(&h).unwrap();
        assert!((est.lipschitz - eigs[eigs.len() - 1]).abs() < 1e-9);
        assert!((est.pl_constant - eigs[0]).abs() < 1e-9);
        assert!(est.pl_constant <= est.lipschitz);
        assert!(est.pl_constant >= alpha - 1e-12);
        assert!(est.initial_gap >= 0.0);
    }

    #[test]
    fn probe_lipschitz_approaches_analytic_for_constant_hessian() {
        // Gradient of the ridge objective is linear, so every probe pair
        // measures a Rayleigh-type ratio bounded by the top eigenvalue.
        let ds = generate_regression(40, 5, 0.2, 7);
        let rows: Vec<usize> = (0..40).collect();
        let alpha = 0.1;
        let spec =
            ModelSpec::for_task(ModelKind::RidgeLinear, &TaskKind::Regression, 5, 0).unwrap();
        let obj = ShardObjective::full(&ds, spec, rows.clone(), alpha);
        let h = ridge_hessian(&ds, &rows, alpha).unwrap();
        let eigs = sym_eigenvalues(&h).unwrap();
        let top = eigs[eigs.len() - 1];
        let mut rng = RngStream::new(11, 0);
        let est = estimate_lipschitz(&obj, 1000, 1.0, &mut rng).unwrap();
        // The raw probe maximum (before the 1.1 safety factor) should sit
        // within 5% of the analytic constant, and never above it.
        let raw = est / 1.1;
        assert!(raw <= top + 1e-9);
        assert!(raw >= 0.95 * top, "raw probe {raw} vs analytic {top}");
    }

    #[test]
    fn lipschitz_of_constant_objective_is_zero() {
        let mut rng = RngStream::new(13, 0);
        let est = estimate_lipschitz(&Constant, 100, 1.0, &mut rng).unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn pl_estimate_matches_quadratic_closed_form() {
        // F(m) = c (m - a)^2 has PL constant exactly 2c.
        let q = Quadratic {
            curvature: 1.7,
            center: 0.4,
        };
        let mut rng = RngStream::new(17, 0);
        let rho = estimate_pl(&q, 0.0, 500, 2.0, &mut rng).unwrap();
        assert!(
            (rho - 2.0 * 1.7).abs() < 0.01 * 2.0 * 1.7,
            "estimated {rho}"
        );
    }

    #[test]
    fn pl_estimation_fails_on_degenerate_probes() {
        // Constant objective: every probe gap is zero.
        let mut rng = RngStream::new(19, 0);
        assert!(matches!(
            estimate_pl(&Constant, 4.2, 50, 1.0, &mut rng),
            Err(AnalysisError::EstimationFailed)
        ));
    }

    #[test]
    fn gradient_variance_identical_gradients_is_zero() {
        let g = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let sigma = gradient_variance(&[g.clone(), g.clone(), g]).unwrap();
        assert_eq!(sigma, 0.0);
    }

    #[test]
    fn gradient_variance_opposed_pair_is_sqrt2_norm() {
        let g = Vector::from_vec(vec![3.0, 4.0]); // norm 5
        let mut neg = g.clone();
        neg.scale(-1.0);
        let sigma = gradient_variance(&[g, neg]).unwrap();
        assert!((sigma - 2.0_f64.sqrt() * 5.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_variance_is_shift_invariant() {
        let mut rng = RngStream::new(23, 0);
        let grads: Vec<Vector> = (0..5).map(|_| rng.gaussian(6)).collect();
        let shift = rng.gaussian(6);
        let shifted: Vec<Vector> = grads
            .iter()
            .map(|g| {
                let mut s = g.clone();
                s.add_scaled(&shift, 1.0).unwrap();
                s
            })
            .collect();
        let a = gradient_variance(&grads).unwrap();
        let b = gradient_variance(&shifted).unwrap();
        assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }

    #[test]
    fn bound_with_zero_sigma_collapses_to_geometric_decay() {
        let est = estimates(2.0, 0.5, 0.0, 3.0);
        let mu = 0.25;
        let factor = 2.0 * 0.5 * (2.0 * mu * mu - mu) + 1.0;
        for form in [BoundForm::GeometricSum, BoundForm::ClosedForm] {
            let curve = bound_curve(&est, mu, 10, form).unwrap();
            for (t, b) in curve.values.iter().enumerate() {
                let expected = 3.0 * factor.powi(t as i32);
                assert!((b - expected).abs() < 1e-12, "{form:?} t={t}");
            }
        }
    }

    #[test]
    fn bound_at_boundary_rate_with_zero_sigma_is_flat() {
        // mu = 1/L makes the factor exactly 1.
        let est = estimates(2.0, 0.5, 0.0, 3.0);
        let curve = bound_curve(&est, 0.5, 8, BoundForm::GeometricSum).unwrap();
        assert!((curve.factor - 1.0).abs() < 1e-15);
        for b in &curve.values {
            assert!((b - 3.0).abs() < 1e-12);
        }
        // The closed form is rejected at the removable singularity.
        let curve = bound_curve(&est, 0.5, 8, BoundForm::ClosedForm).unwrap();
        assert_eq!(curve.form, BoundForm::GeometricSum);
    }

    #[test]
    fn bound_forms_match_independent_recurrence_evaluation() {
        // rho=1, L=2, mu=0.25, sigma=0.1, theta=1, T=10.
        let est = estimates(2.0, 1.0, 0.1, 1.0);
        let mu = 0.25;
        let factor: f64 = 2.0 * 1.0 * (2.0 * mu * mu - mu) + 1.0; // 0.75
        assert!((factor - 0.75).abs() < 1e-15);
        // Independent route: unroll the recurrence B <- factor*B + noise.
        let noise = 2.0 * 1.0 * 2.0 * mu * mu * 0.1 * 0.1;
        let mut expected = vec![1.0f64];
        for _ in 1..=10 {
            expected.push(factor * expected.last().unwrap() + noise);
        }
        let geo = bound_curve(&est, mu, 10, BoundForm::GeometricSum).unwrap();
        for (t, (have, want)) in geo.values.iter().zip(expected.iter()).enumerate() {
            assert!(
                (have - want).abs() <= 1e-12 * want.abs().max(1.0),
                "t={t}: {have} vs {want}"
            );
        }
        // The closed form differs by exactly one extra factor power in the
        // geometric term; record the discrepancy instead of hiding it.
        let closed = bound_curve(&est, mu, 10, BoundForm::ClosedForm).unwrap();
        let l_mu = 2.0 * mu;
        for (t, have) in closed.values.iter().enumerate() {
            let pow = factor.powi(t as i32);
            let want = 1.0 * pow + l_mu * 0.01 * (pow * factor - 1.0) / (l_mu - 1.0);
            assert!((have - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
        // Documented exponent mismatch: closed(t) - geo(t) is proportional
        // to factor^t itself, vanishing only as t -> infinity.
        let diff0 = closed.values[0] - geo.values[0];
        assert!(diff0.abs() > 1e-6, "forms unexpectedly identical at t=0");
        // Shifting the closed form's geometric term down by one factor
        // power recovers the recurrence values to within 1e-9 relative.
        for (t, want) in geo.values.iter().enumerate() {
            let pow = factor.powi(t as i32);
            let shifted = 1.0 * pow + l_mu * 0.01 * (pow - 1.0) / (l_mu - 1.0);
            assert!((shifted - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn bound_is_non_increasing_in_admissible_regime_with_zero_sigma() {
        let est = estimates(2.0, 0.5, 0.0, 3.0);
        for &mu in &[0.1, 0.25, 0.5] {
            let curve = bound_curve(&est, mu, 40, BoundForm::GeometricSum).unwrap();
            assert!(!curve.lr_exceeds_smoothness);
            for w in curve.values.windows(2) {
                assert!(w[1] <= w[0] + 1e-15);
            }
        }
    }

    #[test]
    fn lipschitz_estimate_is_monotone_under_more_probes() {
        let ds = generate_regression(30, 4, 0.3, 3);
        let spec =
            ModelSpec::for_task(ModelKind::RidgeLinear, &TaskKind::Regression, 4, 0).unwrap();
        let obj = ShardObjective::full(&ds, spec, (0..30).collect(), 0.1);
        // Same stream: the first 100 pairs of the 1000-probe run are the
        // 100-probe run, so the max over the superset dominates.
        let few = estimate_lipschitz(&obj, 100, 1.0, &mut RngStream::new(9, 0)).unwrap();
        let many = estimate_lipschitz(&obj, 1000, 1.0, &mut RngStream::new(9, 0)).unwrap();
        assert!(many >= few);
    }

    #[test]
    fn convexity_zero_sigma_decay_is_convex() {
        let est = estimates(2.0, 0.5, 0.0, 3.0);
        let report = check_bound_convexity(&est, 0.25, 50).unwrap();
        assert!(report.lr_ok);
        assert!(report.theta_ok);
        assert_eq!(report.curve_convex, Some(true));
        assert!(report.min_second_difference >= -1e-12);
    }

    #[test]
    fn convexity_threshold_satisfied_gives_convex_curve() {
        let est = estimates(2.0, 0.8, 0.3, 10.0);
        let report = check_bound_convexity(&est, 0.2, 100).unwrap();
        assert!(report.lr_ok);
        assert!(report.theta_threshold.is_finite());
        assert!(report.theta_ok, "threshold {}", report.theta_threshold);
        assert_eq!(report.curve_convex, Some(true));
    }

    #[test]
    fn convexity_guard_path_for_large_learning_rate() {
        let est = estimates(2.0, 0.5, 0.1, 1.0);
        let report = check_bound_convexity(&est, 10.0 / 2.0, 50).unwrap();
        assert!(!report.lr_ok);
        assert_eq!(report.curve_convex, None);
    }

    #[test]
    fn descent_audit_zero_rate_reduces_to_equality() {
        // With mu -> 0 the budget collapses to F(t); a constant-objective
        // history trivially satisfies it.
        use crate::federation::{InitialState, RoundRecord, RunHistory};
        let record = |round| RoundRecord {
            round,
            device_reports: Vec::new(),
            train_loss: 1.0,
            test_loss: 1.0,
            test_accuracy: None,
            objective: 1.0,
            grad_norm_broadcast: 0.7,
            sigma_broadcast: 0.2,
            wall_secs: 0.0,
        };
        let history = RunHistory {
            initial: InitialState {
                train_loss: 1.0,
                test_loss: 1.0,
                objective: 1.0,
            },
            records: vec![record(1), record(2)],
            final_params: crate::models::ModelParams::zeros(
                ModelSpec::for_task(ModelKind::RidgeLinear, &TaskKind::Regression, 1, 0).unwrap(),
            ),
        };
        let est = estimates(2.0, 0.5, 0.2, 1.0);
        let audit = audit_descent(&history, &est, 1e-300);
        assert_eq!(audit.n_violations, 0);
    }
}
