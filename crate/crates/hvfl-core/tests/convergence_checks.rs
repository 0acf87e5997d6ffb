//! Cross-module checks: end-to-end training sanity and bound behavior on
//! measured runs.

use hvfl_core::data::{HorizontalParams, VerticalParams};
use hvfl_core::*;

fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rows: Vec<usize> = (0..n).collect();
    let mut rng = RngStream::new(seed, 10);
    rng.shuffle(&mut rows);
    let n_test = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut test: Vec<usize> = rows[..n_test].to_vec();
    let mut train: Vec<usize> = rows[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

#[test]
fn widely_separated_clusters_are_learned_to_high_accuracy() {
    // cluster_sep = 100 makes the classes trivially separable; a trained
    // logistic model must exceed 99% train accuracy.
    let data = generate_classification(200, 6, 3, 100.0, 8);
    let all: Vec<usize> = (0..200).collect();
    let spec = ModelSpec::for_task(
        ModelKind::Logistic,
        &TaskKind::Multiclass { n_classes: 3 },
        6,
        0,
    )
    .unwrap();
    let mut rng = RngStream::new(8, 11);
    let topo = build_topology(
        &data,
        &all,
        1,
        0,
        HorizontalParams {
            dirichlet_beta: 1.0,
            min_per_device: 1,
        },
        VerticalParams {
            overlap_fraction: 0.0,
        },
        &spec,
        0.5,
        &mut rng,
    )
    .unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.1,
        t_local: 20,
        rounds: 5,
        alpha: 0.0,
        optimizer: Optimizer::adam_default(),
        ..TrainConfig::default()
    };
    let fed = Federation::new(&data, &topo, spec, cfg, all.clone(), all.clone()).unwrap();
    let history = fed.run(8).unwrap();
    let accuracy = history.records.last().unwrap().test_accuracy.unwrap();
    assert!(accuracy > 0.99, "train accuracy {accuracy}");
}

#[test]
fn bound_anchors_at_the_initial_gap() {
    // At t = 0 the measured gap equals the initial-gap constant, and with
    // sigma = 0 the bound meets it with equality.
    let data = generate_regression(100, 5, 0.4, 21);
    let (train, test) = split(100, 0.2, 21);
    let spec = ModelSpec::for_task(ModelKind::RidgeLinear, &TaskKind::Regression, 5, 0).unwrap();
    let alpha = 0.1;
    let mut rng = RngStream::new(21, 11);
    let topo = build_topology(
        &data,
        &train,
        2,
        1,
        HorizontalParams {
            dirichlet_beta: 0.5,
            min_per_device: 2,
        },
        VerticalParams {
            overlap_fraction: 0.0,
        },
        &spec,
        0.5,
        &mut rng,
    )
    .unwrap();
    let initial_objective = ShardObjective::full(&data, spec, train.clone(), alpha)
        .loss_report(&ModelParams::zeros(spec))
        .unwrap()
        .total;
    let est =
        ConvergenceEstimates::analytic_ridge(&data, &train, alpha, initial_objective).unwrap();
    let lr = 0.5 / est.lipschitz;
    let cfg = TrainConfig {
        learning_rate: lr,
        rounds: 20,
        alpha,
        ..TrainConfig::default()
    };
    let fed = Federation::new(&data, &topo, spec, cfg, train, test).unwrap();
    let history = fed.run(21).unwrap();
    // sigma left at zero: the bound at t = 0 equals the gap bit-exactly.
    let report = bound_vs_run(&history, &est, lr, BoundForm::GeometricSum).unwrap();
    assert_eq!(report.rows[0].empirical_gap, est.initial_gap);
    assert_eq!(report.rows[0].bound, est.initial_gap);
    assert!(!report.rows[0].violated);
}

#[test]
fn near_iid_horizontal_run_stays_inside_variance_free_envelope() {
    // Four horizontal devices with near-uniform shards: the measured
    // dispersion is tiny and the run tracks the factor^t * theta envelope.
    let data = generate_regression(400, 6, 0.3, 33);
    let (train, test) = split(400, 0.2, 33);
    let spec = ModelSpec::for_task(ModelKind::RidgeLinear, &TaskKind::Regression, 6, 0).unwrap();
    let alpha = 0.1;
    let mut rng = RngStream::new(33, 11);
    let topo = build_topology(
        &data,
        &train,
        4,
        0,
        HorizontalParams {
            dirichlet_beta: 10_000.0,
            min_per_device: 2,
        },
        VerticalParams {
            overlap_fraction: 0.0,
        },
        &spec,
        0.5,
        &mut rng,
    )
    .unwrap();
    let initial_objective = ShardObjective::full(&data, spec, train.clone(), alpha)
        .loss_report(&ModelParams::zeros(spec))
        .unwrap()
        .total;
    let est =
        ConvergenceEstimates::analytic_ridge(&data, &train, alpha, initial_objective).unwrap();
    let lr = 0.5 / est.lipschitz;
    // 60 rounds keep the envelope above the float measurement floor of
    // the gap (~eps * F*); past that the comparison is meaningless.
    let cfg = TrainConfig {
        learning_rate: lr,
        rounds: 60,
        alpha,
        ..TrainConfig::default()
    };
    let fed = Federation::new(&data, &topo, spec, cfg, train, test).unwrap();
    let history = fed.run(33).unwrap();
    // Dominance against the variance-free envelope: B(t) = factor^t * theta.
    let zero_sigma = est.clone();
    let report = bound_vs_run(&history, &zero_sigma, lr, BoundForm::GeometricSum).unwrap();
    assert_eq!(
        report.n_violations, 0,
        "gap exceeded the variance-free envelope"
    );
    // The measured dispersion stays below the gradient scale of the
    // problem (shards are near-identical in distribution).
    let sigma = history.max_sigma();
    let initial_grad = history.records[0].grad_norm_broadcast;
    assert!(
        sigma < initial_grad,
        "sigma {sigma} vs initial gradient norm {initial_grad}"
    );
}

#[test]
fn model_params_json_round_trip() {
    let spec =
        ModelSpec::for_task(ModelKind::Mlp1, &TaskKind::Multiclass { n_classes: 3 }, 4, 5)
            .unwrap();
    let mut rng = RngStream::new(77, 0);
    let params = ModelParams::from_theta(spec, rng.gaussian(spec.dim())).unwrap();
    let text = params.to_json();
    assert!(text.contains("mlp1"));
    let back = ModelParams::from_json(&text).unwrap();
    assert_eq!(params, back);
}
