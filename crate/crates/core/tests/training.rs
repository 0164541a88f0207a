//! Learned-filter integration tests: inference oracles, the loss contract,
//! training behavior, evaluation, and the variance grid search.

use graphtrack_core::dataset::{Dataset, DatasetMetadata, Trajectory};
use graphtrack_core::dynamics::{generate_dataset, simulate_trajectory, NoiseProcess, StateSpaceModel};
use graphtrack_core::filters::classic::to_frequency_model;
use graphtrack_core::filters::gsp::{gsp_ekf_step, init_state as gsp_init_state, GspConfig};
use graphtrack_core::graph::{random_regular_graph, Graph};
use graphtrack_core::knet::{
    evaluate, grid_search_variance, knet_init_state, knet_run, knet_step_with_gain,
    loss, train, Estimator, OptimizerKind, TrainConfig,
};
use graphtrack_core::neural::{Checkpoint, GainNetwork};
use graphtrack_core::scenarios::scenario1;
use graphtrack_core::spectral::SpectralBasis;
use graphtrack_core::util::to_db;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

fn identity_model(n: usize, q2: f64, r2: f64) -> StateSpaceModel {
    // Edgeless graph: V = I, so the exact-zero contracts hold bit for bit.
    let graph = Graph::unweighted(n, vec![]).unwrap();
    let basis = Arc::new(SpectralBasis::from_graph(&graph).unwrap());
    StateSpaceModel::new(
        basis,
        Arc::new(|_, x: &DVector<f64>| x.clone()),
        Arc::new(|_, x: &DVector<f64>| x.clone()),
        Arc::new(|_, x: &DVector<f64>| DMatrix::identity(x.len(), x.len())),
        Arc::new(|_, x: &DVector<f64>| DMatrix::identity(x.len(), x.len())),
        NoiseProcess::gaussian(q2),
        NoiseProcess::gaussian(r2),
    )
}

fn scenario1_dataset(
    n: usize,
    d: usize,
    t: usize,
    seed: u64,
) -> (StateSpaceModel, Dataset) {
    let graph = random_regular_graph(n, 4, 50).unwrap();
    let model = scenario1(&graph, NoiseProcess::gaussian(1e-3), NoiseProcess::gaussian(0.1))
        .unwrap();
    let meta = DatasetMetadata::new("scenario1", &model, graph.content_hash(), seed);
    let dataset = generate_dataset(&model, d, t, seed, meta).unwrap();
    (model, dataset)
}

#[test]
fn zero_network_is_open_loop_prediction() {
    let model = identity_model(4, 0.01, 0.1);
    let freq = to_frequency_model(&model);
    let net = GainNetwork::zeros(4);
    let traj = simulate_trajectory(&model, &model.x0, 10, 3).unwrap();

    let estimates = knet_run(&freq, &net, &traj.observations).unwrap();
    // Zero gain never corrects: the estimate is the open-loop propagation of
    // x0, which for the identity drift stays exactly x0.
    for est in estimates {
        assert!((est - &model.x0).amax() < 1e-12);
    }
}

#[test]
fn injected_gsp_gain_reproduces_gsp_ekf() {
    let (model, _) = scenario1_dataset(6, 1, 1, 1);
    let freq = to_frequency_model(&model);
    let traj = simulate_trajectory(&model, &model.x0, 60, 8).unwrap();
    let v = model.basis.eigvecs();

    let config = GspConfig::default();
    let mut gsp_state = gsp_init_state(&freq, &config);
    let mut knet_state = knet_init_state(&freq);
    for y in &traj.observations {
        let y_tilde = v.tr_mul(y);
        let gsp_out = gsp_ekf_step(&freq, &config, &gsp_state, &y_tilde).unwrap();
        let (next, est, _) =
            knet_step_with_gain(&freq, &knet_state, &y_tilde, &gsp_out.gain.diag).unwrap();
        assert!((est - &gsp_out.estimate_vertex).amax() < 1e-10);
        gsp_state = gsp_out.state;
        knet_state = next;
    }
}

#[test]
fn unit_gain_fully_corrects_identity_model() {
    let model = identity_model(3, 0.0, 0.0);
    let freq = to_frequency_model(&model);
    let state = knet_init_state(&freq);
    let y_tilde = nalgebra::dvector![0.7, -0.2, 1.1];
    let gain = DVector::from_element(3, 1.0);
    let (_, _, _) = knet_step_with_gain(&freq, &state, &y_tilde, &gain).unwrap();
    // In GFT coordinates the posterior equals the observation exactly.
    let (next, _, _) = knet_step_with_gain(&freq, &state, &y_tilde, &gain).unwrap();
    assert!((next.x_post - y_tilde).amax() < 1e-14);
}

#[test]
fn knet_step_matches_batched_unroll() {
    let (model, _) = scenario1_dataset(5, 1, 1, 2);
    let freq = to_frequency_model(&model);
    let net = GainNetwork::init(5, 7);
    let traj = simulate_trajectory(&model, &model.x0, 25, 4).unwrap();

    let stepwise = knet_run(&freq, &net, &traj.observations).unwrap();
    let per_traj_mse: f64 = stepwise
        .iter()
        .zip(&traj.states)
        .map(|(e, x)| (e - x).norm_squared())
        .sum::<f64>()
        / (25.0 * 5.0);
    let batched = graphtrack_core::neural::unroll_mse(&freq, &net, &[&traj]).unwrap();
    assert!((per_traj_mse - batched.mse).abs() < 1e-12);
}

#[test]
fn loss_contract() {
    // Perfect estimates, no regularization: exactly zero.
    let model = identity_model(3, 0.0, 0.0).with_x0(DVector::from_element(3, 0.4));
    let freq = to_frequency_model(&model);
    let traj = simulate_trajectory(&model, &model.x0, 6, 1).unwrap();
    let zero_net = GainNetwork::zeros(3);
    assert_eq!(loss(&freq, &zero_net, &[&traj], 0.0).unwrap(), 0.0);

    // Zero estimates against all-ones states: per-coordinate mean is 1.
    let drift_free = identity_model(3, 0.0, 0.0);
    let freq0 = to_frequency_model(&drift_free);
    let ones_traj = Trajectory {
        x0: DVector::zeros(3),
        states: vec![DVector::from_element(3, 1.0); 4],
        observations: vec![DVector::zeros(3); 4],
        seed: 0,
    };
    let l = loss(&freq0, &zero_net, &[&ones_traj], 0.0).unwrap();
    assert!((l - 1.0).abs() < 1e-12);

    // Hand-computed two-trajectory case, T = 2, N = 2, zero gain, identity
    // drift from x0 = 0: estimates are identically zero, so the loss is the
    // mean over trajectories of the time-mean of ‖x_t‖²/2.
    let t1 = Trajectory {
        x0: DVector::zeros(2),
        states: vec![nalgebra::dvector![1.0, 2.0], nalgebra::dvector![3.0, 4.0]],
        observations: vec![DVector::zeros(2); 2],
        seed: 0,
    };
    let t2 = Trajectory {
        x0: DVector::zeros(2),
        states: vec![nalgebra::dvector![0.5, -0.5], nalgebra::dvector![1.5, 0.0]],
        observations: vec![DVector::zeros(2); 2],
        seed: 0,
    };
    let drift2 = identity_model(2, 0.0, 0.0);
    let freq2 = to_frequency_model(&drift2);
    let zero2 = GainNetwork::zeros(2);
    // Trajectory 1: ((1+4)/2 + (9+16)/2)/2 = 7.5; trajectory 2:
    // ((0.25+0.25)/2 + (2.25+0)/2)/2 = 0.6875; mean = 4.09375.
    let expected = 4.09375;
    let l2 = loss(&freq2, &zero2, &[&t1, &t2], 0.0).unwrap();
    assert!((l2 - expected).abs() < 1e-12, "loss {l2} vs hand value {expected}");
    // The regularizer adds l2·‖θ‖² (zero parameters here).
    assert_eq!(loss(&freq2, &zero2, &[&t1, &t2], 10.0).unwrap(), expected);
}

#[test]
fn evaluate_zero_error_reports_mse_zero_sentinel() {
    let model = identity_model(3, 0.0, 0.0).with_x0(DVector::from_element(3, 0.2));
    let freq = to_frequency_model(&model);
    let meta = DatasetMetadata::for_tests("ident", &model, 5);
    let dataset = generate_dataset(&model, 3, 8, 5, meta).unwrap();
    let net = GainNetwork::zeros(3);
    let report = evaluate(
        &Estimator::GspKalmanNet { model: &freq, net: &net, lineage: None },
        &dataset,
    )
    .unwrap();
    assert_eq!(report.mse_linear, 0.0);
    assert_eq!(report.mse_db, None);
}

#[test]
fn evaluate_matches_scalar_kf_oracle_on_linear_gaussian() {
    // Identity graph filter dynamics: EKF == KF; the empirical MSE over a
    // long run must match N independent scalar Kalman filters within 2%.
    let model = identity_model(4, 0.02, 0.5);
    let mut scaled = model.clone();
    scaled.f = Arc::new(|_, x: &DVector<f64>| x * 0.9);
    scaled.jac_f = Arc::new(|_, x: &DVector<f64>| DMatrix::identity(x.len(), x.len()) * 0.9);
    let meta = DatasetMetadata::for_tests("lin", &scaled, 9);
    let dataset = generate_dataset(&scaled, 2, 10_000, 9, meta).unwrap();

    let report = evaluate(&Estimator::Ekf(&scaled), &dataset).unwrap();

    // Scalar steady-state oracle, implemented from the Riccati recursion.
    let mut sigma = 1.0f64;
    let mut mse_oracle = 0.0;
    let (q2, r2) = (0.02, 0.5);
    for _ in 0..10_000 {
        let s_pred = 0.81 * sigma + q2;
        let k = s_pred / (s_pred + r2);
        sigma = (1.0 - k) * (1.0 - k) * s_pred + k * k * r2;
        mse_oracle += sigma;
    }
    mse_oracle /= 10_000.0;
    assert!(
        (report.mse_linear - mse_oracle).abs() < 0.02 * mse_oracle,
        "empirical {} vs oracle {}",
        report.mse_linear,
        mse_oracle
    );
}

#[test]
fn training_is_deterministic_and_shrinks_under_heavy_regularization() {
    let (model, dataset) = scenario1_dataset(6, 12, 16, 33);
    let freq = to_frequency_model(&model);

    let config = TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    let a = train(&dataset, &freq, &config).unwrap();
    let b = train(&dataset, &freq, &config).unwrap();
    assert_eq!(a.net, b.net);
    for (ea, eb) in a.curve.iter().zip(&b.curve) {
        assert_eq!(ea.train_loss, eb.train_loss);
        assert_eq!(ea.val_mse, eb.val_mse);
    }

    // λ_reg → ∞: the regularizer dominates and the parameter norm shrinks
    // monotonically epoch over epoch.
    let heavy = TrainConfig { l2: 1e6, epochs: 4, batch_size: 4, seed: 5, ..TrainConfig::default() };
    let out = train(&dataset, &freq, &heavy).unwrap();
    let init_norm = GainNetwork::init(6, graphtrack_core::util::derive_seed(5, 1)).norm();
    let mut prev = init_norm;
    for stats in &out.curve {
        assert!(
            stats.param_norm < prev,
            "epoch {}: ‖θ‖ {} did not shrink from {prev}",
            stats.epoch,
            stats.param_norm
        );
        prev = stats.param_norm;
    }
}

#[test]
fn loss_decreases_early_for_most_seeds() {
    let (model, dataset) = scenario1_dataset(10, 32, 30, 77);
    let freq = to_frequency_model(&model);
    let mut decreased = 0;
    for seed in 0..10 {
        let config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed,
            lr: 2e-3,
            bptt_window: Some(4),
            ..TrainConfig::default()
        };
        let out = train(&dataset, &freq, &config).unwrap();
        if out.curve[2].train_loss < out.curve[0].train_loss {
            decreased += 1;
        }
    }
    assert!(decreased >= 9, "loss decreased for only {decreased}/10 seeds");
}

#[test]
fn full_information_training_approaches_gsp_ekf() {
    let (model, dataset) = scenario1_dataset(10, 120, 60, 21);
    let freq = to_frequency_model(&model);
    let config = TrainConfig {
        epochs: 8,
        batch_size: 8,
        seed: 3,
        lr: 2e-3,
        bptt_window: Some(4),
        ..TrainConfig::default()
    };
    let out = train(&dataset, &freq, &config).unwrap();

    // Fresh test set, disjoint seed.
    let meta = DatasetMetadata::new("scenario1", &model, dataset.metadata.graph_hash.clone(), 900);
    let test = generate_dataset(&model, 40, 60, 900, meta).unwrap();
    let knet_report = evaluate(
        &Estimator::GspKalmanNet { model: &freq, net: &out.net, lineage: Some(&out.lineage) },
        &test,
    )
    .unwrap();
    let gsp_report = evaluate(
        &Estimator::GspEkf { model: &freq, config: GspConfig::default() },
        &test,
    )
    .unwrap();
    let knet_db = to_db(knet_report.mse_linear).unwrap();
    let gsp_db = to_db(gsp_report.mse_linear).unwrap();
    assert!(
        knet_db <= gsp_db + 1.0,
        "knet {knet_db:.2} dB vs gsp-ekf {gsp_db:.2} dB"
    );
}

#[test]
fn lineage_violation_detected() {
    let (model, dataset) = scenario1_dataset(6, 10, 10, 60);
    let freq = to_frequency_model(&model);
    let config = TrainConfig { epochs: 1, batch_size: 4, seed: 1, ..TrainConfig::default() };
    let out = train(&dataset, &freq, &config).unwrap();
    // Evaluating on the training set must be rejected.
    let err = evaluate(
        &Estimator::GspKalmanNet { model: &freq, net: &out.net, lineage: Some(&out.lineage) },
        &dataset,
    )
    .unwrap_err();
    assert!(matches!(err, graphtrack_core::error::Error::LineageViolation { .. }));
}

#[test]
fn checkpoint_roundtrip_preserves_evaluation() {
    let (model, dataset) = scenario1_dataset(6, 8, 10, 61);
    let freq = to_frequency_model(&model);
    let config = TrainConfig { epochs: 1, batch_size: 4, seed: 2, ..TrainConfig::default() };
    let out = train(&dataset, &freq, &config).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    Checkpoint::new(out.net.clone(), out.lineage.clone()).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.net, out.net);

    let meta = DatasetMetadata::new("scenario1", &model, dataset.metadata.graph_hash.clone(), 7070);
    let test = generate_dataset(&model, 4, 10, 7070, meta).unwrap();
    let a = evaluate(
        &Estimator::GspKalmanNet { model: &freq, net: &out.net, lineage: None },
        &test,
    )
    .unwrap();
    let b = evaluate(
        &Estimator::GspKalmanNet { model: &freq, net: &loaded.net, lineage: Some(&loaded.lineage) },
        &test,
    )
    .unwrap();
    assert_eq!(a.mse_linear, b.mse_linear);
}

#[test]
fn grid_search_recovers_true_variances() {
    // Linear Gaussian system: the filter gain depends on the q²/r² ratio, so
    // a grid over r² at the true q² has a unique optimum at the true point.
    let mut model = identity_model(4, 0.02, 0.5);
    model.f = Arc::new(|_, x: &DVector<f64>| x * 0.9);
    model.jac_f = Arc::new(|_, x: &DVector<f64>| DMatrix::identity(x.len(), x.len()) * 0.9);
    let meta = DatasetMetadata::for_tests("lin", &model, 62);
    let dataset = generate_dataset(&model, 12, 300, 62, meta).unwrap();

    let grid: Vec<(f64, f64)> = vec![
        (0.02, 0.005),
        (0.02, 0.05),
        (0.02, 0.5),
        (0.02, 5.0),
        (0.02, 50.0),
    ];
    let result = grid_search_variance(&dataset, &model, &grid).unwrap();
    // True point or at worst its immediate neighbor.
    assert!(
        (1..=3).contains(&result.best_index),
        "picked {result:?}"
    );

    // Single-point grid returns that point.
    let single = grid_search_variance(&dataset, &model, &grid[..1]).unwrap();
    assert_eq!(single.best_index, 0);
}

#[test]
fn grid_search_tie_breaks_to_lowest_index() {
    let (model, dataset) = scenario1_dataset(5, 4, 6, 63);
    let grid = vec![(1e-3, 0.1), (1e-3, 0.1), (1e-3, 0.1)];
    let result = grid_search_variance(&dataset, &model, &grid).unwrap();
    assert_eq!(result.best_index, 0);
}

#[test]
fn sgd_optimizer_takes_plain_steps() {
    let (model, dataset) = scenario1_dataset(5, 6, 8, 64);
    let freq = to_frequency_model(&model);
    let config = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 9,
        optimizer: OptimizerKind::Sgd,
        lr: 1e-4,
        ..TrainConfig::default()
    };
    let out = train(&dataset, &freq, &config).unwrap();
    assert!(out.curve.iter().all(|e| e.train_loss.is_finite()));
}

#[test]
fn normalized_features_train_and_evaluate() {
    let (model, dataset) = scenario1_dataset(5, 10, 12, 65);
    let freq = to_frequency_model(&model);
    let config = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 11,
        normalize_features: true,
        ..TrainConfig::default()
    };
    let out = train(&dataset, &freq, &config).unwrap();
    let scale = out.net.feature_scale.as_ref().expect("scale estimated");
    assert!(scale.iter().all(|&s| s >= 1e-6));
    // The buffer survives a checkpoint roundtrip.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    Checkpoint::new(out.net.clone(), out.lineage.clone()).save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap().net.feature_scale, out.net.feature_scale);
}
