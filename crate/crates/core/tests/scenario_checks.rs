//! Scenario-level checks: analytic Jacobians against finite differences,
//! the power-flow measurement against a dense oracle, and mismatch
//! injection semantics.

use graphtrack_core::dataset::DatasetMetadata;
use graphtrack_core::dynamics::{
    generate_dataset, numerical_jacobian, NoiseProcess, StateSpaceModel,
};
use graphtrack_core::graph::random_regular_graph;
use graphtrack_core::scenarios::{
    apply_mismatch, build_system, psse_exp_model, psse_gauss_model, psse_jacobian,
    psse_measurement, scenario1, scenario2, scenario2_with_rate, MismatchSpec, PowerCase,
    ScenarioId,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noises() -> (NoiseProcess, NoiseProcess) {
    (NoiseProcess::gaussian(1e-3), NoiseProcess::gaussian(0.1))
}

fn check_jacobians(model: &StateSpaceModel, points: usize, seed: u64, span: f64) {
    let n = model.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in 0..points {
        let x = DVector::from_fn(n, |_, _| rng.random_range(-span..span));
        let fd_f = numerical_jacobian(|v| (model.f)(1, v), &x, 1e-6).unwrap();
        let an_f = (model.jac_f)(1, &x);
        let scale_f = an_f.amax().max(1.0);
        assert!(
            (an_f - fd_f).amax() < 1e-5 * scale_f,
            "f Jacobian mismatch at probe {p}"
        );
        let fd_h = numerical_jacobian(|v| (model.h)(1, v), &x, 1e-6).unwrap();
        let an_h = (model.jac_h)(1, &x);
        let scale_h = an_h.amax().max(1.0);
        assert!(
            (an_h - fd_h).amax() < 1e-5 * scale_h,
            "h Jacobian mismatch at probe {p}"
        );
    }
}

#[test]
fn scenario1_values_and_jacobians() {
    let graph = random_regular_graph(10, 4, 1).unwrap();
    let (q, r) = noises();
    let model = scenario1(&graph, q, r).unwrap();
    // f(0) = sin(0) + cos(0) = 1 per coordinate.
    let f0 = (model.f)(1, &DVector::zeros(10));
    for i in 0..10 {
        assert!((f0[i] - 1.0).abs() < 1e-15);
    }
    // Ĥ ≡ 3I.
    let h_jac = (model.jac_h)(1, &DVector::from_element(10, 0.37));
    assert!((h_jac - DMatrix::identity(10, 10) * 3.0).amax() < 1e-15);
    check_jacobians(&model, 100, 5, 2.0);
}

#[test]
fn scenario2_values_and_jacobians() {
    let graph = random_regular_graph(9, 6, 2).unwrap();
    let (q, r) = noises();
    let model = scenario2(&graph, q, r).unwrap();
    // At x = −30·1 the sine argument vanishes, so f = x.
    let x = DVector::from_element(9, -30.0);
    assert!(((model.f)(1, &x) - &x).amax() < 1e-12);
    // h(0) = 0.
    assert!((model.h)(1, &DVector::zeros(9)).amax() < 1e-15);
    check_jacobians(&model, 100, 6, 1.5);
}

#[test]
fn psse_flat_phase_and_antisymmetry() {
    let case = PowerCase::ieee14();
    // Equal phases: every cosine is 1, every sine 0, so [h]_i is the row sum
    // of G over incident lines.
    let g = case.conductance();
    let flat = psse_measurement(&case, &DVector::from_element(14, 0.3));
    for i in 0..14 {
        assert!((flat[i] - g.row(i).sum()).abs() < 1e-12);
    }
    // The susceptance (sine) contributions cancel pairwise over the network:
    // Σ_i h_i equals Σ_i Σ_j G_ij cos(Δ_ij) for any phase vector.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DVector::from_fn(14, |_, _| rng.random_range(-0.5..0.5));
    let h = psse_measurement(&case, &x);
    let mut cos_total = 0.0;
    for &(i, j, gv, _) in case.lines() {
        cos_total += 2.0 * gv * (x[i] - x[j]).cos();
    }
    assert!((h.sum() - cos_total).abs() < 1e-10);
}

#[test]
fn psse_measurement_matches_dense_matrix_oracle() {
    let case = PowerCase::ieee14();
    let g = case.conductance();
    let b = case.susceptance();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let x = DVector::from_fn(14, |_, _| rng.random_range(-0.3..0.3));
        let sparse = psse_measurement(&case, &x);
        // Dense evaluation straight from the formula over all (i, j).
        let mut dense = DVector::zeros(14);
        for i in 0..14 {
            for j in 0..14 {
                let d: f64 = x[i] - x[j];
                dense[i] += g[(i, j)] * d.cos() + b[(i, j)] * d.sin();
            }
        }
        assert!((sparse - dense).amax() < 1e-10);
    }
}

#[test]
fn psse_jacobian_fd_and_sparsity() {
    let case = PowerCase::ieee14();
    let graph = case.graph().unwrap();
    let w = graph.adjacency();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let x = DVector::from_fn(14, |_, _| rng.random_range(-0.4..0.4));
        let analytic = psse_jacobian(&case, &x);
        let fd = numerical_jacobian(|v| psse_measurement(&case, v), &x, 1e-6).unwrap();
        assert!((&analytic - fd).amax() < 1e-6);
        for i in 0..14 {
            for j in 0..14 {
                if i != j && w[(i, j)] == 0.0 {
                    assert_eq!(analytic[(i, j)], 0.0);
                }
            }
        }
    }
    // At x = 0 every off-diagonal entry is −B_ij.
    let at_zero = psse_jacobian(&case, &DVector::zeros(14));
    let b = case.susceptance();
    for &(i, j, _, _) in case.lines() {
        assert!((at_zero[(i, j)] + b[(i, j)]).abs() < 1e-14);
        assert!((at_zero[(j, i)] + b[(j, i)]).abs() < 1e-14);
    }
}

#[test]
fn psse_models_values_and_jacobians() {
    let case = PowerCase::ieee14();
    let (q, r) = noises();
    let gauss = psse_gauss_model(&case, q, r).unwrap();
    let f0 = (gauss.f)(1, &DVector::zeros(14));
    for i in 0..14 {
        assert!((f0[i] - 1.0).abs() < 1e-15);
    }
    check_jacobians(&gauss, 30, 8, 0.4);

    let exp = psse_exp_model(&case, q, NoiseProcess::exponential(5.0)).unwrap();
    // Affine drift: exact identity Jacobian everywhere.
    let jac = (exp.jac_f)(1, &DVector::from_element(14, 0.2));
    assert_eq!(jac, DMatrix::identity(14, 14));
    check_jacobians(&exp, 30, 9, 0.4);
}

#[test]
fn mismatch_drop_zero_edges_is_identity() {
    let graph = random_regular_graph(10, 4, 4).unwrap();
    let (q, r) = noises();
    let system =
        build_system(ScenarioId::Scenario1, Some(graph.clone()), None, q, r).unwrap();
    let same = apply_mismatch(&system, &MismatchSpec::DropEdges { k: 0, seed: 1 }).unwrap();
    assert_eq!(same.graph, graph);
}

#[test]
fn mismatch_rate_change_reproduces_slower_drift() {
    let graph = random_regular_graph(9, 6, 5).unwrap();
    let (q, r) = noises();
    let system = build_system(ScenarioId::Scenario2, Some(graph.clone()), None, q, r).unwrap();
    let wrong = apply_mismatch(
        &system,
        &MismatchSpec::EvolutionRate { true_rate: 10.0, assumed_rate: 9.0 },
    )
    .unwrap();
    let direct = scenario2_with_rate(&graph, 9.0, q, r).unwrap();
    let x = DVector::from_fn(9, |i, _| 0.3 * i as f64 - 1.0);
    assert!(((wrong.model.f)(1, &x) - (direct.f)(1, &x)).amax() < 1e-15);
    // And differs from the true-rate drift.
    assert!(((wrong.model.f)(1, &x) - (system.model.f)(1, &x)).amax() > 1e-6);
}

#[test]
fn dropping_one_edge_changes_two_adjacency_and_four_laplacian_entries() {
    let graph = random_regular_graph(10, 4, 6).unwrap();
    let (q, r) = noises();
    let system = build_system(ScenarioId::Scenario1, Some(graph.clone()), None, q, r).unwrap();
    let dropped = apply_mismatch(&system, &MismatchSpec::DropEdges { k: 1, seed: 3 }).unwrap();
    let da = graph.adjacency() - dropped.graph.adjacency();
    let dl = graph.laplacian() - dropped.graph.laplacian();
    assert_eq!(da.iter().filter(|&&x| x != 0.0).count(), 2);
    assert_eq!(dl.iter().filter(|&&x| x != 0.0).count(), 4);
}

#[test]
fn dropping_bridge_edges_is_rejected() {
    // Every edge of a path graph is a bridge; no sampling can keep the graph
    // connected.
    let graph =
        graphtrack_core::graph::Graph::unweighted(5, (1..5).map(|i| (i - 1, i)).collect())
            .unwrap();
    let (q, r) = noises();
    let system = build_system(ScenarioId::Scenario1, Some(graph), None, q, r).unwrap();
    assert!(matches!(
        apply_mismatch(&system, &MismatchSpec::DropEdges { k: 1, seed: 2 }),
        Err(graphtrack_core::error::Error::DisconnectRetryExceeded { .. })
    ));
}

#[test]
fn psse_mismatch_zeroes_dropped_lines() {
    let case = PowerCase::ieee14();
    let (q, r) = noises();
    let system = build_system(ScenarioId::PsseGauss, None, Some(case.clone()), q, r).unwrap();
    let dropped = apply_mismatch(&system, &MismatchSpec::DropEdges { k: 3, seed: 11 }).unwrap();
    let new_case = dropped.power_case.as_ref().unwrap();
    assert_eq!(new_case.lines().len(), case.lines().len() - 3);
    assert!(dropped.graph.is_connected());
    // The susceptance entries of removed lines are gone.
    let b_old = case.susceptance();
    let b_new = new_case.susceptance();
    let removed = b_old.iter().zip(b_new.iter()).filter(|(o, n)| o != n).count();
    assert_eq!(removed, 6);
}

#[test]
fn mismatch_never_touches_data_generation() {
    let graph = random_regular_graph(10, 4, 7).unwrap();
    let (q, r) = noises();
    let system = build_system(ScenarioId::Scenario1, Some(graph), None, q, r).unwrap();
    let meta = DatasetMetadata::new("scenario1", &system.model, system.graph.content_hash(), 42);
    let before = generate_dataset(&system.model, 3, 20, 42, meta.clone()).unwrap();
    let _mismatched = apply_mismatch(&system, &MismatchSpec::DropEdges { k: 1, seed: 9 }).unwrap();
    let after = generate_dataset(&system.model, 3, 20, 42, meta).unwrap();
    assert_eq!(before.content_hash(), after.content_hash());
}

#[test]
fn ieee14_case_shape() {
    let case = PowerCase::ieee14();
    assert_eq!(case.n(), 14);
    assert_eq!(case.lines().len(), 20);
    let graph = case.graph().unwrap();
    assert!(graph.is_connected());
    // All transmission lines are inductive: negative susceptance.
    for &(_, _, g, b) in case.lines() {
        assert!(b < 0.0);
        assert!(g >= 0.0);
    }
}
