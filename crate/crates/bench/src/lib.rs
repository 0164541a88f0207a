//! Shared builders for the criterion microbenchmarks.

use graphtrack_core::dynamics::{NoiseProcess, StateSpaceModel};
use graphtrack_core::filters::classic::SeparableStructure;
use graphtrack_core::graph::random_regular_graph;
use graphtrack_core::spectral::{filter_matrix, FrequencyFilter, SpectralBasis};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Linear graph-filter dynamics with h = 3x over a random regular graph:
/// the regime where the graph-filter gain is exact, used to compare the
/// filters at equal estimation accuracy.
pub fn separable_model(n: usize, degree: usize, seed: u64) -> (StateSpaceModel, SeparableStructure) {
    let graph = random_regular_graph(n, degree.min(n - 1), seed).expect("benchmark graph");
    let basis = Arc::new(SpectralBasis::from_graph(&graph).expect("benchmark basis"));
    let filt = FrequencyFilter::for_basis(&basis, |l| 0.9 / (1.0 + l));
    let f_mat = Arc::new(filter_matrix(&basis, &filt));
    let f_jac = f_mat.clone();
    let q2 = 1e-3;
    let r2 = 0.1;
    let structure = SeparableStructure {
        f_response: filt.response().clone(),
        h_response: DVector::from_element(n, 3.0),
        q_diag: DVector::from_element(n, q2),
        r_diag: DVector::from_element(n, r2),
    };
    let model = StateSpaceModel::new(
        basis,
        Arc::new(move |_, x: &DVector<f64>| &*f_mat * x),
        Arc::new(|_, x: &DVector<f64>| x * 3.0),
        Arc::new(move |_, _x: &DVector<f64>| (*f_jac).clone()),
        Arc::new(|_, x: &DVector<f64>| DMatrix::identity(x.len(), x.len()) * 3.0),
        NoiseProcess::gaussian(q2),
        NoiseProcess::gaussian(r2),
    );
    (model, structure)
}
