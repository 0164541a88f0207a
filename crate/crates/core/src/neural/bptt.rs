//! Unrolled filter recursion: batched forward pass with recorded
//! intermediates, and backpropagation through time.
//!
//! The forward pass runs the learned-gain filter over whole trajectories
//! (columns of a batch). The backward pass differentiates the mean squared
//! estimation error with respect to every network parameter, chaining through
//! the gain, the features, both GRU hidden states, and the model's f/h maps
//! via their Jacobian providers.

use super::network::{net_backward, net_forward, Hidden, NetStepCache};
use super::params::GainNetwork;
use crate::dataset::Trajectory;
use crate::error::{Error, Result};
use crate::filters::classic::FreqModel;
use nalgebra::{DMatrix, DVector};

/// Unroll options. `bptt_window = None` backpropagates through the full
/// trajectory; `Some(w)` truncates adjoint flow at chunk boundaries of width
/// `w` (the forward pass is unaffected).
#[derive(Debug, Clone, Default)]
pub struct UnrollConfig {
    pub bptt_window: Option<usize>,
}

/// Recorded forward pass over a batch of trajectories.
pub struct UnrollTape {
    t_len: usize,
    batch: usize,
    /// Vertex-domain linearization points for f (u_t = V·post_{t−1}).
    u_points: Vec<DMatrix<f64>>,
    /// Vertex-domain linearization points for h (w_t = V·prior_t).
    w_points: Vec<DMatrix<f64>>,
    innovations: Vec<DMatrix<f64>>,
    gains: Vec<DMatrix<f64>>,
    posts: Vec<DMatrix<f64>>,
    net_caches: Vec<NetStepCache>,
    /// GFT of the ground-truth states.
    x_freq: Vec<DMatrix<f64>>,
    recorded: bool,
}

impl UnrollTape {
    /// Recorded per-step network caches (empty for unrecorded passes).
    pub fn net_caches(&self) -> &[NetStepCache] {
        &self.net_caches
    }
}

/// Loss and estimates of a forward pass.
pub struct UnrollOutput {
    /// Mean over batch and time of per-coordinate squared error.
    pub mse: f64,
    /// Per-column (per-trajectory) mean squared error.
    pub per_trajectory_mse: Vec<f64>,
}

fn stack_columns(vectors: &[&DVector<f64>]) -> DMatrix<f64> {
    let n = vectors[0].len();
    DMatrix::from_fn(n, vectors.len(), |i, c| vectors[c][i])
}

/// Applies a vertex-domain map column-by-column.
fn apply_map(
    map: &crate::dynamics::DynMap,
    t: usize,
    cols: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(cols.nrows(), cols.ncols());
    for c in 0..cols.ncols() {
        let y = map(t, &cols.column(c).clone_owned());
        out.set_column(c, &y);
    }
    out
}

/// Applies the transposed Jacobian of `jac` at per-column points to the
/// columns of `grad`: out[:,c] = J(points[:,c])ᵀ · grad[:,c].
fn apply_jac_transpose(
    jac: &crate::dynamics::DynJac,
    t: usize,
    points: &DMatrix<f64>,
    grad: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(grad.nrows(), grad.ncols());
    for c in 0..grad.ncols() {
        let j = jac(t, &points.column(c).clone_owned());
        out.set_column(c, &j.tr_mul(&grad.column(c).clone_owned()));
    }
    out
}

/// Runs the learned-gain filter forward over a batch of trajectories,
/// recording everything the backward pass needs.
pub fn unroll_forward(
    freq: &FreqModel,
    net: &GainNetwork,
    batch: &[&Trajectory],
) -> Result<(UnrollOutput, UnrollTape)> {
    run_forward(freq, net, batch, true)
}

/// Forward pass without recording; used for validation losses and evaluation.
pub fn unroll_mse(freq: &FreqModel, net: &GainNetwork, batch: &[&Trajectory]) -> Result<UnrollOutput> {
    run_forward(freq, net, batch, false).map(|(out, _)| out)
}

fn run_forward(
    freq: &FreqModel,
    net: &GainNetwork,
    batch: &[&Trajectory],
    record: bool,
) -> Result<(UnrollOutput, UnrollTape)> {
    let n = freq.n();
    let b = batch.len();
    assert!(b > 0, "empty batch");
    let t_len = batch[0].len();
    for traj in batch {
        if traj.n() != n {
            return Err(Error::ShapeMismatch {
                context: format!("trajectory has {} nodes, model has {n}", traj.n()),
            });
        }
        if traj.len() != t_len {
            return Err(Error::ShapeMismatch {
                context: "trajectories in a batch must share their length".into(),
            });
        }
    }
    if net.n() != n {
        return Err(Error::ShapeMismatch {
            context: format!("network built for N={}, model has N={n}", net.n()),
        });
    }
    let v = freq.basis().eigvecs();

    // Initial history: post₀ = post₋₁ = Vᵀx0 and prior₀ = post₀, so all
    // history-dependent features vanish at t = 1.
    let x0 = stack_columns(&batch.iter().map(|t| &t.x0).collect::<Vec<_>>());
    let post0 = v.tr_mul(&x0);
    let mut post_prev = post0.clone();
    let mut post_prev2 = post0.clone();
    let mut prior_prev = post0;
    let mut hidden = Hidden::zeros(n, b);

    let mut tape = UnrollTape {
        t_len,
        batch: b,
        u_points: Vec::new(),
        w_points: Vec::new(),
        innovations: Vec::new(),
        gains: Vec::new(),
        posts: Vec::new(),
        net_caches: Vec::new(),
        x_freq: Vec::new(),
        recorded: record,
    };
    let mut sq_err = vec![0.0f64; b];

    for step in 0..t_len {
        let t = step + 1;
        // Prediction in the graph frequency domain.
        let u = v * &post_prev;
        let prior = v.tr_mul(&apply_map(&freq.model.f, t, &u));
        let w = v * &prior;
        let y_pred = v.tr_mul(&apply_map(&freq.model.h, t, &w));

        let y = stack_columns(&batch.iter().map(|tr| &tr.observations[step]).collect::<Vec<_>>());
        let y_tilde = v.tr_mul(&y);
        let innovation = &y_tilde - &y_pred;

        // Features F1..F3, all in the frequency domain.
        let mut feat = DMatrix::zeros(3 * n, b);
        feat.view_mut((0, 0), (n, b)).copy_from(&innovation);
        feat.view_mut((n, 0), (n, b)).copy_from(&(&post_prev - &post_prev2));
        feat.view_mut((2 * n, 0), (n, b)).copy_from(&(&post_prev - &prior_prev));

        let (gain, hidden_new, cache) = net_forward(net, &feat, &hidden);
        let post = &prior + gain.component_mul(&innovation);
        if post.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteState { context: "learned-gain update".into(), step: t });
        }

        // Squared error in GFT coordinates equals the vertex-domain error by
        // orthonormality of V.
        let x_true = stack_columns(&batch.iter().map(|tr| &tr.states[step]).collect::<Vec<_>>());
        let x_tilde = v.tr_mul(&x_true);
        for c in 0..b {
            let d = post.column(c) - x_tilde.column(c);
            sq_err[c] += d.norm_squared();
        }

        if record {
            tape.u_points.push(u);
            tape.w_points.push(w);
            tape.innovations.push(innovation.clone());
            tape.gains.push(gain.clone());
            tape.posts.push(post.clone());
            tape.net_caches.push(cache);
            tape.x_freq.push(x_tilde);
        }

        prior_prev = prior;
        post_prev2 = std::mem::replace(&mut post_prev, post);
        hidden = hidden_new;
    }

    let scale = 1.0 / (t_len as f64 * n as f64);
    let per_trajectory_mse: Vec<f64> = sq_err.iter().map(|s| s * scale).collect();
    let mse = per_trajectory_mse.iter().sum::<f64>() / b as f64;
    Ok((UnrollOutput { mse, per_trajectory_mse }, tape))
}

/// Backpropagation through time over a recorded forward pass. Returns the
/// gradient of the batch-mean per-coordinate MSE (no regularization term)
/// with respect to every network parameter.
pub fn unroll_backward(
    freq: &FreqModel,
    net: &GainNetwork,
    tape: &UnrollTape,
    config: &UnrollConfig,
) -> Result<GainNetwork> {
    if !tape.recorded {
        return Err(Error::GraphNotRecorded);
    }
    let n = freq.n();
    let b = tape.batch;
    let t_len = tape.t_len;
    let v = freq.basis().eigvecs();
    let window = config.bptt_window.unwrap_or(t_len).max(1);

    let mut grads = GainNetwork::zeros(n);
    let scale = 2.0 / (b as f64 * t_len as f64 * n as f64);

    // Adjoints with respect to the frequency-domain posteriors and priors.
    // Index 0 is unused (t runs from 1).
    let mut a_post: Vec<DMatrix<f64>> = Vec::with_capacity(t_len + 1);
    let mut a_prior: Vec<DMatrix<f64>> = Vec::with_capacity(t_len + 1);
    for _ in 0..=t_len {
        a_post.push(DMatrix::zeros(n, b));
        a_prior.push(DMatrix::zeros(n, b));
    }
    // Loss terms seed every posterior adjoint.
    for t in 1..=t_len {
        a_post[t] = (&tape.posts[t - 1] - &tape.x_freq[t - 1]) * scale;
    }

    let mut dh1 = DMatrix::zeros(20 * n, b);
    let mut dh2 = DMatrix::zeros(20 * n, b);
    for t in (1..=t_len).rev() {
        // Truncated BPTT: cut all adjoint flow at chunk boundaries. The F2
        // feature reaches two steps back, so the cut also resets the
        // second-to-last slot the upper chunk wrote into.
        if t % window == 0 && t != t_len {
            dh1.fill(0.0);
            dh2.fill(0.0);
            a_post[t].copy_from(&((&tape.posts[t - 1] - &tape.x_freq[t - 1]) * scale));
            a_prior[t].fill(0.0);
            if t >= 2 {
                a_post[t - 1]
                    .copy_from(&((&tape.posts[t - 2] - &tape.x_freq[t - 2]) * scale));
            }
        }
        let idx = t - 1;
        // post_t = prior_t + gain ∘ innovation
        let a_post_t = a_post[t].clone();
        a_prior[t] += &a_post_t;
        let a_gain = a_post_t.component_mul(&tape.innovations[idx]);
        let mut a_inov = a_post_t.component_mul(&tape.gains[idx]);

        let (a_feat, dh1_prev, dh2_prev) =
            net_backward(net, &tape.net_caches[idx], &a_gain, &dh1, &dh2, &mut grads);
        dh1 = dh1_prev;
        dh2 = dh2_prev;

        // Distribute feature gradients: F1 to the innovation, F2/F3 to the
        // stored history. History entering t = 1 (and F2 at t = 2 reaching
        // post₀) is a constant of the unroll, so those pieces drop.
        a_inov += a_feat.view((0, 0), (n, b));
        let g2 = a_feat.view((n, 0), (n, b)).into_owned();
        let g3 = a_feat.view((2 * n, 0), (n, b)).into_owned();
        if t >= 2 {
            a_post[t - 1] += &g2;
            a_post[t - 1] += &g3;
            a_prior[t - 1] -= &g3;
            if t >= 3 {
                a_post[t - 2] -= &g2;
            }
        }

        // innovation = ỹ − Vᵀh(V·prior): chain through h's Jacobian.
        let a_ypred = -a_inov;
        let vg = v * &a_ypred;
        let hj = apply_jac_transpose(&freq.model.jac_h, t, &tape.w_points[idx], &vg);
        a_prior[t] += v.tr_mul(&hj);

        // prior_t = Vᵀf(V·post_{t−1}): chain through f's Jacobian.
        if t >= 2 {
            let vg = v * &a_prior[t];
            let fj = apply_jac_transpose(&freq.model.jac_f, t, &tape.u_points[idx], &vg);
            a_post[t - 1] += v.tr_mul(&fj);
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate_trajectory, NoiseProcess, StateSpaceModel};
    use crate::filters::classic::to_frequency_model;
    use crate::graph::random_regular_graph;
    use crate::spectral::SpectralBasis;
    use std::sync::Arc;

    fn tiny_model(n: usize) -> StateSpaceModel {
        let g = random_regular_graph(n, 2, 5).unwrap();
        let basis = Arc::new(SpectralBasis::from_graph(&g).unwrap());
        StateSpaceModel::new(
            basis,
            Arc::new(|_, x: &DVector<f64>| x.map(|v| 0.9 * v + 0.1 * v.sin())),
            Arc::new(|_, x: &DVector<f64>| x.map(|v| v + 0.2 * v.cos())),
            Arc::new(|_, x: &DVector<f64>| {
                DMatrix::from_diagonal(&x.map(|v| 0.9 + 0.1 * v.cos()))
            }),
            Arc::new(|_, x: &DVector<f64>| {
                DMatrix::from_diagonal(&x.map(|v| 1.0 - 0.2 * v.sin()))
            }),
            NoiseProcess::gaussian(0.05),
            NoiseProcess::gaussian(0.1),
        )
    }

    /// Exhaustive finite-difference check of every parameter partial on a
    /// tiny unroll (the pre-build gate for the training path).
    #[test]
    fn every_partial_matches_finite_differences() {
        let n = 3;
        let model = tiny_model(n);
        let freq = to_frequency_model(&model);
        let trajs: Vec<_> = (0..2)
            .map(|i| simulate_trajectory(&model, &model.x0, 3, 10 + i).unwrap())
            .collect();
        let batch: Vec<&Trajectory> = trajs.iter().collect();
        let net = GainNetwork::init(n, 1);

        let (_, tape) = unroll_forward(&freq, &net, &batch).unwrap();
        let grads = unroll_backward(&freq, &net, &tape, &UnrollConfig::default()).unwrap();
        let flat_grad = grads.to_flat();
        let flat = net.to_flat();

        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..flat.len() {
            let mut fp = flat.clone();
            fp[i] += eps;
            let mut fm = flat.clone();
            fm[i] -= eps;
            let np = GainNetwork::from_flat(n, &fp).unwrap();
            let nm = GainNetwork::from_flat(n, &fm).unwrap();
            let lp = unroll_mse(&freq, &np, &batch).unwrap().mse;
            let lm = unroll_mse(&freq, &nm, &batch).unwrap().mse;
            let fd = (lp - lm) / (2.0 * eps);
            // Floor at 1e-6: central differences resolve partials of a
            // unit-scale loss only down to ~1e-12 absolute.
            let rel = (flat_grad[i] - fd).abs() / fd.abs().max(flat_grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(
                rel < 1e-4,
                "partial {i}: analytic {} vs fd {} (rel {rel:.3e})",
                flat_grad[i],
                fd
            );
        }
        assert!(worst < 1e-4, "worst relative error {worst:.3e}");
    }

    #[test]
    fn zero_loss_trajectory_has_zero_gradient() {
        // Noiseless identity dynamics tracked from the true x0: innovation
        // and error are identically zero, so every partial vanishes. The
        // edgeless graph has V = I, keeping the zeros exact.
        let n = 3;
        let g = crate::graph::Graph::unweighted(n, vec![]).unwrap();
        let basis = Arc::new(SpectralBasis::from_graph(&g).unwrap());
        let model = StateSpaceModel::new(
            basis,
            Arc::new(|_, x: &DVector<f64>| x.clone()),
            Arc::new(|_, x: &DVector<f64>| x.clone()),
            Arc::new(|_, x: &DVector<f64>| DMatrix::identity(x.len(), x.len())),
            Arc::new(|_, x: &DVector<f64>| DMatrix::identity(x.len(), x.len())),
            NoiseProcess::gaussian(0.0),
            NoiseProcess::gaussian(0.0),
        )
        .with_x0(DVector::from_element(n, 0.4));
        let freq = to_frequency_model(&model);
        let traj = simulate_trajectory(&model, &model.x0, 4, 3).unwrap();
        let net = GainNetwork::init(n, 2);
        let (out, tape) = unroll_forward(&freq, &net, &[&traj]).unwrap();
        assert!(out.mse < 1e-28);
        let grads = unroll_backward(&freq, &net, &tape, &UnrollConfig::default()).unwrap();
        assert!(grads.fc3.w.amax() == 0.0);
        assert!(grads.to_flat().amax() == 0.0);
    }

    #[test]
    fn backward_without_recording_errors() {
        let n = 3;
        let model = tiny_model(n);
        let freq = to_frequency_model(&model);
        let traj = simulate_trajectory(&model, &model.x0, 3, 9).unwrap();
        let net = GainNetwork::init(n, 4);
        let (_, tape) = run_forward(&freq, &net, &[&traj], false).unwrap();
        assert!(matches!(
            unroll_backward(&freq, &net, &tape, &UnrollConfig::default()),
            Err(Error::GraphNotRecorded)
        ));
    }

    #[test]
    fn batched_forward_matches_per_trajectory() {
        let n = 4;
        let model = tiny_model(n);
        let freq = to_frequency_model(&model);
        let trajs: Vec<_> = (0..3)
            .map(|i| simulate_trajectory(&model, &model.x0, 6, 20 + i).unwrap())
            .collect();
        let net = GainNetwork::init(n, 8);
        let batch: Vec<&Trajectory> = trajs.iter().collect();
        let joint = unroll_mse(&freq, &net, &batch).unwrap();
        for (i, traj) in trajs.iter().enumerate() {
            let single = unroll_mse(&freq, &net, &[traj]).unwrap();
            assert!((single.mse - joint.per_trajectory_mse[i]).abs() < 1e-12);
        }
    }
}
