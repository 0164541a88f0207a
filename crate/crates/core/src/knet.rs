//! Learned-gain tracking: inference steps, the supervised training loop, and
//! MSE evaluation.
//!
//! Inference follows the GSP-EKF prediction exactly but replaces the
//! closed-form gain with the network output; no covariance matrices are
//! propagated. Training minimizes the ℓ2-regularized per-coordinate MSE of
//! the unrolled filter by mini-batch gradient descent, backpropagating
//! through the whole recursion.

use crate::dataset::{Dataset, Trajectory};
use crate::dynamics::StateSpaceModel;
use crate::error::{Error, Result};
use crate::filters::classic::{ekf_run, freq_ekf_run, FilterState, FreqModel};
use crate::filters::gsp::{gsp_ekf_run, init_state as gsp_init_state_for, GspConfig};
use crate::neural::{
    gain_forward, unroll_backward, unroll_forward, unroll_mse, GainNetwork, Hidden, SeedLineage,
    UnrollConfig,
};
use crate::util::{all_finite, derive_seed, to_db};
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Filter state of the learned-gain recursion: the posterior, plus the one
/// step of history the features need. All in GFT coordinates.
#[derive(Debug, Clone)]
pub struct KnetState {
    pub x_post: DVector<f64>,
    pub x_post_prev: DVector<f64>,
    pub x_prior_prev: DVector<f64>,
    pub t: usize,
}

/// Cold start: x̂̃₀ and both history entries at the GFT of x0, so F2 = F3 = 0
/// at t = 1.
pub fn knet_init_state(freq: &FreqModel) -> KnetState {
    let x0 = freq.basis().eigvecs().tr_mul(&freq.model.x0);
    KnetState { x_post: x0.clone(), x_post_prev: x0.clone(), x_prior_prev: x0, t: 0 }
}

/// One inference step with an externally supplied gain diagonal. Used by the
/// network step below and by teacher-forcing tests.
pub fn knet_step_with_gain(
    freq: &FreqModel,
    state: &KnetState,
    y_tilde: &DVector<f64>,
    gain: &DVector<f64>,
) -> Result<(KnetState, DVector<f64>, DVector<f64>)> {
    let v = freq.basis().eigvecs();
    let t = state.t + 1;
    let prior = freq.f_freq(t, &state.x_post);
    let y_pred = freq.h_freq(t, &prior);
    let innovation = y_tilde - &y_pred;
    let post = &prior + gain.component_mul(&innovation);
    if !all_finite(&post) {
        return Err(Error::NonFiniteState { context: "learned-gain update".into(), step: t });
    }
    let estimate = v * &post;
    let new_state = KnetState {
        x_post: post,
        x_post_prev: state.x_post.clone(),
        x_prior_prev: prior,
        t,
    };
    Ok((new_state, estimate, innovation))
}

/// One step of learned-gain inference: GSP-EKF prediction, features F1–F3,
/// network gain, update, and the vertex-domain estimate x̂_t = V·x̂̃_t.
pub fn knet_step(
    freq: &FreqModel,
    net: &GainNetwork,
    state: &KnetState,
    hidden: &Hidden,
    y_tilde: &DVector<f64>,
) -> Result<(KnetState, Hidden, DVector<f64>)> {
    let n = freq.n();
    if y_tilde.len() != n {
        return Err(Error::DimMismatch { expected: n, got: y_tilde.len() });
    }
    let t = state.t + 1;
    let prior = freq.f_freq(t, &state.x_post);
    let y_pred = freq.h_freq(t, &prior);
    let innovation = y_tilde - &y_pred;

    let mut feat = DVector::zeros(3 * n);
    feat.rows_mut(0, n).copy_from(&innovation);
    feat.rows_mut(n, n).copy_from(&(&state.x_post - &state.x_post_prev));
    feat.rows_mut(2 * n, n).copy_from(&(&state.x_post - &state.x_prior_prev));
    let (gain, hidden_new) = gain_forward(net, &feat, hidden);

    let post = &prior + gain.component_mul(&innovation);
    if !all_finite(&post) {
        return Err(Error::NonFiniteState { context: "learned-gain update".into(), step: t });
    }
    let estimate = freq.basis().eigvecs() * &post;
    let new_state = KnetState {
        x_post: post,
        x_post_prev: state.x_post.clone(),
        x_prior_prev: prior,
        t,
    };
    Ok((new_state, hidden_new, estimate))
}

/// Runs learned-gain inference over vertex-domain observations.
pub fn knet_run(
    freq: &FreqModel,
    net: &GainNetwork,
    observations: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let v = freq.basis().eigvecs();
    let mut state = knet_init_state(freq);
    let mut hidden = Hidden::zeros(freq.n(), 1);
    let mut estimates = Vec::with_capacity(observations.len());
    for y in observations {
        let y_tilde = v.tr_mul(y);
        let (s, h, est) = knet_step(freq, net, &state, &hidden, &y_tilde)?;
        state = s;
        hidden = h;
        estimates.push(est);
    }
    Ok(estimates)
}

/// ℓ2-regularized loss over a batch: mean over trajectories of the
/// time-mean per-coordinate squared error, plus l2·‖θ‖².
pub fn loss(freq: &FreqModel, net: &GainNetwork, batch: &[&Trajectory], l2: f64) -> Result<f64> {
    assert!(!batch.is_empty(), "loss needs a nonempty batch");
    let out = unroll_mse(freq, net, batch)?;
    let reg = net.norm();
    Ok(out.mse + l2 * reg * reg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Training hyperparameters. Serialized into every results artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip: Option<f64>,
    /// Truncated-BPTT window; `None` backpropagates through the full length.
    pub bptt_window: Option<usize>,
    pub validation_fraction: f64,
    /// Standardize features by their RMS (estimated once before training).
    pub normalize_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 10,
            batch_size: 32,
            l2: 1e-4,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            clip: Some(10.0),
            bptt_window: None,
            validation_fraction: 0.1,
            normalize_features: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mse_db: Option<f64>,
    pub grad_norm: f64,
    /// ‖θ‖ at the end of the epoch.
    pub param_norm: f64,
}

/// Trained parameters plus the training curve and data lineage.
pub struct TrainOutput {
    pub net: GainNetwork,
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
    pub lineage: SeedLineage,
    pub config: TrainConfig,
}

/// Number of parallel gradient chunks per batch. Fixed (not tied to the
/// thread count) so results are identical regardless of parallelism.
const GRAD_CHUNKS: usize = 2;

/// Mini-batch training through the unrolled filter. Deterministic for a
/// fixed config: the train/validation split, the epoch shuffles, and the
/// chunked gradient reduction are all seeded and order-fixed.
pub fn train(dataset: &Dataset, freq: &FreqModel, config: &TrainConfig) -> Result<TrainOutput> {
    let n = freq.n();
    if dataset.n() != n {
        return Err(Error::ShapeMismatch {
            context: format!("dataset has N={}, model has N={n}", dataset.n()),
        });
    }
    if dataset.is_empty() {
        return Err(Error::InvalidInput("training dataset is empty".into()));
    }

    // 90/10 train/validation split from the training pool.
    let d = dataset.len();
    let mut indices: Vec<usize> = (0..d).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0)));
    let val_count = ((d as f64 * config.validation_fraction).round() as usize)
        .clamp(usize::from(d > 1), d.saturating_sub(1));
    let (val_idx, train_idx) = indices.split_at(val_count);
    let val_set: Vec<&Trajectory> = val_idx.iter().map(|&i| &dataset.trajectories[i]).collect();

    let mut net = GainNetwork::init(n, derive_seed(config.seed, 1));
    let unroll_cfg = UnrollConfig { bptt_window: config.bptt_window };
    let feature_scale = if config.normalize_features {
        let probe: Vec<&Trajectory> = train_idx
            .iter()
            .take(16)
            .map(|&i| &dataset.trajectories[i])
            .collect();
        let scale = estimate_feature_scale(freq, &net, &probe)?;
        net.feature_scale = Some(scale.clone());
        Some(scale)
    } else {
        None
    };

    let mut theta = net.to_flat();
    let mut opt = OptimizerState::new(theta.len());
    let mut curve = Vec::with_capacity(config.epochs);
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;
    let mut best_net = net.clone();

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = train_idx.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2 + epoch as u64)));

        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0;
        let mut last_grad_norm = 0.0;
        for (batch_no, batch_idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Trajectory> =
                batch_idx.iter().map(|&i| &dataset.trajectories[i]).collect();
            let (batch_mse, mut grad) = batch_gradient(freq, &net, &batch, &unroll_cfg)?;

            // ℓ2 regularization on the loss and its gradient.
            let reg_norm = net.norm();
            let batch_loss = batch_mse + config.l2 * reg_norm * reg_norm;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_no });
            }
            grad.axpy(2.0 * config.l2, &net);

            let mut flat_grad = grad.to_flat();
            let norm = flat_grad.norm();
            last_grad_norm = norm;
            if let Some(cap) = config.clip {
                if norm > cap {
                    flat_grad *= cap / norm;
                }
            }
            opt.update(config, &mut theta, &flat_grad);
            net = GainNetwork::from_flat(n, &theta)?;
            net.feature_scale = feature_scale.clone();

            epoch_loss += batch_loss;
            epoch_batches += 1;
        }

        let val_mse = if val_set.is_empty() {
            f64::NAN
        } else {
            validation_mse(freq, &net, &val_set)?
        };
        if val_mse.is_finite() && val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_net = net.clone();
        }
        curve.push(EpochStats {
            epoch,
            train_loss: epoch_loss / epoch_batches.max(1) as f64,
            val_mse,
            val_mse_db: to_db(val_mse),
            grad_norm: last_grad_norm,
            param_norm: theta.norm(),
        });
    }

    if !best_val.is_finite() {
        // No usable validation split: keep the final parameters.
        best_net = net;
        best_epoch = config.epochs.saturating_sub(1);
    }
    let lineage = SeedLineage {
        init_seed: derive_seed(config.seed, 1),
        train_seed: Some(config.seed),
        dataset_hash: Some(dataset.content_hash()),
        trajectory_hashes: dataset
            .trajectory_hashes()
            .iter()
            .map(|h| h[..16].to_string())
            .collect(),
    };
    Ok(TrainOutput { net: best_net, curve, best_epoch, lineage, config: config.clone() })
}

/// Batch-mean MSE and its parameter gradient, reduced over a fixed number of
/// chunks in index order.
fn batch_gradient(
    freq: &FreqModel,
    net: &GainNetwork,
    batch: &[&Trajectory],
    unroll_cfg: &UnrollConfig,
) -> Result<(f64, GainNetwork)> {
    let chunk_size = batch.len().div_ceil(GRAD_CHUNKS);
    let chunks: Vec<&[&Trajectory]> = batch.chunks(chunk_size).collect();
    let results: Vec<Result<(f64, GainNetwork, usize)>> = chunks
        .par_iter()
        .map(|chunk| {
            let (out, tape) = unroll_forward(freq, net, chunk)?;
            let grads = unroll_backward(freq, net, &tape, unroll_cfg)?;
            Ok((out.mse, grads, chunk.len()))
        })
        .collect();
    let mut total = GainNetwork::zeros(net.n());
    let mut mse_sum = 0.0;
    let b = batch.len() as f64;
    for r in results {
        let (mse, grads, len) = r?;
        let weight = len as f64 / b;
        mse_sum += mse * weight;
        total.axpy(weight, &grads);
    }
    Ok((mse_sum, total))
}

/// Per-feature RMS over a probe unroll with the freshly initialized network,
/// floored at 1e-6. Used once before training when standardization is on.
fn estimate_feature_scale(
    freq: &FreqModel,
    net: &GainNetwork,
    probe: &[&Trajectory],
) -> Result<DVector<f64>> {
    let (_, tape) = unroll_forward(freq, net, probe)?;
    let dim = 3 * freq.n();
    let mut sq: DVector<f64> = DVector::zeros(dim);
    let mut count = 0usize;
    for cache in tape.net_caches() {
        for col in cache.feat.column_iter() {
            for i in 0..dim {
                sq[i] += col[i] * col[i];
            }
            count += 1;
        }
    }
    Ok(DVector::from_fn(dim, |i, _| (sq[i] / count as f64).sqrt().max(1e-6)))
}

/// Validation MSE, evaluated in bounded-size chunks.
fn validation_mse(freq: &FreqModel, net: &GainNetwork, set: &[&Trajectory]) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in set.chunks(64) {
        let out = unroll_mse(freq, net, chunk)?;
        sum += out.mse * chunk.len() as f64;
    }
    Ok(sum / set.len() as f64)
}

struct OptimizerState {
    m: DVector<f64>,
    v: DVector<f64>,
    step: usize,
}

impl OptimizerState {
    fn new(dim: usize) -> Self {
        Self { m: DVector::zeros(dim), v: DVector::zeros(dim), step: 0 }
    }

    fn update(&mut self, config: &TrainConfig, theta: &mut DVector<f64>, grad: &DVector<f64>) {
        match config.optimizer {
            OptimizerKind::Sgd => {
                theta.axpy(-config.lr, grad, 1.0);
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.step += 1;
                let t = self.step as i32;
                for i in 0..theta.len() {
                    let g = grad[i];
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
                    let m_hat = self.m[i] / (1.0 - B1.powi(t));
                    let v_hat = self.v[i] / (1.0 - B2.powi(t));
                    theta[i] -= config.lr * m_hat / (v_hat.sqrt() + EPS);
                }
            }
        }
    }
}

/// Which tracking algorithm to evaluate.
pub enum Estimator<'a> {
    Ekf(&'a StateSpaceModel),
    FreqEkf(&'a FreqModel),
    GspEkf { model: &'a FreqModel, config: GspConfig },
    GspKalmanNet {
        model: &'a FreqModel,
        net: &'a GainNetwork,
        lineage: Option<&'a SeedLineage>,
    },
}

impl Estimator<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Ekf(_) => "ekf",
            Estimator::FreqEkf(_) => "freq-ekf",
            Estimator::GspEkf { .. } => "gsp-ekf",
            Estimator::GspKalmanNet { .. } => "gsp-kalmannet",
        }
    }
}

/// Evaluation summary over a test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub filter: String,
    /// Mean per-coordinate squared error over trajectories, time, and nodes.
    pub mse_linear: f64,
    /// 10·log₁₀ of the above; `None` when the error is exactly zero.
    pub mse_db: Option<f64>,
    pub per_trajectory_mse: Vec<f64>,
    /// Wall-clock seconds per filtering step (throughput over the whole
    /// evaluation, warm-up excluded).
    pub step_time_seconds: f64,
    pub trajectories: usize,
    pub steps_per_trajectory: usize,
}

fn trajectory_mse(estimates: &[DVector<f64>], truth: &[DVector<f64>]) -> f64 {
    let n = truth[0].len() as f64;
    let t = truth.len() as f64;
    estimates
        .iter()
        .zip(truth)
        .map(|(e, x)| (e - x).norm_squared())
        .sum::<f64>()
        / (n * t)
}

/// Runs an estimator over every trajectory of a test set, reporting the MSE
/// per Eq.-style empirical averaging plus per-step timing.
///
/// For the learned filter, test trajectories are checked against the
/// network's training lineage; any overlap is a hard error.
pub fn evaluate(estimator: &Estimator, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("evaluation dataset is empty".into()));
    }
    if let Estimator::GspKalmanNet { lineage: Some(lineage), .. } = estimator {
        let overlap = dataset
            .trajectory_hashes()
            .iter()
            .filter(|h| lineage.trajectory_hashes.iter().any(|t| *t == h[..16]))
            .count();
        if overlap > 0 {
            return Err(Error::LineageViolation { overlap });
        }
    }

    let run_one = |traj: &Trajectory| -> Result<Vec<DVector<f64>>> {
        match estimator {
            Estimator::Ekf(model) => ekf_run(model, FilterState::init(model), &traj.observations),
            Estimator::FreqEkf(freq) => {
                freq_ekf_run(freq, freq.init_state(), &traj.observations)
            }
            Estimator::GspEkf { model, config } => {
                gsp_ekf_run(model, config, gsp_init_state_for(model, config), &traj.observations)
            }
            Estimator::GspKalmanNet { model, net, .. } => knet_run(model, net, &traj.observations),
        }
    };

    // Warm-up pass on the first trajectory, excluded from timing.
    run_one(&dataset.trajectories[0])?;

    let start = Instant::now();
    let per_traj: Vec<Result<f64>> = dataset
        .trajectories
        .par_iter()
        .map(|traj| Ok(trajectory_mse(&run_one(traj)?, &traj.states)))
        .collect();
    let elapsed = start.elapsed().as_secs_f64();

    let per_trajectory_mse = per_traj.into_iter().collect::<Result<Vec<f64>>>()?;
    let mse_linear =
        per_trajectory_mse.iter().sum::<f64>() / per_trajectory_mse.len() as f64;
    let total_steps: usize = dataset.trajectories.iter().map(Trajectory::len).sum();
    Ok(EvalReport {
        filter: estimator.name().to_string(),
        mse_linear,
        mse_db: to_db(mse_linear),
        per_trajectory_mse,
        step_time_seconds: elapsed / total_steps as f64,
        trajectories: dataset.len(),
        steps_per_trajectory: dataset.trajectories[0].len(),
    })
}

/// Result of a variance grid search for the model-based filters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_index: usize,
    pub best_q2: f64,
    pub best_r2: f64,
    pub mses: Vec<f64>,
}

/// Picks the assumed (q², r²) pair minimizing GSP-EKF MSE on the given
/// validation data. Ties break toward the lowest grid index.
pub fn grid_search_variance(
    dataset: &Dataset,
    model: &StateSpaceModel,
    grid: &[(f64, f64)],
) -> Result<GridSearchResult> {
    assert!(!grid.is_empty(), "grid search needs at least one point");
    let mut mses = Vec::with_capacity(grid.len());
    for &(q2, r2) in grid {
        let candidate = model.clone().with_assumed_variances(q2, r2);
        let freq = crate::filters::classic::to_frequency_model(&candidate);
        let report = evaluate(
            &Estimator::GspEkf { model: &freq, config: GspConfig::default() },
            dataset,
        )?;
        mses.push(report.mse_linear);
    }
    let mut best_index = 0;
    for (i, &m) in mses.iter().enumerate() {
        if m < mses[best_index] {
            best_index = i;
        }
    }
    Ok(GridSearchResult {
        best_index,
        best_q2: grid[best_index].0,
        best_r2: grid[best_index].1,
        mses,
    })
}
