//! Nonlinear state-space models over graphs, noise processes, and trajectory
//! simulation.

use crate::dataset::{Dataset, DatasetMetadata, Trajectory};
use crate::error::{Error, Result};
use crate::spectral::SpectralBasis;
use crate::util::{all_finite, derive_seed};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Evolution or measurement map, (t, x) ↦ vector.
pub type DynMap = Arc<dyn Fn(usize, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// Jacobian provider, (t, x) ↦ N×N matrix.
pub type DynJac = Arc<dyn Fn(usize, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Temporally i.i.d. per-coordinate noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseProcess {
    /// Zero-mean Gaussian with per-coordinate variance `variance`.
    GaussianIid { variance: f64 },
    /// Exponential draws with rate `rate`. `centered` subtracts the mean
    /// 1/rate so the noise matches the zero-mean model assumption; disable it
    /// to keep raw draws.
    ExponentialIid { rate: f64, centered: bool },
}

impl NoiseProcess {
    pub fn gaussian(variance: f64) -> Self {
        assert!(variance >= 0.0, "variance must be nonnegative");
        Self::GaussianIid { variance }
    }

    pub fn exponential(rate: f64) -> Self {
        assert!(rate > 0.0, "rate must be positive");
        Self::ExponentialIid { rate, centered: true }
    }

    /// Per-coordinate variance of the draws.
    pub fn variance(&self) -> f64 {
        match *self {
            Self::GaussianIid { variance } => variance,
            Self::ExponentialIid { rate, .. } => 1.0 / (rate * rate),
        }
    }

    /// Draws one length-n sample.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match *self {
            Self::GaussianIid { variance } => {
                if variance == 0.0 {
                    return DVector::zeros(n);
                }
                let dist = Normal::new(0.0, variance.sqrt()).expect("valid std dev");
                DVector::from_fn(n, |_, _| dist.sample(rng))
            }
            Self::ExponentialIid { rate, centered } => {
                let dist = Exp::new(rate).expect("valid rate");
                let shift = if centered { 1.0 / rate } else { 0.0 };
                DVector::from_fn(n, |_, _| dist.sample(rng) - shift)
            }
        }
    }
}

/// Nonlinear state-space model x_t = f(t, x_{t−1}) + e_t, y_t = h(t, x_t) + v_t
/// over a fixed graph spectral basis.
///
/// `process_noise`/`meas_noise` drive data generation; `q_cov`/`r_cov` are the
/// covariances the filters assume, which default to the generating variances
/// but can be overridden (e.g. by a grid search under non-Gaussian noise).
#[derive(Clone)]
pub struct StateSpaceModel {
    pub basis: Arc<SpectralBasis>,
    pub f: DynMap,
    pub h: DynMap,
    pub jac_f: DynJac,
    pub jac_h: DynJac,
    pub process_noise: NoiseProcess,
    pub meas_noise: NoiseProcess,
    pub q_cov: DMatrix<f64>,
    pub r_cov: DMatrix<f64>,
    pub x0: DVector<f64>,
}

impl StateSpaceModel {
    /// Builds a model with analytic Jacobians and default assumed covariances
    /// q²I, r²I taken from the noise processes.
    pub fn new(
        basis: Arc<SpectralBasis>,
        f: DynMap,
        h: DynMap,
        jac_f: DynJac,
        jac_h: DynJac,
        process_noise: NoiseProcess,
        meas_noise: NoiseProcess,
    ) -> Self {
        let n = basis.n();
        let q_cov = DMatrix::identity(n, n) * process_noise.variance();
        let r_cov = DMatrix::identity(n, n) * meas_noise.variance();
        Self {
            basis,
            f,
            h,
            jac_f,
            jac_h,
            process_noise,
            meas_noise,
            q_cov,
            r_cov,
            x0: DVector::zeros(n),
        }
    }

    /// Builds a model whose Jacobians fall back to central finite differences.
    pub fn with_numerical_jacobians(
        basis: Arc<SpectralBasis>,
        f: DynMap,
        h: DynMap,
        process_noise: NoiseProcess,
        meas_noise: NoiseProcess,
    ) -> Self {
        let f_for_jac = f.clone();
        let h_for_jac = h.clone();
        let jac_f: DynJac = Arc::new(move |t, x| {
            numerical_jacobian(|v| f_for_jac(t, v), x, default_fd_step(x))
                .expect("finite-difference Jacobian of f")
        });
        let jac_h: DynJac = Arc::new(move |t, x| {
            numerical_jacobian(|v| h_for_jac(t, v), x, default_fd_step(x))
                .expect("finite-difference Jacobian of h")
        });
        Self::new(basis, f, h, jac_f, jac_h, process_noise, meas_noise)
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn with_x0(mut self, x0: DVector<f64>) -> Self {
        assert_eq!(x0.len(), self.n(), "x0 dimension must match the graph");
        self.x0 = x0;
        self
    }

    /// Overrides the covariances the filters assume, leaving data generation
    /// untouched.
    pub fn with_assumed_covariances(mut self, q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        self.q_cov = q;
        self.r_cov = r;
        self
    }

    pub fn with_assumed_variances(self, q2: f64, r2: f64) -> Self {
        let n = self.n();
        self.with_assumed_covariances(
            DMatrix::identity(n, n) * q2,
            DMatrix::identity(n, n) * r2,
        )
    }
}

/// Default central-difference step, 1e-6·max(1, ‖x‖∞).
pub fn default_fd_step(x: &DVector<f64>) -> f64 {
    1e-6 * x.amax().max(1.0)
}

/// Central-difference Jacobian, column j = (map(x+εe_j) − map(x−εe_j))/(2ε).
pub fn numerical_jacobian(
    map: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    eps: f64,
) -> Result<DMatrix<f64>> {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    let mut xm = x.clone();
    for j in 0..n {
        xp[j] = x[j] + eps;
        xm[j] = x[j] - eps;
        let fp = map(&xp);
        let fm = map(&xm);
        if !all_finite(&fp) || !all_finite(&fm) {
            return Err(Error::NonFiniteState { context: "numerical_jacobian".into(), step: j });
        }
        let col = (fp - fm) / (2.0 * eps);
        jac.set_column(j, &col);
        xp[j] = x[j];
        xm[j] = x[j];
    }
    Ok(jac)
}

/// Simulates one trajectory of length `t_len`. The process and measurement
/// noise streams are independent ChaCha streams derived from `seed`, so a
/// trajectory is fully reproducible from (model, x0, seed).
pub fn simulate_trajectory(
    model: &StateSpaceModel,
    x0: &DVector<f64>,
    t_len: usize,
    seed: u64,
) -> Result<Trajectory> {
    assert!(t_len >= 1, "trajectory length must be at least 1");
    let n = model.n();
    if x0.len() != n {
        return Err(Error::DimMismatch { expected: n, got: x0.len() });
    }
    let mut e_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let mut v_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));

    let mut states = Vec::with_capacity(t_len);
    let mut observations = Vec::with_capacity(t_len);
    let mut x_prev = x0.clone();
    for t in 1..=t_len {
        let drift = (model.f)(t, &x_prev);
        if !all_finite(&drift) {
            return Err(Error::NonFiniteState { context: "state evolution".into(), step: t });
        }
        let x = drift + model.process_noise.sample(n, &mut e_rng);
        let level = (model.h)(t, &x);
        if !all_finite(&level) {
            return Err(Error::NonFiniteState { context: "measurement".into(), step: t });
        }
        let y = level + model.meas_noise.sample(n, &mut v_rng);
        if !all_finite(&x) || !all_finite(&y) {
            return Err(Error::NonFiniteState { context: "noise draw".into(), step: t });
        }
        states.push(x.clone());
        observations.push(y);
        x_prev = x;
    }
    Ok(Trajectory { x0: x0.clone(), states, observations, seed })
}

/// Default experiment scale: 2000 training trajectories of length 200, with 200
/// more reserved for testing.
pub const DEFAULT_TRAIN_TRAJECTORIES: usize = 2000;
pub const DEFAULT_TEST_TRAJECTORIES: usize = 200;
pub const DEFAULT_TRAJECTORY_LEN: usize = 200;

/// Generates `d` independent trajectories. Trajectory i uses the derived seed
/// `derive_seed(seed, i)`, so parallel and serial generation agree exactly.
pub fn generate_dataset(
    model: &StateSpaceModel,
    d: usize,
    t_len: usize,
    seed: u64,
    metadata: DatasetMetadata,
) -> Result<Dataset> {
    assert!(d >= 1, "dataset needs at least one trajectory");
    let trajectories: Vec<Result<Trajectory>> = (0..d)
        .into_par_iter()
        .map(|i| {
            simulate_trajectory(model, &model.x0, t_len, derive_seed(seed, i as u64)).map_err(
                |e| match e {
                    Error::NonFiniteState { context, step } => Error::NonFiniteState {
                        context: format!("trajectory {i}: {context}"),
                        step,
                    },
                    other => other,
                },
            )
        })
        .collect();
    let trajectories = trajectories.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(trajectories, metadata))
}
