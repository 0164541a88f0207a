//! Extended Kalman filtering in the vertex domain and its exact
//! reformulation in the graph frequency domain.
//!
//! Both recursions are algebraically identical up to conjugation by the
//! orthonormal eigenvector matrix V, which the cross-filter tests pin down
//! numerically.

use crate::dynamics::StateSpaceModel;
use crate::error::{Error, Result};
use crate::linalg::{congruence, spd_solve, symmetrize};
use crate::spectral::SpectralBasis;
use crate::util::all_finite;
use nalgebra::{DMatrix, DVector};

/// Posterior state of one filter run: estimate, covariance, and time index.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub x_post: DVector<f64>,
    pub sigma_post: DMatrix<f64>,
    pub t: usize,
}

impl FilterState {
    pub fn new(x0: DVector<f64>, sigma0: DMatrix<f64>) -> Self {
        Self { x_post: x0, sigma_post: sigma0, t: 0 }
    }

    /// Default initialization: the model's x0 with unit covariance.
    pub fn init(model: &StateSpaceModel) -> Self {
        let n = model.n();
        Self::new(model.x0.clone(), DMatrix::identity(n, n))
    }
}

/// Everything one EKF step produces, for callers that want more than the
/// estimate.
#[derive(Debug, Clone)]
pub struct EkfStepOutput {
    pub state: FilterState,
    pub estimate: DVector<f64>,
    pub gain: DMatrix<f64>,
    pub innovation: DVector<f64>,
    pub sigma_pred: DMatrix<f64>,
    pub innovation_cov: DMatrix<f64>,
}

/// One step of the extended Kalman filter: predict state and observation,
/// propagate the covariance, form the gain, update, and apply the Joseph-form
/// covariance update.
pub fn ekf_step(
    model: &StateSpaceModel,
    state: &FilterState,
    y: &DVector<f64>,
) -> Result<EkfStepOutput> {
    let t = state.t + 1;
    let x_pred = (model.f)(t, &state.x_post);
    let f_jac = (model.jac_f)(t, &state.x_post);
    let y_pred = (model.h)(t, &x_pred);
    let h_jac = (model.jac_h)(t, &x_pred);
    generic_ekf_update(
        state, t, x_pred, y_pred, &f_jac, &h_jac, &model.q_cov, &model.r_cov, y,
    )
}

/// Shared predict/update algebra for the vertex- and frequency-domain EKFs.
#[allow(clippy::too_many_arguments)]
fn generic_ekf_update(
    state: &FilterState,
    t: usize,
    x_pred: DVector<f64>,
    y_pred: DVector<f64>,
    f_jac: &DMatrix<f64>,
    h_jac: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<EkfStepOutput> {
    let n = x_pred.len();
    if y.len() != n {
        return Err(Error::DimMismatch { expected: n, got: y.len() });
    }
    if !all_finite(&x_pred) || !all_finite(&y_pred) {
        return Err(Error::NonFiniteState { context: "ekf prediction".into(), step: t });
    }

    let sigma_pred = symmetrize(&(f_jac * &state.sigma_post * f_jac.transpose() + q));
    let innovation_cov = symmetrize(&(h_jac * &sigma_pred * h_jac.transpose() + r));

    // K = Σ_pred Hᵀ S⁻¹, computed as Kᵀ = S⁻¹ (H Σ_pred).
    let h_sigma = h_jac * &sigma_pred;
    let gain = spd_solve(&innovation_cov, &h_sigma)?.transpose();

    let innovation = y - &y_pred;
    let x_post = &x_pred + &gain * &innovation;
    if !all_finite(&x_post) {
        return Err(Error::NonFiniteState { context: "ekf update".into(), step: t });
    }

    // Joseph form: (I−KH)Σ(I−KH)ᵀ + KRKᵀ.
    let a = DMatrix::identity(n, n) - &gain * h_jac;
    let sigma_post = symmetrize(&(&a * &sigma_pred * a.transpose() + &gain * r * gain.transpose()));

    Ok(EkfStepOutput {
        state: FilterState { x_post: x_post.clone(), sigma_post, t },
        estimate: x_post,
        gain,
        innovation,
        sigma_pred,
        innovation_cov,
    })
}

/// Runs the EKF over a whole observation sequence, returning the estimates.
pub fn ekf_run(
    model: &StateSpaceModel,
    init: FilterState,
    observations: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let mut state = init;
    let mut estimates = Vec::with_capacity(observations.len());
    for y in observations {
        let out = ekf_step(model, &state, y)?;
        state = out.state;
        estimates.push(out.estimate);
    }
    Ok(estimates)
}

/// Constant diagonal frequency-domain structure a model may declare when its
/// Jacobians are graph filters and its noise is white in the GFT basis. The
/// diagonal-covariance fast path of the graph-filter EKF requires it.
#[derive(Debug, Clone)]
pub struct SeparableStructure {
    /// diag(F̃): frequency response of the evolution Jacobian.
    pub f_response: DVector<f64>,
    /// diag(H̃): frequency response of the measurement Jacobian.
    pub h_response: DVector<f64>,
    pub q_diag: DVector<f64>,
    pub r_diag: DVector<f64>,
}

/// The state-space model moved to the graph frequency domain: noise
/// covariances Q̃ = VᵀQV, R̃ = VᵀRV plus wrappers evaluating f, h, and their
/// Jacobians in GFT coordinates.
#[derive(Clone)]
pub struct FreqModel {
    pub model: StateSpaceModel,
    pub q_tilde: DMatrix<f64>,
    pub r_tilde: DMatrix<f64>,
    /// Eigenvalue tie groups of the basis; the graph-filter gain must be
    /// constant within each group.
    pub tie_groups: Vec<Vec<usize>>,
    /// Declared frequency-diagonal structure, if any.
    pub separable: Option<SeparableStructure>,
}

/// Moves a model to the graph frequency domain.
pub fn to_frequency_model(model: &StateSpaceModel) -> FreqModel {
    let v = model.basis.eigvecs();
    let q_tilde = symmetrize(&congruence(v, &model.q_cov));
    let r_tilde = symmetrize(&congruence(v, &model.r_cov));
    let tie_groups = model.basis.tie_groups();
    FreqModel { model: model.clone(), q_tilde, r_tilde, tie_groups, separable: None }
}

impl FreqModel {
    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.model.basis
    }

    /// f̃(x̃) = Vᵀ f(t, V x̃).
    pub fn f_freq(&self, t: usize, x_tilde: &DVector<f64>) -> DVector<f64> {
        let v = self.basis().eigvecs();
        v.tr_mul(&(self.model.f)(t, &(v * x_tilde)))
    }

    /// h̃(x̃) = Vᵀ h(t, V x̃).
    pub fn h_freq(&self, t: usize, x_tilde: &DVector<f64>) -> DVector<f64> {
        let v = self.basis().eigvecs();
        v.tr_mul(&(self.model.h)(t, &(v * x_tilde)))
    }

    /// F̃ = Vᵀ·∇f(V x̃)·V.
    pub fn jac_f_freq(&self, t: usize, x_tilde: &DVector<f64>) -> DMatrix<f64> {
        let v = self.basis().eigvecs();
        congruence(v, &(self.model.jac_f)(t, &(v * x_tilde)))
    }

    /// H̃ = Vᵀ·∇h(V x̃)·V.
    pub fn jac_h_freq(&self, t: usize, x_tilde: &DVector<f64>) -> DMatrix<f64> {
        let v = self.basis().eigvecs();
        congruence(v, &(self.model.jac_h)(t, &(v * x_tilde)))
    }

    /// GFT of the model's x0 with unit covariance, the default filter start.
    pub fn init_state(&self) -> FilterState {
        let n = self.n();
        let x0 = self.basis().eigvecs().tr_mul(&self.model.x0);
        FilterState::new(x0, DMatrix::identity(n, n))
    }

    /// Declares constant frequency-diagonal structure.
    pub fn with_separable(mut self, s: SeparableStructure) -> Self {
        self.separable = Some(s);
        self
    }
}

/// One step of the EKF executed on the frequency-domain model with the full
/// (non-diagonal) gain. `state` and `y_tilde` live in GFT coordinates.
pub fn freq_ekf_step(
    freq: &FreqModel,
    state: &FilterState,
    y_tilde: &DVector<f64>,
) -> Result<EkfStepOutput> {
    let t = state.t + 1;
    let x_pred = freq.f_freq(t, &state.x_post);
    let f_jac = freq.jac_f_freq(t, &state.x_post);
    let y_pred = freq.h_freq(t, &x_pred);
    let h_jac = freq.jac_h_freq(t, &x_pred);
    generic_ekf_update(
        state, t, x_pred, y_pred, &f_jac, &h_jac, &freq.q_tilde, &freq.r_tilde, y_tilde,
    )
}

/// Runs the frequency-domain EKF over vertex-domain observations and returns
/// vertex-domain estimates x̂_t = V x̂̃_t.
pub fn freq_ekf_run(
    freq: &FreqModel,
    init: FilterState,
    observations: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let v = freq.basis().eigvecs();
    let mut state = init;
    let mut estimates = Vec::with_capacity(observations.len());
    for y in observations {
        let y_tilde = v.tr_mul(y);
        let out = freq_ekf_step(freq, &state, &y_tilde)?;
        state = out.state;
        estimates.push(v * &out.estimate);
    }
    Ok(estimates)
}
