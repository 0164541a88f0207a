//! Forward and backward passes of the gain network.
//!
//! Everything is batched: activations are matrices whose columns are
//! independent trajectories, so one trajectory is just a single-column batch.
//! The backward functions accumulate parameter gradients into a caller-owned
//! [`GainNetwork`] used as the gradient container.

use super::params::{GainNetwork, GruParams};
use nalgebra::{DMatrix, DVector};

/// The two GRU hidden states (each 20N × batch).
#[derive(Debug, Clone)]
pub struct Hidden {
    pub h1: DMatrix<f64>,
    pub h2: DMatrix<f64>,
}

impl Hidden {
    pub fn zeros(n: usize, batch: usize) -> Self {
        let h = 20 * n;
        Self { h1: DMatrix::zeros(h, batch), h2: DMatrix::zeros(h, batch) }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Wx + b with the bias broadcast across columns.
fn affine(w: &DMatrix<f64>, x: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let mut out = w * x;
    for mut col in out.column_iter_mut() {
        col += b;
    }
    out
}

fn rowsum_into(m: &DMatrix<f64>, out: &mut DVector<f64>) {
    for col in m.column_iter() {
        *out += col;
    }
}

/// Intermediates of one GRU evaluation needed by its backward pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    pub x: DMatrix<f64>,
    pub h_prev: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub n_cand: DMatrix<f64>,
    /// The gated term U_n·h + b_n before multiplication by r.
    pub un_h: DMatrix<f64>,
}

/// GRU cell:
/// z = σ(W_z x + U_z h + b_z), r = σ(W_r x + U_r h + b_r),
/// n = tanh(W_n x + r ∘ (U_n h + b_n)), h′ = (1−z) ∘ n + z ∘ h.
pub fn gru_forward(p: &GruParams, x: &DMatrix<f64>, h_prev: &DMatrix<f64>) -> (DMatrix<f64>, GruCache) {
    let z = affine(&p.w_z, x, &p.b_z) + &p.u_z * h_prev;
    let z = z.map(sigmoid);
    let r = affine(&p.w_r, x, &p.b_r) + &p.u_r * h_prev;
    let r = r.map(sigmoid);
    let un_h = affine(&p.u_n, h_prev, &p.b_n);
    let n_cand = (&p.w_n * x + r.component_mul(&un_h)).map(f64::tanh);
    let mut h_new = n_cand.clone();
    for ((hn, &zv), (&nv, &hp)) in h_new
        .iter_mut()
        .zip(z.iter())
        .zip(n_cand.iter().zip(h_prev.iter()))
    {
        *hn = (1.0 - zv) * nv + zv * hp;
    }
    let cache = GruCache { x: x.clone(), h_prev: h_prev.clone(), z, r, n_cand, un_h };
    (h_new, cache)
}

/// Backward through one GRU evaluation. Returns (dx, dh_prev) and adds the
/// parameter gradients into `grads`.
pub fn gru_backward(
    p: &GruParams,
    cache: &GruCache,
    dh_new: &DMatrix<f64>,
    grads: &mut GruParams,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let GruCache { x, h_prev, z, r, n_cand, un_h } = cache;

    let dz = dh_new.zip_zip_map(h_prev, n_cand, |d, h, n| d * (h - n));
    let dn = dh_new.zip_map(z, |d, zv| d * (1.0 - zv));
    let mut dh_prev = dh_new.component_mul(z);

    // n = tanh(a_n), a_n = W_n x + r ∘ (U_n h + b_n)
    let da_n = dn.zip_map(n_cand, |d, n| d * (1.0 - n * n));
    let dr = da_n.component_mul(un_h);
    let dg = da_n.component_mul(r);
    grads.w_n += &da_n * x.transpose();
    grads.u_n += &dg * h_prev.transpose();
    rowsum_into(&dg, &mut grads.b_n);
    let mut dx = p.w_n.tr_mul(&da_n);
    dh_prev += p.u_n.tr_mul(&dg);

    let da_z = dz.zip_map(z, |d, zv| d * zv * (1.0 - zv));
    grads.w_z += &da_z * x.transpose();
    grads.u_z += &da_z * h_prev.transpose();
    rowsum_into(&da_z, &mut grads.b_z);
    dx += p.w_z.tr_mul(&da_z);
    dh_prev += p.u_z.tr_mul(&da_z);

    let da_r = dr.zip_map(r, |d, rv| d * rv * (1.0 - rv));
    grads.w_r += &da_r * x.transpose();
    grads.u_r += &da_r * h_prev.transpose();
    rowsum_into(&da_r, &mut grads.b_r);
    dx += p.w_r.tr_mul(&da_r);
    dh_prev += p.u_r.tr_mul(&da_r);

    (dx, dh_prev)
}

/// Intermediates of one full network evaluation.
#[derive(Debug, Clone)]
pub struct NetStepCache {
    pub feat: DMatrix<f64>,
    pub fc1_pre: DMatrix<f64>,
    pub gru1: GruCache,
    pub gru2: GruCache,
    /// gru2 output fed to fc2 (the new h2).
    pub h2_new: DMatrix<f64>,
    pub fc2_pre: DMatrix<f64>,
    pub fc2_out: DMatrix<f64>,
}

/// Full forward pass: features (3N × B) to gain diagonals (N × B) plus the
/// advanced hidden states.
pub fn net_forward(
    net: &GainNetwork,
    feat: &DMatrix<f64>,
    hidden: &Hidden,
) -> (DMatrix<f64>, Hidden, NetStepCache) {
    // Optional standardization; the cache stores the scaled features.
    let feat = match &net.feature_scale {
        Some(scale) => {
            let mut scaled = feat.clone();
            for mut col in scaled.column_iter_mut() {
                col.component_div_assign(scale);
            }
            scaled
        }
        None => feat.clone(),
    };
    let feat = &feat;
    let fc1_pre = affine(&net.fc1.w, feat, &net.fc1.b);
    let fc1_out = fc1_pre.map(|x| x.max(0.0));
    let (h1_new, gru1) = gru_forward(&net.gru1, &fc1_out, &hidden.h1);
    let (h2_new, gru2) = gru_forward(&net.gru2, &h1_new, &hidden.h2);
    let fc2_pre = affine(&net.fc2.w, &h2_new, &net.fc2.b);
    let fc2_out = fc2_pre.map(|x| x.max(0.0));
    // Final layer stays linear: gain entries may be negative.
    let gain = affine(&net.fc3.w, &fc2_out, &net.fc3.b);
    let cache = NetStepCache {
        feat: feat.clone(),
        fc1_pre,
        gru1,
        gru2,
        h2_new: h2_new.clone(),
        fc2_pre,
        fc2_out,
    };
    (gain, Hidden { h1: h1_new, h2: h2_new }, cache)
}

/// Backward through one network evaluation. `dh1_next`/`dh2_next` carry the
/// gradients flowing into the advanced hidden states from later time steps.
/// Returns (d_feat, dh1_prev, dh2_prev).
pub fn net_backward(
    net: &GainNetwork,
    cache: &NetStepCache,
    d_gain: &DMatrix<f64>,
    dh1_next: &DMatrix<f64>,
    dh2_next: &DMatrix<f64>,
    grads: &mut GainNetwork,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    // FC3
    grads.fc3.w += d_gain * cache.fc2_out.transpose();
    rowsum_into(d_gain, &mut grads.fc3.b);
    let d_fc2_out = net.fc3.w.tr_mul(d_gain);
    let d_fc2_pre = d_fc2_out.zip_map(&cache.fc2_pre, |d, p| if p > 0.0 { d } else { 0.0 });

    // FC2 (input is the new h2, which also feeds the next step's GRU2)
    grads.fc2.w += &d_fc2_pre * cache.h2_new.transpose();
    rowsum_into(&d_fc2_pre, &mut grads.fc2.b);
    let dh2_total = net.fc2.w.tr_mul(&d_fc2_pre) + dh2_next;

    let (dx2, dh2_prev) = gru_backward(&net.gru2, &cache.gru2, &dh2_total, &mut grads.gru2);
    let dh1_total = dx2 + dh1_next;
    let (dx1, dh1_prev) = gru_backward(&net.gru1, &cache.gru1, &dh1_total, &mut grads.gru1);

    // FC1 + ReLU
    let d_fc1_pre = dx1.zip_map(&cache.fc1_pre, |d, p| if p > 0.0 { d } else { 0.0 });
    grads.fc1.w += &d_fc1_pre * cache.feat.transpose();
    rowsum_into(&d_fc1_pre, &mut grads.fc1.b);
    let mut d_feat = net.fc1.w.tr_mul(&d_fc1_pre);
    // Chain through the constant standardization divisors.
    if let Some(scale) = &net.feature_scale {
        for mut col in d_feat.column_iter_mut() {
            col.component_div_assign(scale);
        }
    }

    (d_feat, dh1_prev, dh2_prev)
}

/// Single-vector convenience wrapper around [`net_forward`].
pub fn gain_forward(
    net: &GainNetwork,
    feat: &DVector<f64>,
    hidden: &Hidden,
) -> (DVector<f64>, Hidden) {
    let feat_m = DMatrix::from_column_slice(feat.len(), 1, feat.as_slice());
    let (gain, hidden_new, _) = net_forward(net, &feat_m, hidden);
    (gain.column(0).clone_owned(), hidden_new)
}
