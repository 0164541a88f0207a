//! Dual-implementation oracle for the network forward pass: a straight-line
//! scalar-loop evaluation of the same equations, sharing no code with the
//! library path.

use graphtrack_core::neural::{gain_forward, GainNetwork, Hidden};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec(w: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.nrows()];
    for i in 0..w.nrows() {
        let mut acc = 0.0;
        for j in 0..w.ncols() {
            acc += w[(i, j)] * x[j];
        }
        out[i] = acc;
    }
    out
}

fn straight_line_forward(
    net: &GainNetwork,
    feat: &[f64],
    h1: &[f64],
    h2: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    // FC1 + ReLU
    let mut a1 = matvec(&net.fc1.w, feat);
    for (i, v) in a1.iter_mut().enumerate() {
        *v += net.fc1.b[i];
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    // GRU layer: z = σ(Wz x + Uz h + bz), r = σ(Wr x + Ur h + br),
    // n = tanh(Wn x + r ∘ (Un h + bn)), h' = (1−z)∘n + z∘h.
    let gru = |p: &graphtrack_core::neural::GruParams, x: &[f64], h: &[f64]| -> Vec<f64> {
        let wzx = matvec(&p.w_z, x);
        let uzh = matvec(&p.u_z, h);
        let wrx = matvec(&p.w_r, x);
        let urh = matvec(&p.u_r, h);
        let wnx = matvec(&p.w_n, x);
        let unh = matvec(&p.u_n, h);
        let mut out = vec![0.0; h.len()];
        for i in 0..h.len() {
            let z = sigmoid(wzx[i] + uzh[i] + p.b_z[i]);
            let r = sigmoid(wrx[i] + urh[i] + p.b_r[i]);
            let n = (wnx[i] + r * (unh[i] + p.b_n[i])).tanh();
            out[i] = (1.0 - z) * n + z * h[i];
        }
        out
    };
    let h1_new = gru(&net.gru1, &a1, h1);
    let h2_new = gru(&net.gru2, &h1_new, h2);
    // FC2 + ReLU
    let mut a2 = matvec(&net.fc2.w, &h2_new);
    for (i, v) in a2.iter_mut().enumerate() {
        *v += net.fc2.b[i];
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    // FC3, linear.
    let mut gain = matvec(&net.fc3.w, &a2);
    for (i, v) in gain.iter_mut().enumerate() {
        *v += net.fc3.b[i];
    }
    (gain, h1_new, h2_new)
}

#[test]
fn library_forward_matches_straight_line_evaluation() {
    let n = 3;
    for seed in [1u64, 7, 23] {
        let net = GainNetwork::init(n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
        let feat_vec: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let h1_vec: Vec<f64> = (0..20 * n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let h2_vec: Vec<f64> = (0..20 * n).map(|_| rng.random_range(-0.5..0.5)).collect();

        let hidden = Hidden {
            h1: DMatrix::from_column_slice(20 * n, 1, &h1_vec),
            h2: DMatrix::from_column_slice(20 * n, 1, &h2_vec),
        };
        let feat = DVector::from_column_slice(&feat_vec);
        let (gain, hidden_new) = gain_forward(&net, &feat, &hidden);

        let (oracle_gain, oracle_h1, oracle_h2) =
            straight_line_forward(&net, &feat_vec, &h1_vec, &h2_vec);
        for i in 0..n {
            assert!(
                (gain[i] - oracle_gain[i]).abs() < 1e-12,
                "seed {seed}: gain[{i}] {} vs oracle {}",
                gain[i],
                oracle_gain[i]
            );
        }
        for i in 0..20 * n {
            assert!((hidden_new.h1[(i, 0)] - oracle_h1[i]).abs() < 1e-12);
            assert!((hidden_new.h2[(i, 0)] - oracle_h2[i]).abs() < 1e-12);
        }
    }
}
