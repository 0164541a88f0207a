//! Parameter container for the gain network.
//!
//! Layer sizes are a fixed function of the graph size N:
//! input 3N → FC+ReLU 24N → GRU 20N → GRU 20N → FC+ReLU 4N → FC N.
//! The final layer is linear so gain entries can be negative.

use crate::error::{Error, Result};
use crate::util::derive_seed;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Layer widths for a given graph size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub n: usize,
}

impl NetDims {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        Self { n }
    }

    pub fn input(&self) -> usize {
        3 * self.n
    }

    pub fn fc1(&self) -> usize {
        24 * self.n
    }

    pub fn hidden(&self) -> usize {
        20 * self.n
    }

    pub fn fc2(&self) -> usize {
        4 * self.n
    }

    pub fn output(&self) -> usize {
        self.n
    }
}

/// Fully connected layer, y = Wx + b.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl FcParams {
    fn zeros(out: usize, inp: usize) -> Self {
        Self { w: DMatrix::zeros(out, inp), b: DVector::zeros(out) }
    }

    fn count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// One GRU layer. Gate convention:
///   z = σ(W_z x + U_z h + b_z)
///   r = σ(W_r x + U_r h + b_r)
///   n = tanh(W_n x + r ∘ (U_n h + b_n))
///   h′ = (1−z) ∘ n + z ∘ h
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: DMatrix<f64>,
    pub w_r: DMatrix<f64>,
    pub w_n: DMatrix<f64>,
    pub u_z: DMatrix<f64>,
    pub u_r: DMatrix<f64>,
    pub u_n: DMatrix<f64>,
    pub b_z: DVector<f64>,
    pub b_r: DVector<f64>,
    pub b_n: DVector<f64>,
}

impl GruParams {
    fn zeros(hidden: usize, inp: usize) -> Self {
        Self {
            w_z: DMatrix::zeros(hidden, inp),
            w_r: DMatrix::zeros(hidden, inp),
            w_n: DMatrix::zeros(hidden, inp),
            u_z: DMatrix::zeros(hidden, hidden),
            u_r: DMatrix::zeros(hidden, hidden),
            u_n: DMatrix::zeros(hidden, hidden),
            b_z: DVector::zeros(hidden),
            b_r: DVector::zeros(hidden),
            b_n: DVector::zeros(hidden),
        }
    }

    fn count(&self) -> usize {
        self.w_z.len() * 3 + self.u_z.len() * 3 + self.b_z.len() * 3
    }
}

/// All trainable parameters of the gain network. The same struct doubles as
/// the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct GainNetwork {
    pub dims: NetDims,
    pub fc1: FcParams,
    pub gru1: GruParams,
    pub gru2: GruParams,
    pub fc2: FcParams,
    pub fc3: FcParams,
    /// Optional per-feature standardization divisors (non-trainable buffer,
    /// excluded from the flat parameter view). Off by default.
    pub feature_scale: Option<DVector<f64>>,
}

impl GainNetwork {
    /// All-zero parameters (also the shape of a fresh gradient).
    pub fn zeros(n: usize) -> Self {
        let d = NetDims::new(n);
        Self {
            dims: d,
            fc1: FcParams::zeros(d.fc1(), d.input()),
            gru1: GruParams::zeros(d.hidden(), d.fc1()),
            gru2: GruParams::zeros(d.hidden(), d.hidden()),
            fc2: FcParams::zeros(d.fc2(), d.hidden()),
            fc3: FcParams::zeros(d.output(), d.fc2()),
            feature_scale: None,
        }
    }

    /// Deterministic initialization: every weight matrix and FC bias drawn
    /// uniform(−1/√fan_in, 1/√fan_in); GRU biases start at zero.
    pub fn init(n: usize, seed: u64) -> Self {
        let mut net = Self::zeros(n);
        let mut stream = 0u64;
        let mut next_rng = |seed: u64| {
            stream += 1;
            ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
        };
        let fill_mat = |m: &mut DMatrix<f64>, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (m.ncols() as f64).sqrt();
            for x in m.iter_mut() {
                *x = rng.random_range(-bound..bound);
            }
        };
        let fill_bias = |b: &mut DVector<f64>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in b.iter_mut() {
                *x = rng.random_range(-bound..bound);
            }
        };
        fill_mat(&mut net.fc1.w, &mut next_rng(seed));
        fill_bias(&mut net.fc1.b, net.fc1.w.ncols(), &mut next_rng(seed));
        for gru in [&mut net.gru1, &mut net.gru2] {
            fill_mat(&mut gru.w_z, &mut next_rng(seed));
            fill_mat(&mut gru.w_r, &mut next_rng(seed));
            fill_mat(&mut gru.w_n, &mut next_rng(seed));
            fill_mat(&mut gru.u_z, &mut next_rng(seed));
            fill_mat(&mut gru.u_r, &mut next_rng(seed));
            fill_mat(&mut gru.u_n, &mut next_rng(seed));
        }
        fill_mat(&mut net.fc2.w, &mut next_rng(seed));
        fill_bias(&mut net.fc2.b, net.fc2.w.ncols(), &mut next_rng(seed));
        fill_mat(&mut net.fc3.w, &mut next_rng(seed));
        fill_bias(&mut net.fc3.b, net.fc3.w.ncols(), &mut next_rng(seed));
        net
    }

    pub fn n(&self) -> usize {
        self.dims.n
    }

    /// Total number of scalar parameters; a pure function of N.
    pub fn param_count(&self) -> usize {
        self.fc1.count()
            + self.gru1.count()
            + self.gru2.count()
            + self.fc2.count()
            + self.fc3.count()
    }

    /// Closed-form parameter count from the layer dimension table.
    pub fn expected_param_count(n: usize) -> usize {
        let d = NetDims::new(n);
        let fc = |o: usize, i: usize| o * i + o;
        let gru = |h: usize, i: usize| 3 * (h * i) + 3 * (h * h) + 3 * h;
        fc(d.fc1(), d.input())
            + gru(d.hidden(), d.fc1())
            + gru(d.hidden(), d.hidden())
            + fc(d.fc2(), d.hidden())
            + fc(d.output(), d.fc2())
    }

    /// Visits every parameter tensor in a fixed order. The flat layout,
    /// checkpoints, and the optimizer all rely on this ordering.
    pub fn for_each_tensor<'a>(&'a self, mut f: impl FnMut(TensorRef<'a>)) {
        f(TensorRef::Matrix(&self.fc1.w));
        f(TensorRef::Vector(&self.fc1.b));
        for gru in [&self.gru1, &self.gru2] {
            f(TensorRef::Matrix(&gru.w_z));
            f(TensorRef::Matrix(&gru.w_r));
            f(TensorRef::Matrix(&gru.w_n));
            f(TensorRef::Matrix(&gru.u_z));
            f(TensorRef::Matrix(&gru.u_r));
            f(TensorRef::Matrix(&gru.u_n));
            f(TensorRef::Vector(&gru.b_z));
            f(TensorRef::Vector(&gru.b_r));
            f(TensorRef::Vector(&gru.b_n));
        }
        f(TensorRef::Matrix(&self.fc2.w));
        f(TensorRef::Vector(&self.fc2.b));
        f(TensorRef::Matrix(&self.fc3.w));
        f(TensorRef::Vector(&self.fc3.b));
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(TensorMut<'_>)) {
        f(TensorMut::Matrix(&mut self.fc1.w));
        f(TensorMut::Vector(&mut self.fc1.b));
        for gru in [&mut self.gru1, &mut self.gru2] {
            f(TensorMut::Matrix(&mut gru.w_z));
            f(TensorMut::Matrix(&mut gru.w_r));
            f(TensorMut::Matrix(&mut gru.w_n));
            f(TensorMut::Matrix(&mut gru.u_z));
            f(TensorMut::Matrix(&mut gru.u_r));
            f(TensorMut::Matrix(&mut gru.u_n));
            f(TensorMut::Vector(&mut gru.b_z));
            f(TensorMut::Vector(&mut gru.b_r));
            f(TensorMut::Vector(&mut gru.b_n));
        }
        f(TensorMut::Matrix(&mut self.fc2.w));
        f(TensorMut::Vector(&mut self.fc2.b));
        f(TensorMut::Matrix(&mut self.fc3.w));
        f(TensorMut::Vector(&mut self.fc3.b));
    }

    /// Flattened copy of all parameters, in `for_each_tensor` order.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each_tensor(|t| match t {
            TensorRef::Matrix(m) => out.extend(m.iter()),
            TensorRef::Vector(v) => out.extend(v.iter()),
        });
        DVector::from_vec(out)
    }

    /// Rebuilds parameters from a flat vector.
    pub fn from_flat(n: usize, flat: &DVector<f64>) -> Result<Self> {
        let mut net = Self::zeros(n);
        if flat.len() != net.param_count() {
            return Err(Error::ShapeMismatch {
                context: format!(
                    "flat parameter vector has {} entries, network needs {}",
                    flat.len(),
                    net.param_count()
                ),
            });
        }
        let mut idx = 0;
        net.for_each_tensor_mut(|t| match t {
            TensorMut::Matrix(m) => {
                for x in m.iter_mut() {
                    *x = flat[idx];
                    idx += 1;
                }
            }
            TensorMut::Vector(v) => {
                for x in v.iter_mut() {
                    *x = flat[idx];
                    idx += 1;
                }
            }
        });
        Ok(net)
    }

    /// self += other * scale (shape-checked by construction).
    pub fn axpy(&mut self, scale: f64, other: &Self) {
        let flat = other.to_flat();
        let mut idx = 0;
        self.for_each_tensor_mut(|t| match t {
            TensorMut::Matrix(m) => {
                for x in m.iter_mut() {
                    *x += scale * flat[idx];
                    idx += 1;
                }
            }
            TensorMut::Vector(v) => {
                for x in v.iter_mut() {
                    *x += scale * flat[idx];
                    idx += 1;
                }
            }
        });
    }

    pub fn scale(&mut self, s: f64) {
        self.for_each_tensor_mut(|t| match t {
            TensorMut::Matrix(m) => m.iter_mut().for_each(|x| *x *= s),
            TensorMut::Vector(v) => v.iter_mut().for_each(|x| *x *= s),
        });
    }

    pub fn norm(&self) -> f64 {
        let mut sum = 0.0;
        self.for_each_tensor(|t| match t {
            TensorRef::Matrix(m) => sum += m.iter().map(|x| x * x).sum::<f64>(),
            TensorRef::Vector(v) => sum += v.iter().map(|x| x * x).sum::<f64>(),
        });
        sum.sqrt()
    }
}

pub enum TensorRef<'a> {
    Matrix(&'a DMatrix<f64>),
    Vector(&'a DVector<f64>),
}

pub enum TensorMut<'a> {
    Matrix(&'a mut DMatrix<f64>),
    Vector(&'a mut DVector<f64>),
}
