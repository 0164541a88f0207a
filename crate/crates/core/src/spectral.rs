//! Laplacian eigendecomposition, the graph Fourier transform, and frequency
//! domain graph filters.
//!
//! The eigenbasis is the coordinate system every filter in this crate works
//! in, so the decomposition pins down two conventions that the rest of the
//! code relies on: eigenvalues sorted ascending, and each eigenvector scaled
//! so its first nonzero component is positive.

use crate::error::{Error, Result};
use crate::graph::Graph;
use nalgebra::{DMatrix, DVector};

/// Relative tolerance for treating two eigenvalues as a tied (repeated)
/// graph frequency.
pub const EIGENVALUE_TIE_TOL: f64 = 1e-9;

/// Laplacian eigendecomposition L = VΛVᵀ with the ordering and sign
/// conventions fixed.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    laplacian: DMatrix<f64>,
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
}

impl SpectralBasis {
    /// Decomposes a symmetric matrix. Asymmetry beyond 1e-8·‖L‖ is rejected.
    pub fn decompose(l: &DMatrix<f64>) -> Result<Self> {
        let n = l.nrows();
        if n != l.ncols() {
            return Err(Error::DimMismatch { expected: n, got: l.ncols() });
        }
        let norm = l.norm();
        let asym = (l - l.transpose()).norm();
        if norm > 0.0 && asym > 1e-8 * norm {
            return Err(Error::NonSymmetric { asymmetry: asym / norm });
        }
        let sym = crate::linalg::symmetrize(l);
        let eig = sym
            .try_symmetric_eigen(f64::EPSILON, 0)
            .ok_or(Error::EigFailure)?;

        // Sort ascending, then fix each eigenvector's sign.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .expect("eigenvalues are finite")
        });
        let mut eigvals = DVector::zeros(n);
        let mut eigvecs = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            eigvals[dst] = eig.eigenvalues[src];
            let mut col = eig.eigenvectors.column(src).clone_owned();
            fix_sign(&mut col);
            eigvecs.set_column(dst, &col);
        }
        Ok(Self { laplacian: l.clone(), eigvecs, eigvals })
    }

    /// Decomposes the Laplacian of a graph.
    pub fn from_graph(graph: &Graph) -> Result<Self> {
        Self::decompose(&graph.laplacian())
    }

    pub fn n(&self) -> usize {
        self.eigvals.len()
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Orthonormal eigenvector matrix V, columns ordered by ascending
    /// eigenvalue.
    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// Eigenvalues λ₁ ≤ … ≤ λ_N.
    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    /// Graph Fourier transform, z̃ = Vᵀz.
    pub fn gft(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(z)?;
        Ok(self.eigvecs.tr_mul(z))
    }

    /// Inverse graph Fourier transform, z = Vz̃.
    pub fn igft(&self, z_tilde: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(z_tilde)?;
        Ok(&self.eigvecs * z_tilde)
    }

    /// Groups of indices whose eigenvalues are tied within
    /// [`EIGENVALUE_TIE_TOL`]·max|λ|. Singleton groups are included.
    pub fn tie_groups(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        let scale = self.eigvals.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        let tol = EIGENVALUE_TIE_TOL * scale.max(1e-300);
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            match groups.last_mut() {
                Some(g) if (self.eigvals[i] - self.eigvals[g[0]]).abs() <= tol => g.push(i),
                _ => groups.push(vec![i]),
            }
        }
        groups
    }

    fn check_dim(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.n() {
            return Err(Error::DimMismatch { expected: self.n(), got: z.len() });
        }
        Ok(())
    }
}

/// Flips the vector so its first nonzero component is positive, making the
/// basis reproducible across runs and platforms.
fn fix_sign(col: &mut DVector<f64>) {
    let scale = col.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if scale == 0.0 {
        return;
    }
    let tol = 1e-12 * scale;
    for &x in col.iter() {
        if x.abs() > tol {
            if x < 0.0 {
                *col *= -1.0;
            }
            return;
        }
    }
}

/// Frequency response g(λ₁..λ_N) of a frequency domain graph filter.
///
/// Tied eigenvalues must carry equal responses; `for_basis` enforces this by
/// construction and `validate` checks it for hand-built responses.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyFilter {
    response: DVector<f64>,
}

impl FrequencyFilter {
    /// Evaluates a response function on the basis eigenvalues. Ties are
    /// evaluated once per group, so the multiplicity rule holds exactly.
    pub fn for_basis(basis: &SpectralBasis, g: impl Fn(f64) -> f64) -> Self {
        let mut response = DVector::zeros(basis.n());
        for group in basis.tie_groups() {
            let value = g(basis.eigvals()[group[0]]);
            for i in group {
                response[i] = value;
            }
        }
        Self { response }
    }

    /// Wraps an explicit response vector, checking it against the basis tie
    /// structure.
    pub fn from_response(basis: &SpectralBasis, response: DVector<f64>) -> Result<Self> {
        if response.len() != basis.n() {
            return Err(Error::DimMismatch { expected: basis.n(), got: response.len() });
        }
        let filter = Self { response };
        filter.validate(basis)?;
        Ok(filter)
    }

    pub fn validate(&self, basis: &SpectralBasis) -> Result<()> {
        for group in basis.tie_groups() {
            let first = self.response[group[0]];
            for &i in &group {
                if self.response[i] != first {
                    return Err(Error::InvalidInput(format!(
                        "tied eigenvalues {} and {} have different responses",
                        group[0], i
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    /// Applies the filter in the frequency domain: [ỹ]_n = g(λ_n)·[x̃]_n.
    pub fn apply(&self, x_tilde: &DVector<f64>) -> Result<DVector<f64>> {
        if x_tilde.len() != self.response.len() {
            return Err(Error::DimMismatch {
                expected: self.response.len(),
                got: x_tilde.len(),
            });
        }
        Ok(self.response.component_mul(x_tilde))
    }
}

/// Materializes g(L) = V·g(Λ)·Vᵀ. Quadratic storage; meant for tests and
/// oracles, not the filtering hot path.
pub fn filter_matrix(basis: &SpectralBasis, filter: &FrequencyFilter) -> DMatrix<f64> {
    let g = DMatrix::from_diagonal(filter.response());
    basis.eigvecs() * g * basis.eigvecs().transpose()
}
