//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the tracking library.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix handed to the spectral decomposition is not symmetric.
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NonSymmetric { asymmetry: f64 },

    /// The symmetric eigensolver did not converge.
    #[error("eigendecomposition failed to converge")]
    EigFailure,

    /// Vector or matrix dimensions do not match the graph size.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    /// No d-regular graph exists for the requested parameters.
    #[error("no {degree}-regular graph on {n} nodes (need n*d even and d < n)")]
    InfeasibleDegree { n: usize, degree: usize },

    /// Regular-graph sampling never produced a connected graph.
    #[error("failed to sample a connected graph in {attempts} attempts")]
    ConnectivityRetryExceeded { attempts: usize },

    /// Edge removal kept disconnecting the graph.
    #[error("failed to drop {k} edges without disconnecting the graph in {attempts} attempts")]
    DisconnectRetryExceeded { k: usize, attempts: usize },

    /// A state, observation, or estimate became NaN/Inf.
    #[error("non-finite state in {context} at step {step}")]
    NonFiniteState { context: String, step: usize },

    /// Training loss became NaN/Inf.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// Innovation covariance is singular or too ill-conditioned to invert.
    #[error("innovation covariance is singular (condition estimate {cond:.3e})")]
    SingularInnovationCov { cond: f64 },

    /// A ddiag denominator of the graph-filter gain fell below the floor.
    #[error("degenerate innovation: diagonal entry {index} is {value:.3e} (floor 1e-14)")]
    DegenerateInnovation { index: usize, value: f64 },

    /// Backward pass requested before a forward pass was recorded.
    #[error("no forward pass recorded; run the unroll before asking for gradients")]
    GraphNotRecorded,

    /// Model and data disagree on shapes.
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    /// Test data overlaps the data the network was trained on.
    #[error("lineage violation: {overlap} test trajectories appear in the training set")]
    LineageViolation { overlap: usize },

    /// Serialized artifact carries an unsupported format version.
    #[error("unsupported format version {found} (supported: {supported})")]
    FormatVersionMismatch { found: u32, supported: u32 },

    /// Stored checksum does not match the file contents.
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    /// Malformed graph, power case, or other input description.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
