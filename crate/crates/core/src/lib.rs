//! Tracking of time-varying graph signals through nonlinear state-space
//! models.
//!
//! Three filters share one model abstraction:
//!
//! * [`filters::classic`] — the extended Kalman filter, in the vertex domain
//!   and (equivalently) in the graph frequency domain;
//! * [`filters::gsp`] — the EKF with its gain constrained to a frequency
//!   domain graph filter, which makes the gain a closed-form diagonal and
//!   removes every matrix inversion from the loop;
//! * [`knet`] — the learned variant, where a GRU network produces the
//!   diagonal gain and is trained end-to-end through the filter recursion.
//!
//! Supporting modules: [`graph`]/[`spectral`] for topology and the GFT,
//! [`dynamics`]/[`dataset`] for simulation and persistence, [`neural`] for
//! the network and its backpropagation-through-time machinery, and
//! [`scenarios`] for the bundled benchmark systems.

pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod filters;
pub mod graph;
pub mod knet;
pub mod linalg;
pub mod neural;
pub mod scenarios;
pub mod spectral;
pub mod util;

pub use dataset::{Dataset, DatasetMetadata, Trajectory};
pub use dynamics::{
    generate_dataset, numerical_jacobian, simulate_trajectory, NoiseProcess, StateSpaceModel,
};
pub use error::{Error, Result};
pub use filters::{
    ekf_step, freq_ekf_step, gsp_ekf_step, gsp_gain, to_frequency_model, FilterState, FreqModel,
    GspConfig, GspGain,
};
pub use graph::{random_regular_graph, Graph};
pub use knet::{
    evaluate, grid_search_variance, knet_step, train, Estimator, EvalReport, TrainConfig,
    TrainOutput,
};
pub use neural::{Checkpoint, GainNetwork, Hidden};
pub use scenarios::{
    apply_mismatch, build_system, psse_jacobian, psse_measurement, scenario1, scenario2,
    MismatchSpec, PowerCase, ScenarioId, ScenarioSystem,
};
pub use spectral::{filter_matrix, FrequencyFilter, SpectralBasis};
