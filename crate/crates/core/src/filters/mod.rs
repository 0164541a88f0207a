//! Tracking filters: the classical EKF, its graph-frequency twin, and the
//! GSP-EKF with a graph-filter gain.

pub mod classic;
pub mod gsp;

pub use classic::{
    ekf_run, ekf_step, freq_ekf_run, freq_ekf_step, to_frequency_model, EkfStepOutput,
    FilterState, FreqModel, SeparableStructure,
};
pub use gsp::{
    gsp_ekf_run, gsp_ekf_step, gsp_gain, gsp_gain_tied, init_state as gsp_init_state,
    coincidence_conditions_hold, GspConfig, GspCovariance, GspGain, GspState, GspStepOutput,
    CoincidenceReport,
};
