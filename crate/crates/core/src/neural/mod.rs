//! The trainable gain network: a GRU stack mapping filter features to the
//! diagonal of a frequency domain Kalman gain, with hand-rolled backward
//! passes strong enough for end-to-end training through the filter recursion.

pub mod bptt;
pub mod checkpoint;
pub mod network;
pub mod params;

pub use bptt::{unroll_backward, unroll_forward, unroll_mse, UnrollConfig, UnrollOutput, UnrollTape};
pub use checkpoint::{Checkpoint, SeedLineage};
pub use network::{gain_forward, gru_forward, net_forward, Hidden};
pub use params::{FcParams, GainNetwork, GruParams, NetDims};
