//! Frequency-heterogeneous flow matching on orthonormal Haar bands.
//!
//! Images are split into a low band and a stacked high band. Each band follows
//! its own interpolation schedule between noise and data, a factorized model
//! predicts the clean sample, and a deterministic ODE sampler integrates the
//! implied velocity.

pub mod cli;
pub mod error;
pub mod fpxt;
pub mod haar;
pub mod objective;
pub mod oracle;
pub mod predictor;
pub mod sampler;
pub mod schedules;
pub mod trainer;
pub mod transport;

pub use error::{Error, Result};
