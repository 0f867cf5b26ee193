//! Over-the-air phase calibration of a hybrid analog-digital phased array.
//!
//! The crate simulates the pilot measurements of a transmit array whose
//! analog phase shifters drift from their nominal settings, jointly estimates
//! the drift and the line-of-sight channel by block coordinate descent,
//! evaluates Cramér-Rao bounds for the phase estimates and designs transmit
//! patterns that lower them.
//!
//! Modules follow the processing chain:
//!
//! - [`model`]: array responses, channel, pilots and measurement synthesis.
//! - [`channel_est`]: 4-D FFT grid search and gradient refinement of the channel.
//! - [`phase_est`]: per-chain deviation estimation on the complex circle.
//! - [`calibrator`]: the alternating estimator and gauge alignment.
//! - [`crb`]: Fisher information and Cramér-Rao bounds.
//! - [`beam_opt`]: transmit-pattern design.
//! - [`harness`]: scenarios, Monte-Carlo sweeps, file formats.

pub mod beam_opt;
pub mod calibrator;
pub mod channel_est;
pub mod crb;
pub mod error;
pub mod harness;
pub mod manifold;
pub mod model;
pub mod phase_est;

pub use error::{Error, Result};

/// Complex sample type used throughout.
pub type C64 = num_complex::Complex<f64>;
