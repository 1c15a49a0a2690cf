//! Dual-branch (raw waveform and log-mel spectrogram) network for respiratory
//! sound event classification, with its data pipeline and command-line tools.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod dataio;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod ndiff;
pub mod train;

pub use error::{Error, Result};
