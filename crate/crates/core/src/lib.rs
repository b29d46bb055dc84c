//! UWB TDoA positioning with transformer-based error correction.
//!
//! The crate covers the whole chain: a Levenberg-Marquardt TDoA solver, a
//! warehouse channel simulator producing raw CIRs, CIR preprocessing,
//! patching and positional encodings, a small f64 transformer with training,
//! operation counting and error metrics.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cir;
pub mod complexity;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod patching;
pub mod pipeline;
pub mod tdoa;

pub use error::{Error, Result};
