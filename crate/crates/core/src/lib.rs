//! Boundary spectral data of (−Δ)^a + q on an interval: forward maps,
//! identity checks, observability and potential reconstruction.
// `!(x > 0.0)` is used throughout to reject NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli_io;
pub mod error;
pub mod forward;
pub mod inverse;
pub mod opcore;
pub mod spectral;
pub mod waveobs;

pub use error::{Error, Result};
