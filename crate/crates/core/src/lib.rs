//! GraphCliff: gated fusion of short-range edge-aware message passing and
//! long-range Chebyshev propagation for molecular property regression, with
//! the activity-cliff data pipeline and over-smoothing diagnostics around it.

pub mod analysis;
pub mod chem;
pub mod cliff;
pub mod fingerprint;
pub mod graphnn;
pub mod tensor;
pub mod train;

mod error;

pub use error::{Error, Result};

/// Fixed float formatting for CSV outputs: scientific notation with 17
/// significant digits, enough to round-trip every `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}
