//! Daubechies filters, cascade tabulation of the scaling and mother
//! wavelet functions, and periodized wavelet bases on `[0, 1)` evaluated
//! by linear interpolation of the tabulations.

mod cascade;
mod filter;
mod periodized;

pub use cascade::{cascade, cascade_with, mother_wavelet, CascadeOptions, TabulatedFunction};
pub use filter::{daubechies_filter, QmfFilter, MAX_ORDER};
pub use periodized::{BasisFunction, PeriodizedBasis, MIN_DEPTH_MARGIN};

use thiserror::Error;

/// Default tabulation depth: `2^14` knots per unit of support.
pub const DEFAULT_DEPTH: u32 = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("unsupported Daubechies order {0} (supported: 1..=10)")]
    UnsupportedOrder(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cascade did not converge: {0}")]
    NumericalFailure(String),
    #[error("evaluation point {0} outside [0, 1)")]
    Domain(f64),
    #[error("basis index {index} outside 1..={max}")]
    Index { index: usize, max: usize },
}
