//! The diffusion matrix `A(x)`: Green–Kubo estimation over discrete and
//! suspension drivers, and its symmetric PSD square root `σ(x)`.

mod field;
mod green_kubo;
mod psd;

pub use field::{write_entries_csv, CovarianceField, CovarianceSource, FrozenCovarianceField};
pub use green_kubo::{
    green_kubo, lag_covariance, suspension_covariance, CovarianceEntry, LagCovariance, DEFAULT_K_TRUNC,
    TAIL_WARNING_FRACTION,
};
pub use psd::{clip_psd, pinv_psd, sqrt_psd, ASYMMETRY_TOLERANCE};
