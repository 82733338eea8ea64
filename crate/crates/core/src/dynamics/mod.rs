//! Slow motions: the discrete recurrence, the continuous system over a
//! suspension driver, the averaged flow, and the linearized deviation.

mod slow;
mod system;

pub use slow::{
    averaged_field, averaged_flow, averaged_path, discretize_suspension, gauss_legendre8, gronwall_check,
    linearized_deviation_z, normalized_deviation, slow_continuous, slow_discrete, step_count, suspension_gap,
    suspension_gap_bound, AveragedEstimate, GronwallCheck, LinearizedDeviation, SuspensionDiscretization,
    DEFAULT_SUBSTEP_FRACTION,
};
pub use system::{AveragedMode, DriftField, MatrixField, Model, SystemForm, SystemSpec};
