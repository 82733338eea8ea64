//! Strassen-type law of the iterated logarithm: the maps Φ and Ψ, the
//! unit-energy class K, cluster-set functionals and verification runs.

mod operators;
mod taut;

pub use operators::{
    apply_phi, apply_phi_psi, apply_psi, cluster_extreme, endpoint_extreme_closed_form, endpoint_maximizer, energy, extreme_rays,
    from_slopes, invert_phi, invert_psi, sample_k, LilCoefficients, PHI_RESIDUAL_TOLERANCE,
};
pub use taut::{taut_string_fixed, taut_string_free, unit_energy};
mod run;
pub use run::{
    geometric_grid, lil_normalizer, lil_run, HullCandidate, HullContext, HullDistance, LilConfig, LilReport, LIL_EPS_CEILING,
    RUNNING_MAX_BAND,
};
