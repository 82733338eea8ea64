//! Path distances, coupling statistics, rate regression and distributional tests.

mod distance;
mod stats;

pub use distance::{
    assignment, kyfan, prokhorov_bound, sup_distance, wasserstein, wasserstein_from_costs, WassersteinEstimate,
    EXACT_ASSIGNMENT_LIMIT,
};
pub use stats::{
    kolmogorov_survival, ks_normal, ks_two_sample, mardia_skewness, moment_of_errors, moment_sup_error, rate_fit,
    MomentEstimate, RateReport, TestOutcome, BOOTSTRAP_RESAMPLES,
};
