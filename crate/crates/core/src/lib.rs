//! Simulation and verification laboratory for fast-slow averaging.
//!
//! Fast drivers `ξ(n)` come from exact orbits of measure-preserving maps or
//! finite Markov chains ([`drivers`]). Slow motions, the averaged flow and the
//! linearized deviation live in [`dynamics`]; the diffusion matrix `A(x)` and
//! its square root in [`covariance`]; Gaussian and Hasselmann limits in
//! [`limits`]; shared-randomness pairings in [`coupling`]; distances and rate
//! fits in [`metrics`]; the Strassen-type cluster set in [`lil`]; and the
//! configuration-driven CLI in [`harness`].

pub mod error;
pub mod path;
pub mod seed;

pub mod drivers;
pub mod dynamics;
pub mod covariance;
pub mod limits;
pub mod coupling;
pub mod metrics;
pub mod lil;
pub mod harness;

pub use error::{Error, Result};
pub use path::{Ensemble, Interpolation, Path};

/// Tool version embedded in every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
