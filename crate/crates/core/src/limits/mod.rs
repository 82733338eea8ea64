//! Gaussian limit `G`, Hasselmann diffusion `H^ε` and the Brownian paths driving them.

mod brownian;
mod sde;

pub use brownian::{brownian, BrownianPath};
pub use sde::{gaussian_limit, hasselmann, hat_g, HasselmannPath, LimitCoefficients};
