//! Pairing of slow deviations with Brownian-driven limits: block-gap
//! partitions, block sums, quantile coupling and Brownian reassembly.

mod assemble;
mod ensemble;
mod partition;
mod product;
mod quantile;

pub use assemble::{assemble_brownian, AssembledBrownian};
pub use ensemble::{
    block_sums, centered_increments, couple_ensemble, deviation_sum_path, sums_over_partition, write_diagnostics_csv,
    BlockSums, CoupledEnsemble, CoupledPair, CouplingConfig, CouplingDiagnostics, DIAGNOSTICS_HEADER,
};
pub use partition::{block_partition, BlockPartition};
pub use product::{product_coupling, ProductCoupling, ProductCouplingConfig, ProductMember};
pub use quantile::{quantile_couple, QuantileCoupling, MIN_COUPLING_ENSEMBLE};
