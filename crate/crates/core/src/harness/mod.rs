//! Experiment configuration, orchestration and artifact persistence.
//!
//! Every CSV artifact starts with `# fastslow <version> config=<digest>`; every
//! JSON artifact carries `tool_version` and `config_digest` fields. The digest
//! is the SHA-256 of the configuration's canonical JSON (sorted keys, output
//! directory removed).
//!
//! Output layout under the output directory:
//!
//! | kind | files |
//! |------|-------|
//! | simulate | `simulate/eps_KK/member_IIIII.csv`, `member_manifest.json`, `averaged.csv`; `simulate.json` |
//! | covariance | `covariance.csv` with columns `x1..xd,i,j,A_ij,stderr,K_trunc,tail_estimate` |
//! | rates | `rates.json` (`grid, stats, slope, intercept, rms`) |
//! | couple | `couple_diagnostics.csv` with columns `eps,block_len,gap_len,nu,kyfan,sup_err,L2_err`; `couple.json` |
//! | lil | `lil.json` (`eps_grid, sup_distances, running_max, cluster_extreme, tolerance_band`) |
//!
//! Path CSVs have columns `t,x1..xd`.

mod config;
mod run;
mod selftest;

pub use config::{CovarianceSettings, ExperimentConfig, ExperimentKind, LilSettings};
pub use run::{provenance_line, resolve_output_dir, run, RunOutcome, DEFAULT_OUTPUT_DIR, OUTPUT_ENV};
pub use selftest::{selftest, selftest_suite, SelftestReport};
