use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::assemble::{assemble_brownian, AssembledBrownian};
use super::partition::{block_partition, BlockPartition};
use super::quantile::quantile_couple;
use crate::drivers::{make_orbit, DriverOrbit, DriverSpec};
use crate::dynamics::{averaged_path, normalized_deviation, slow_discrete, step_count, Model};
use crate::error::{Error, Result};
use crate::limits::{gaussian_limit, BrownianPath, LimitCoefficients};
use crate::metrics::{kyfan, sup_distance};
use crate::path::{Interpolation, Path};
use crate::seed::{pairwise_mean, seed_derive};

/// Rows `j < n` of `B̂(X̄(jε), ξ(j)) = B(X̄(jε), ξ(j)) − B̄(X̄(jε))`, row-major.
pub fn centered_increments(model: &Model, orbit: &mut DriverOrbit, x_bar: &Path, eps: f64, n: usize) -> Result<Vec<f64>> {
    if n as f64 * eps > x_bar.t_end() * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::argument(format!("X̄ ends at {} before Nε = {}", x_bar.t_end(), n as f64 * eps)));
    }
    let d = model.dim();
    let mut out = Vec::with_capacity(n * d);
    let mut xi = vec![0.0; orbit.dim()];
    let mut b = vec![0.0; d];
    let mut bb = vec![0.0; d];
    for j in 0..n {
        let x = x_bar.value_at(j as f64 * eps);
        orbit.next_into(&mut xi);
        model.b(&x, &xi, &mut b);
        model.b_bar(&x, &mut bb);
        out.extend(b.iter().zip(&bb).map(|(u, v)| u - v));
    }
    Ok(out)
}

/// `√ε S^ε(t) = √ε Σ_{j<[t/ε]} B̂_j` on the `ε` grid.
pub fn deviation_sum_path(increments: &[f64], dim: usize, eps: f64) -> Result<Path> {
    let n = increments.len() / dim;
    let root = eps.sqrt();
    let mut acc = vec![0.0; dim];
    let mut values = Vec::with_capacity((n + 1) * dim);
    values.extend_from_slice(&acc);
    for row in increments.chunks_exact(dim) {
        for (a, r) in acc.iter_mut().zip(row) {
            *a += r;
        }
        values.extend(acc.iter().map(|a| a * root));
    }
    Path::new(0.0, eps, dim, values, Interpolation::PiecewiseConstant)
}

/// `√ε`-scaled sums of the centered increments over blocks, gaps and the remainder.
/// The conditional-expectation remainder `R¹` is identically zero here.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSums {
    pub blocks: Vec<Vec<f64>>,
    pub gaps: Vec<Vec<f64>>,
    pub remainder: Vec<f64>,
}

fn range_sum(increments: &[f64], dim: usize, range: std::ops::Range<usize>, scale: f64) -> Vec<f64> {
    let mut s = vec![0.0; dim];
    for row in increments[range.start * dim..range.end * dim].chunks_exact(dim) {
        for (a, r) in s.iter_mut().zip(row) {
            *a += r;
        }
    }
    s.iter().map(|v| v * scale).collect()
}

pub fn sums_over_partition(increments: &[f64], dim: usize, eps: f64, partition: &BlockPartition) -> Result<BlockSums> {
    if increments.len() != partition.n as usize * dim {
        return Err(Error::argument(format!("{} increments for N = {}", increments.len() / dim, partition.n)));
    }
    let root = eps.sqrt();
    Ok(BlockSums {
        blocks: (1..=partition.nu).map(|k| range_sum(increments, dim, partition.block_range(k), root)).collect(),
        gaps: (1..=partition.nu).map(|k| range_sum(increments, dim, partition.gap_range(k), root)).collect(),
        remainder: range_sum(increments, dim, partition.remainder(), root),
    })
}

/// `V_k = √ε Σ_{j∈block k} B̂(X̄(jε), ξ(j))`, consuming `N` driver values.
pub fn block_sums(model: &Model, orbit: &mut DriverOrbit, x_bar: &Path, eps: f64, partition: &BlockPartition) -> Result<BlockSums> {
    let inc = centered_increments(model, orbit, x_bar, eps, partition.n as usize)?;
    sums_over_partition(&inc, model.dim(), eps, partition)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingConfig {
    pub eps: f64,
    pub t_end: f64,
    pub members: usize,
    pub seed: u64,
}

/// One ensemble member: its slow path, deviation sum, assembled Brownian path
/// and block records `(V_k, W_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPair {
    pub driver_seed: u64,
    pub slow: Path,
    pub deviation: Path,
    pub brownian: BrownianPath,
    pub v_blocks: Vec<Vec<f64>>,
    pub w_blocks: Vec<Vec<f64>>,
    pub pinv_used: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledEnsemble {
    pub eps: f64,
    pub partition: BlockPartition,
    pub x_bar: Path,
    /// `σ(X̄(jε))` for `j ≤ N`.
    pub sigmas: Vec<DMatrix<f64>>,
    pub pairs: Vec<CoupledPair>,
    /// Ky Fan statistic of `|V_k − W_k|` across members, per block.
    pub kyfan: Vec<f64>,
}

/// Couple an ensemble of slow deviations to Brownian paths: block sums are
/// quantile-coupled across members to `N(0, ε Σ_j σσᵀ(X̄(jε)))`, then each
/// member's Brownian path is assembled to reproduce its coupled block values.
pub fn couple_ensemble(
    model: &Model,
    driver: &DriverSpec,
    sigma: &(dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Sync),
    x0: &[f64],
    cfg: &CouplingConfig,
) -> Result<CoupledEnsemble> {
    let n = step_count(cfg.eps, cfg.t_end)?;
    let partition = block_partition(n as u64)?;
    let d = model.dim();
    let x_bar = averaged_path(model, x0, n as f64 * cfg.eps, cfg.eps)?;
    let sigmas = x_bar.points().map(sigma).collect::<Result<Vec<_>>>()?;
    let m = sigmas[0].ncols();

    struct Partial {
        seed: u64,
        slow: Path,
        deviation: Path,
        v: Vec<Vec<f64>>,
    }
    let partials = (0..cfg.members as u64)
        .into_par_iter()
        .map(|i| {
            let seed = seed_derive(cfg.seed, "driver", i);
            let mut orbit = make_orbit(driver, seed)?;
            let slow = slow_discrete(model, &mut orbit.clone(), cfg.eps, x0, n as f64 * cfg.eps)?;
            let inc = centered_increments(model, &mut orbit, &x_bar, cfg.eps, n)?;
            let deviation = deviation_sum_path(&inc, d, cfg.eps)?;
            let v = sums_over_partition(&inc, d, cfg.eps, &partition)?.blocks;
            Ok(Partial { seed, slow, deviation, v })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut w_blocks = vec![Vec::with_capacity(partition.nu as usize); cfg.members];
    let mut ky = Vec::with_capacity(partition.nu as usize);
    for k in 0..partition.nu as usize {
        let mut target = DMatrix::<f64>::zeros(d, d);
        for j in partition.block_range(k as u64 + 1) {
            target += &sigmas[j] * sigmas[j].transpose();
        }
        target *= cfg.eps;
        let v: Vec<Vec<f64>> = partials.iter().map(|p| p.v[k].clone()).collect();
        let c = quantile_couple(&v, &target)?;
        let dist: Vec<f64> = v
            .iter()
            .zip(&c.w)
            .map(|(a, b)| (DVector::from_column_slice(a) - DVector::from_column_slice(b)).norm())
            .collect();
        ky.push(kyfan(&dist));
        for (wb, w) in w_blocks.iter_mut().zip(c.w) {
            wb.push(w);
        }
    }

    let identity = DMatrix::identity(m, m);
    let pairs = partials
        .into_par_iter()
        .zip(w_blocks)
        .enumerate()
        .map(|(i, (p, w))| {
            let AssembledBrownian { path, pinv_used } = assemble_brownian(
                &w,
                Some(&sigmas),
                &identity,
                &partition,
                cfg.eps,
                seed_derive(cfg.seed, "brownian", i as u64),
            )?;
            Ok(CoupledPair {
                driver_seed: p.seed,
                slow: p.slow,
                deviation: p.deviation,
                brownian: path,
                v_blocks: p.v,
                w_blocks: w,
                pinv_used,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoupledEnsemble { eps: cfg.eps, partition, x_bar, sigmas, pairs, kyfan: ky })
}

/// Per-ε summary of a coupled ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingDiagnostics {
    pub eps: f64,
    pub block_len: u64,
    pub gap_len: u64,
    pub nu: u64,
    /// Largest per-block Ky Fan statistic.
    pub kyfan: f64,
    /// `E sup_t |√ε S^ε(t) − ∫₀ᵗ σ(X̄)dW|²`.
    pub sup_err: f64,
    /// `E sup_t |ε^{−1/2}(X^ε − X̄)(t) − G(t)|²`.
    pub l2_err: f64,
}

pub const DIAGNOSTICS_HEADER: &str = "eps,block_len,gap_len,nu,kyfan,sup_err,L2_err";

impl CoupledEnsemble {
    pub fn limit_coefficients(&self, model: &Model) -> Result<LimitCoefficients> {
        let grads = self.x_bar.points().map(|p| model.grad_b_bar(p)).collect();
        LimitCoefficients::new(0.0, self.eps, grads, self.sigmas.clone())
    }

    /// `G` for each member, driven by its assembled Brownian path.
    pub fn gaussian_limits(&self, model: &Model) -> Result<Vec<Path>> {
        let c = self.limit_coefficients(model)?;
        self.pairs.par_iter().map(|p| gaussian_limit(&c, &p.brownian)).collect()
    }

    /// `sup_t |√ε S^ε − ∫σ(X̄)dW|` per member.
    pub fn integral_errors(&self) -> Result<Vec<f64>> {
        let zero = vec![DMatrix::zeros(self.x_bar.dim(), self.x_bar.dim()); self.sigmas.len()];
        let c = LimitCoefficients::new(0.0, self.eps, zero, self.sigmas.clone())?;
        self.pairs
            .par_iter()
            .map(|p| {
                let integral = gaussian_limit(&c, &p.brownian)?.with_interpolation(Interpolation::PiecewiseConstant);
                sup_distance(&p.deviation, &integral)
            })
            .collect()
    }

    /// `sup_t |ε^{−1/2}(X^ε − X̄) − G|` per member.
    pub fn limit_errors(&self, model: &Model) -> Result<Vec<f64>> {
        let gs = self.gaussian_limits(model)?;
        self.pairs
            .par_iter()
            .zip(gs)
            .map(|(p, g)| {
                let z = normalized_deviation(&p.slow, &self.x_bar.clone().with_interpolation(Interpolation::PiecewiseConstant), self.eps)?;
                sup_distance(&z, &g.with_interpolation(Interpolation::PiecewiseConstant))
            })
            .collect()
    }

    pub fn diagnostics(&self, model: &Model) -> Result<CouplingDiagnostics> {
        let sq = |v: Vec<f64>| pairwise_mean(&v.iter().map(|e| e * e).collect::<Vec<_>>());
        Ok(CouplingDiagnostics {
            eps: self.eps,
            block_len: self.partition.block,
            gap_len: self.partition.gap,
            nu: self.partition.nu,
            kyfan: self.kyfan.iter().copied().fold(0.0, f64::max),
            sup_err: sq(self.integral_errors()?),
            l2_err: sq(self.limit_errors(model)?),
        })
    }
}

pub fn write_diagnostics_csv<W: Write>(mut out: W, rows: &[CouplingDiagnostics], provenance: Option<&str>) -> Result<()> {
    if let Some(p) = provenance {
        writeln!(out, "# {p}")?;
    }
    writeln!(out, "{DIAGNOSTICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{:e},{},{},{},{:e},{:e},{:e}", r.eps, r.block_len, r.gap_len, r.nu, r.kyfan, r.sup_err, r.l2_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::IidLaw;
    use crate::dynamics::SystemSpec;
    use crate::metrics::ks_normal;

    fn normal_driver() -> DriverSpec {
        DriverSpec::iid(IidLaw::TruncatedNormal { dim: 1, sd: 1.0, cutoff: 6.0 }, 6.0)
    }

    fn uniform() -> DriverSpec {
        DriverSpec::iid(IidLaw::Uniform { low: vec![-1.0], high: vec![1.0] }, 1.0)
    }

    #[test]
    fn zero_fluctuation_gives_zero_blocks() {
        let model = Model::new(SystemSpec::scalar_product(0.0, 0.0, 1.0), &uniform(), 1).unwrap();
        let p = block_partition(1000).unwrap();
        let x_bar = averaged_path(&model, &[0.3], 1.0, 1e-3).unwrap();
        let s = block_sums(&model, &mut make_orbit(&uniform(), 2).unwrap(), &x_bar, 1e-3, &p).unwrap();
        assert!(s.blocks.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn single_block_of_normals_is_gaussian() {
        let model = Model::new(SystemSpec::constant_product(vec![vec![1.0]], 7.0), &normal_driver(), 1).unwrap();
        let eps = 0.05;
        let p = block_partition(20).unwrap();
        assert_eq!((p.nu, p.block), (1, 9));
        let x_bar = averaged_path(&model, &[0.0], 1.0, eps).unwrap();
        let v: Vec<f64> = (0..2000)
            .map(|s| block_sums(&model, &mut make_orbit(&normal_driver(), s).unwrap(), &x_bar, eps, &p).unwrap().blocks[0][0])
            .collect();
        assert!(ks_normal(&v, 0.0, eps * 9.0, 0.01).unwrap().pass);
    }

    #[test]
    fn blocks_gaps_and_remainder_recover_the_total() {
        let model = Model::new(SystemSpec::scalar_product(1.0, 0.5, 2.0), &uniform(), 1).unwrap();
        let eps = 1e-3;
        let x_bar = averaged_path(&model, &[0.2], 1.0, eps).unwrap();
        let inc = centered_increments(&model, &mut make_orbit(&uniform(), 9).unwrap(), &x_bar, eps, 1000).unwrap();
        let p = block_partition(1000).unwrap();
        let s = sums_over_partition(&inc, 1, eps, &p).unwrap();
        let total = deviation_sum_path(&inc, 1, eps).unwrap().last()[0];
        let parts: f64 = s.blocks.iter().chain(&s.gaps).map(|v| v[0]).sum::<f64>() + s.remainder[0];
        assert!((total - parts).abs() < 1e-12);
        assert!(s.gaps.iter().chain([&s.remainder]).any(|v| v[0] != 0.0));
    }

    #[test]
    fn coupled_ensemble_reproduces_block_targets() {
        let model = Model::new(SystemSpec::scalar_product(1.0, 0.5, 2.0), &uniform(), 1).unwrap();
        let sigma = |x: &[f64]| Ok(DMatrix::from_element(1, 1, (1.0 + 0.5 * x[0]) / 3f64.sqrt()));
        let cfg = CouplingConfig { eps: 1e-3, t_end: 1.0, members: 100, seed: 5 };
        let e = couple_ensemble(&model, &uniform(), &sigma, &[0.2], &cfg).unwrap();
        assert_eq!(e.pairs.len(), 100);
        for pair in &e.pairs {
            for k in 1..=e.partition.nu {
                let s: f64 = e.partition.block_range(k).map(|j| e.sigmas[j][(0, 0)] * pair.brownian.increment(j)[0]).sum();
                assert!((s - pair.w_blocks[k as usize - 1][0]).abs() < 1e-12);
            }
        }
        let diag = e.diagnostics(&model).unwrap();
        assert!(diag.kyfan < 0.2 && diag.sup_err > 0.0 && diag.l2_err > 0.0, "{diag:?}");
        let again = couple_ensemble(&model, &uniform(), &sigma, &[0.2], &cfg).unwrap();
        assert_eq!(again, e);
        let mut csv = Vec::new();
        write_diagnostics_csv(&mut csv, &[diag], Some("p")).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("# p\neps,block_len,gap_len,nu,kyfan,sup_err,L2_err\n"));
    }
}
