use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::assemble::assemble_brownian;
use super::partition::{block_partition, BlockPartition};
use super::quantile::quantile_couple;
use crate::drivers::{make_orbit, DriverSpec};
use crate::dynamics::{averaged_path, step_count, Model};
use crate::error::{Error, Result};
use crate::limits::BrownianPath;
use crate::metrics::kyfan;
use crate::path::{Interpolation, Path};
use crate::seed::seed_derive;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductCouplingConfig {
    pub eps: f64,
    /// Freeze exponent in `(0, 1/3]`.
    pub gamma: f64,
    pub t_end: f64,
    pub members: usize,
    pub seed: u64,
}

/// Paths on the `ε` grid, unscaled (no `√ε` factor):
/// `S^ε(nε) = Σ_{k<n} Σ(X̄(εk))(ξ(k) − ξ̄)`,
/// `V^ε(nε) = Σ_{k<n} Σ(X̄(εm⌊k/m⌋))(ξ(k) − ξ̄)`,
/// `Ξ^ε(nε) = Σ_{k<n} Σ(X̄(εm⌊k/m⌋))Δ𝒲_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductMember {
    pub driver_seed: u64,
    pub s: Path,
    pub v: Path,
    pub xi: Path,
    /// `𝒮(n)` at integer times.
    pub partial_sums: Path,
    /// `𝒲` on unit steps with covariance `ς`.
    pub w_fast: BrownianPath,
    /// `√ε 𝒲(t/ε)`, a `ς`-covariance Brownian motion on the `ε` grid.
    pub w_eps: BrownianPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductCoupling {
    pub partition: BlockPartition,
    /// Freeze length `m = [ε^{γ−1}]` in steps; freeze nodes sit at `εml`.
    pub freeze_len: usize,
    pub x_bar: Path,
    pub members: Vec<ProductMember>,
    /// Ky Fan statistic of `√ε|𝒮_k − 𝒲_k|` across members, per block.
    pub kyfan: Vec<f64>,
    /// `max_k ‖Σ(X̄(εk)) − Σ(X̄(εm⌊k/m⌋))‖₂`.
    pub freeze_error: f64,
    /// `L²εm`, which is at most `L²ε^γ`.
    pub freeze_bound: f64,
    pub pinv_used: bool,
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.clone().svd(false, false).singular_values.iter().copied().fold(0.0, f64::max)
}

fn accumulate(rows: impl Iterator<Item = DVector<f64>>, d: usize, dt: f64) -> Result<Path> {
    let mut acc = DVector::zeros(d);
    let mut values = acc.as_slice().to_vec();
    for r in rows {
        acc += r;
        values.extend(acc.iter());
    }
    Path::new(0.0, dt, d, values, Interpolation::PiecewiseConstant)
}

/// Product-case coupling `B = Σ(x)ξ`: partial sums `𝒮` of the centered driver are
/// block-coupled across the ensemble to a `ς`-covariance Brownian motion `𝒲`,
/// which is rescaled to the slow time scale.
pub fn product_coupling(model: &Model, driver: &DriverSpec, x0: &[f64], cfg: &ProductCouplingConfig) -> Result<ProductCoupling> {
    let field = model.spec().sigma_field().ok_or_else(|| Error::argument("product coupling needs a product-form system"))?;
    if !(cfg.gamma > 0.0 && cfg.gamma <= 1.0 / 3.0) {
        return Err(Error::argument(format!("γ = {} is outside (0, 1/3]", cfg.gamma)));
    }
    let xi_bar = model.xi_bar().ok_or_else(|| Error::argument("product coupling needs the driver mean"))?.to_vec();
    let varsigma = model
        .varsigma()
        .ok_or_else(|| Error::argument("product coupling needs the long-run covariance ς; set it on the model"))?
        .clone();
    let n = step_count(cfg.eps, cfg.t_end)?;
    let partition = block_partition(n as u64)?;
    let p = xi_bar.len();
    let d = model.dim();
    let m = (cfg.eps.powf(cfg.gamma - 1.0) * (1.0 + 1e-12)).floor().max(1.0) as usize;
    let x_bar = averaged_path(model, x0, n as f64 * cfg.eps, cfg.eps)?;
    let sig: Vec<DMatrix<f64>> = x_bar.points().map(|x| field.eval(x)).collect();
    let frozen = |k: usize| &sig[(k / m) * m];
    let freeze_error = (0..n).map(|k| spectral_norm(&(&sig[k] - frozen(k)))).fold(0.0, f64::max);
    let l = model.c2_bound();

    let centered: Vec<(u64, Vec<DVector<f64>>)> = (0..cfg.members as u64)
        .into_par_iter()
        .map(|i| {
            let seed = seed_derive(cfg.seed, "driver", i);
            let mut orbit = make_orbit(driver, seed)?;
            let rows = (0..n).map(|_| DVector::from_iterator(p, orbit.next().iter().zip(&xi_bar).map(|(a, b)| a - b))).collect();
            Ok((seed, rows))
        })
        .collect::<Result<Vec<_>>>()?;

    let block_value = |rows: &[DVector<f64>], k: u64| -> Vec<f64> {
        partition.block_range(k).fold(DVector::zeros(p), |acc, j| acc + &rows[j]).as_slice().to_vec()
    };
    let root = cfg.eps.sqrt();
    let mut w_blocks = vec![Vec::with_capacity(partition.nu as usize); cfg.members];
    let mut ky = Vec::with_capacity(partition.nu as usize);
    for k in 1..=partition.nu {
        let v: Vec<Vec<f64>> = centered.iter().map(|(_, rows)| block_value(rows, k)).collect();
        let c = quantile_couple(&v, &(&varsigma * partition.block as f64))?;
        let dist: Vec<f64> = v
            .iter()
            .zip(&c.w)
            .map(|(a, b)| root * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .collect();
        ky.push(kyfan(&dist));
        for (wb, w) in w_blocks.iter_mut().zip(c.w) {
            wb.push(w);
        }
    }

    let built = centered
        .into_par_iter()
        .zip(w_blocks)
        .enumerate()
        .map(|(i, ((seed, rows), w))| {
            let assembled = assemble_brownian(&w, None, &varsigma, &partition, 1.0, seed_derive(cfg.seed, "brownian", i as u64))?;
            let w_fast = assembled.path;
            let s = accumulate(rows.iter().enumerate().map(|(k, r)| &sig[k] * r), d, cfg.eps)?;
            let v = accumulate(rows.iter().enumerate().map(|(k, r)| frozen(k) * r), d, cfg.eps)?;
            let xi = accumulate((0..n).map(|k| frozen(k) * DVector::from_column_slice(w_fast.increment(k))), d, cfg.eps)?;
            let partial_sums = accumulate(rows.into_iter(), p, 1.0)?;
            let w_eps = w_fast.time_rescale(cfg.eps)?;
            Ok((ProductMember { driver_seed: seed, s, v, xi, partial_sums, w_fast, w_eps }, assembled.pinv_used))
        })
        .collect::<Result<Vec<_>>>()?;
    let pinv_used = built.iter().any(|(_, f)| *f);
    Ok(ProductCoupling {
        partition,
        freeze_len: m,
        x_bar,
        members: built.into_iter().map(|(m, _)| m).collect(),
        kyfan: ky,
        freeze_error,
        freeze_bound: l * l * cfg.eps * m as f64,
        pinv_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::IidLaw;
    use crate::dynamics::{AveragedMode, MatrixField, SystemForm, SystemSpec};

    fn normal_driver() -> DriverSpec {
        DriverSpec::iid(IidLaw::TruncatedNormal { dim: 1, sd: 1.0, cutoff: 4.0 }, 4.0)
    }

    #[test]
    fn constant_sigma_telescopes() {
        let driver = DriverSpec::iid(IidLaw::Uniform { low: vec![-1.0, 0.0], high: vec![1.0, 1.0] }, 2.0);
        let sigma = vec![vec![1.0, 2.0], vec![0.5, -1.0]];
        let model = Model::new(SystemSpec::constant_product(sigma.clone(), 3.0), &driver, 1).unwrap();
        let cfg = ProductCouplingConfig { eps: 1e-3, gamma: 1.0 / 3.0, t_end: 1.0, members: 64, seed: 2 };
        let c = product_coupling(&model, &driver, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(c.freeze_error, 0.0);
        let s = DMatrix::from_fn(2, 2, |i, j| sigma[i][j]);
        for mem in &c.members {
            for (k, v) in mem.v.points().enumerate() {
                let expect = &s * DVector::from_column_slice(mem.partial_sums.point(k));
                assert!((DVector::from_column_slice(v) - expect).amax() < 1e-10);
                assert_eq!(v, mem.s.point(k));
            }
            assert_eq!(mem.w_eps.dt(), 1e-3);
        }
    }

    #[test]
    fn freeze_error_respects_bound() {
        let driver = DriverSpec::iid(IidLaw::Uniform { low: vec![0.0], high: vec![1.0] }, 1.0);
        let spec = SystemSpec {
            dim: 1,
            form: SystemForm::Product { sigma: MatrixField::Sine { base: vec![vec![1.0]], amplitude: vec![vec![0.5]] } },
            c2_bound: 2.0,
            averaged: AveragedMode::ClosedForm,
        };
        let model = Model::new(spec, &driver, 1).unwrap();
        let eps = 1e-3;
        let cfg = ProductCouplingConfig { eps, gamma: 1.0 / 3.0, t_end: 1.0, members: 64, seed: 3 };
        let c = product_coupling(&model, &driver, &[0.4], &cfg).unwrap();
        assert_eq!(c.freeze_len, 100);
        assert!(c.freeze_error > 0.0);
        assert!(c.freeze_error <= c.freeze_bound && c.freeze_bound <= 4.0 * eps.powf(1.0 / 3.0));
    }

    #[test]
    fn normal_blocks_couple_tightly() {
        let model = Model::new(SystemSpec::constant_product(vec![vec![1.0]], 5.0), &normal_driver(), 1).unwrap();
        let eps = 1.0 / 10_322.0;
        let cfg = ProductCouplingConfig { eps, gamma: 0.25, t_end: 1.0, members: 2000, seed: 4 };
        let c = product_coupling(&model, &normal_driver(), &[0.0], &cfg).unwrap();
        assert_eq!(c.partition.block, 1024);
        let worst = c.kyfan.iter().copied().fold(0.0, f64::max);
        assert!(worst < 0.05, "{:?}", c.kyfan);
    }

    #[test]
    fn rejects_bad_inputs() {
        let driver = normal_driver();
        let model = Model::new(SystemSpec::constant_product(vec![vec![1.0]], 5.0), &driver, 1).unwrap();
        let cfg = ProductCouplingConfig { eps: 1e-3, gamma: 0.5, t_end: 1.0, members: 64, seed: 4 };
        assert!(product_coupling(&model, &driver, &[0.0], &cfg).is_err());
        let sine = SystemSpec {
            dim: 1,
            form: SystemForm::SineForcing { damping: 1.0, amplitude: 1.0 },
            c2_bound: 2.0,
            averaged: AveragedMode::MonteCarlo { samples: 1000 },
        };
        let model = Model::new(sine, &driver, 1).unwrap();
        let cfg = ProductCouplingConfig { gamma: 0.3, ..cfg };
        assert!(product_coupling(&model, &driver, &[0.0], &cfg).is_err());
    }
}
