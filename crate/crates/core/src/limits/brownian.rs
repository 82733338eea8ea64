use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::sqrt_psd;
use crate::dynamics::step_count;
use crate::error::{Error, Result};
use crate::path::{Interpolation, Path};
use crate::seed::stream;

/// Brownian increments `ΔW_k ~ N(0, dt·C)` on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    t0: f64,
    dt: f64,
    dim: usize,
    covariance: DMatrix<f64>,
    seed: Option<u64>,
    /// `steps × dim`, row `k` is `W(t_{k+1}) − W(t_k)`.
    increments: Vec<f64>,
}

fn check_psd(c: &DMatrix<f64>) -> Result<()> {
    if !c.is_square() || c.iter().any(|v| !v.is_finite()) || (c - c.transpose()).amax() > 1e-12 * c.amax().max(1.0) {
        return Err(Error::argument("covariance must be a finite symmetric matrix"));
    }
    let eig = SymmetricEigen::new(c.clone()).eigenvalues;
    let scale = eig.iter().copied().fold(0.0, f64::max);
    if eig.iter().any(|l| *l < -1e-10 * scale.max(1.0)) {
        return Err(Error::argument(format!("covariance is not PSD (eigenvalues {eig:?})")));
    }
    Ok(())
}

/// Exact-distribution Brownian increments on `[0, T]` with covariance `C` per
/// unit time, generated from the seed's stream in row-major order.
pub fn brownian(seed: u64, t_end: f64, dt: f64, dim: usize, covariance: &DMatrix<f64>) -> Result<BrownianPath> {
    if covariance.nrows() != dim {
        return Err(Error::argument(format!("covariance is {}×{}, dimension is {dim}", covariance.nrows(), covariance.ncols())));
    }
    check_psd(covariance)?;
    let steps = step_count(dt, t_end)?;
    let root = sqrt_psd(covariance)? * dt.sqrt();
    let mut rng = stream(seed);
    let mut z = vec![0.0; dim];
    let mut increments = Vec::with_capacity(steps * dim);
    for _ in 0..steps {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for i in 0..dim {
            increments.push((0..dim).map(|j| root[(i, j)] * z[j]).sum());
        }
    }
    Ok(BrownianPath { t0: 0.0, dt, dim, covariance: covariance.clone(), seed: Some(seed), increments })
}

impl BrownianPath {
    /// A path from given increments (for example, reassembled from blocks).
    pub fn from_increments(t0: f64, dt: f64, dim: usize, covariance: DMatrix<f64>, increments: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || dim == 0 || increments.len() % dim != 0 || increments.iter().any(|v| !v.is_finite()) {
            return Err(Error::argument("increments must be finite with dt > 0 and a whole number of rows"));
        }
        check_psd(&covariance)?;
        Ok(BrownianPath { t0, dt, dim, covariance, seed: None, increments })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(t_k)` at every node, starting from 0.
    pub fn path(&self) -> Path {
        let mut values = Vec::with_capacity((self.steps() + 1) * self.dim);
        let mut w = vec![0.0; self.dim];
        values.extend_from_slice(&w);
        for inc in self.increments.chunks_exact(self.dim) {
            for (wi, di) in w.iter_mut().zip(inc) {
                *wi += di;
            }
            values.extend_from_slice(&w);
        }
        Path::new(self.t0, self.dt, self.dim, values, Interpolation::Linear).expect("finite increments")
    }

    /// `Σ_k |ΔW_k|²`.
    pub fn quadratic_variation(&self) -> f64 {
        self.increments.iter().map(|v| v * v).sum()
    }

    /// Sum every `factor` consecutive increments (a coarser grid on the same path).
    pub fn coarsen(&self, factor: usize) -> Result<BrownianPath> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(Error::argument(format!("factor {factor} does not divide {} steps", self.steps())));
        }
        let d = self.dim;
        let mut inc = vec![0.0; self.increments.len() / factor];
        for (k, row) in self.increments.chunks_exact(d).enumerate() {
            for (i, v) in row.iter().enumerate() {
                inc[(k / factor) * d + i] += v;
            }
        }
        Ok(BrownianPath { dt: self.dt * factor as f64, increments: inc, seed: None, ..self.clone() })
    }

    /// `W_ε(t) = √ε 𝒲(t/ε)`: time step scaled by `ε`, increments by `√ε`.
    /// Equal in law to a Brownian motion with the same covariance.
    pub fn time_rescale(&self, eps: f64) -> Result<BrownianPath> {
        if !(eps > 0.0) {
            return Err(Error::argument("ε must be positive"));
        }
        let s = eps.sqrt();
        Ok(BrownianPath {
            t0: self.t0 * eps,
            dt: self.dt * eps,
            increments: self.increments.iter().map(|v| v * s).collect(),
            seed: None,
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_at_t_matches() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let ends: Vec<f64> = (0..10_000u64).map(|s| brownian(s, 2.0, 0.1, 1, &one).unwrap().path().last()[0]).collect();
        let var = ends.iter().map(|v| v * v).sum::<f64>() / ends.len() as f64;
        // Var of the sample second moment is 2T²/n.
        assert!((var - 2.0).abs() < 3.0 * (2.0 * 4.0 / 10_000f64).sqrt(), "{var}");
    }

    #[test]
    fn zero_covariance_is_zero_path() {
        let w = brownian(1, 1.0, 0.01, 2, &DMatrix::zeros(2, 2)).unwrap();
        assert!(w.increments().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn quadratic_variation_band() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let w = brownian(3, 1.0, 1e-4, 2, &c).unwrap();
        // Var Σ|ΔW|² = 2 dt T tr(C²).
        let se = (2.0 * 1e-4 * (&c * &c).trace()).sqrt();
        assert!((w.quadratic_variation() - 3.0).abs() < 3.0 * se);
    }

    #[test]
    fn rescaled_fast_path_has_slow_covariance() {
        // √ε 𝒲(1/ε) over many seeds: covariance ς at t = 1.
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let eps = 0.01;
        let n = 4000;
        let ends: Vec<Vec<f64>> = (0..n as u64)
            .map(|s| brownian(s, 1.0 / eps, 1.0, 2, &c).unwrap().time_rescale(eps).unwrap().path().last().to_vec())
            .collect();
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let m = ends.iter().map(|e| e[i] * e[j]).sum::<f64>() / n as f64;
            let se = ((c[(i, i)] * c[(j, j)] + c[(i, j)].powi(2)) / n as f64).sqrt();
            assert!((m - c[(i, j)]).abs() < 3.0 * se, "{i}{j}: {m}");
        }
    }

    #[test]
    fn coarsening_preserves_endpoints() {
        let w = brownian(4, 1.0, 0.01, 1, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        let c = w.coarsen(10).unwrap();
        assert_eq!(c.steps(), 10);
        assert!((c.path().last()[0] - w.path().last()[0]).abs() < 1e-12);
        assert!(w.coarsen(7).is_err());
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(brownian(1, 1.0, 0.1, 2, &c).is_err());
    }
}
