use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::distance::sup_distance;
use crate::error::{Error, Result};
use crate::path::Path;
use crate::seed::{pairwise_mean, stream};

pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Mean of `(sup distance)^{2M}` over paired members, with a bootstrap standard error.
pub fn moment_sup_error(pairs: &[(Path, Path)], exponent: u32, seed: u64) -> Result<MomentEstimate> {
    let errs = pairs.iter().map(|(p, q)| sup_distance(p, q)).collect::<Result<Vec<_>>>()?;
    moment_of_errors(&errs, exponent, seed)
}

/// As [`moment_sup_error`] for precomputed sup-errors.
pub fn moment_of_errors(errors: &[f64], exponent: u32, seed: u64) -> Result<MomentEstimate> {
    if errors.is_empty() {
        return Err(Error::argument("no paired members"));
    }
    let powered: Vec<f64> = errors.iter().map(|e| e.powi(exponent as i32)).collect();
    let mean = pairwise_mean(&powered);
    let n = powered.len();
    let mut rng = stream(seed);
    let means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| pairwise_mean(&(0..n).map(|_| powered[rng.random_range(0..n)]).collect::<Vec<_>>()))
        .collect();
    let m = pairwise_mean(&means);
    let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (BOOTSTRAP_RESAMPLES - 1) as f64;
    Ok(MomentEstimate { mean, stderr: var.sqrt() })
}

/// Least-squares fit of `log stat = slope·log ε + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub grid: Vec<f64>,
    pub stats: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub rms: f64,
}

pub fn rate_fit(grid: &[f64], stats: &[f64]) -> Result<RateReport> {
    if grid.len() != stats.len() || grid.len() < 3 {
        return Err(Error::argument("rate fit needs at least 3 (ε, statistic) pairs"));
    }
    if grid.iter().any(|e| !(*e > 0.0)) || grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::argument("ε grid must be positive and strictly decreasing"));
    }
    if let Some(s) = stats.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::argument(format!("statistic {s} is not positive")));
    }
    let x: Vec<f64> = grid.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = stats.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum::<f64>() / n).sqrt();
    Ok(RateReport { grid: grid.to_vec(), stats: stats.to_vec(), slope, intercept, rms })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

/// `P(sup|B| > λ)` for a Brownian bridge.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against `N(mean, variance)` at level `alpha`.
pub fn ks_normal(samples: &[f64], mean: f64, variance: f64, alpha: f64) -> Result<TestOutcome> {
    if !(variance > 0.0) || samples.is_empty() {
        return Err(Error::argument("KS test needs samples and a positive variance"));
    }
    let law = Normal::new(mean, variance.sqrt()).map_err(|e| Error::argument(e.to_string()))?;
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = law.cdf(*x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let p = kolmogorov_survival(n.sqrt() * d);
    Ok(TestOutcome { statistic: d, p_value: p, pass: p >= alpha })
}

/// Two-sample Kolmogorov–Smirnov test at level `alpha`.
pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<TestOutcome> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::argument("KS test needs two nonempty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let p = kolmogorov_survival(ne.sqrt() * d);
    Ok(TestOutcome { statistic: d, p_value: p, pass: p >= alpha })
}

/// Mardia's multivariate skewness test: `n b₁/6 ~ χ²(d(d+1)(d+2)/6)`.
pub fn mardia_skewness(samples: &[Vec<f64>], alpha: f64) -> Result<TestOutcome> {
    let n = samples.len();
    let d = samples.first().map_or(0, Vec::len);
    if n <= d || d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::argument("Mardia test needs more samples than dimensions"));
    }
    let mean = samples.iter().fold(DVector::zeros(d), |acc, s| acc + DVector::from_column_slice(s)) / n as f64;
    let centered: Vec<DVector<f64>> = samples.iter().map(|s| DVector::from_column_slice(s) - &mean).collect();
    let cov = centered.iter().fold(DMatrix::zeros(d, d), |acc, c| acc + c * c.transpose()) / n as f64;
    let inv = cov.try_inverse().ok_or_else(|| Error::Numerical("singular sample covariance".into()))?;
    let whitened: Vec<DVector<f64>> = centered.iter().map(|c| &inv * c).collect();
    let mut b1 = 0.0;
    for (i, wi) in whitened.iter().enumerate() {
        for cj in &centered[i..] {
            let g = wi.dot(cj).powi(3);
            b1 += g;
        }
    }
    // Off-diagonal terms appear twice in the double sum.
    let diag: f64 = whitened.iter().zip(&centered).map(|(w, c)| w.dot(c).powi(3)).sum();
    b1 = (2.0 * b1 - diag) / (n * n) as f64;
    let stat = n as f64 * b1 / 6.0;
    let dof = (d * (d + 1) * (d + 2)) as f64 / 6.0;
    let chi = ChiSquared::new(dof).map_err(|e| Error::Numerical(e.to_string()))?;
    let p = 1.0 - chi.cdf(stat);
    Ok(TestOutcome { statistic: stat, p_value: p, pass: p >= alpha })
}
