use nalgebra::DMatrix;

use super::{make_orbit, DriverSpec};
use crate::error::{Error, Result};

/// Empirical lag covariances of a driver and a geometric-decay fit.
#[derive(Debug, Clone)]
pub struct AutocorrReport {
    pub mean: Vec<f64>,
    /// `lags[k][(a, b)]` estimates `E ξ̂_a(0) ξ̂_b(k)`.
    pub lags: Vec<DMatrix<f64>>,
    /// Half-width of the CLT band for an independent sequence.
    pub band: f64,
    /// Fitted ratio `ρ` in `tr C(k) ≈ tr C(0) ρ^k`; `None` when no lag is significant.
    pub rate: Option<f64>,
    /// Number of leading lags used by the fit.
    pub fit_lags: usize,
}

/// Estimate lag covariances `0..=max_lag` from one orbit of length `n`.
pub fn autocorrelation_decay(spec: &DriverSpec, seed: u64, max_lag: usize, n: usize) -> Result<AutocorrReport> {
    if n <= max_lag {
        return Err(Error::argument(format!("n = {n} must exceed max_lag = {max_lag}")));
    }
    let mut orbit = make_orbit(spec, seed)?;
    let d = spec.dim();
    let mut xs = vec![0.0; n * d];
    for row in xs.chunks_exact_mut(d) {
        orbit.next_into(row);
    }
    let mean: Vec<f64> = (0..d).map(|a| xs.iter().skip(a).step_by(d).sum::<f64>() / n as f64).collect();
    for row in xs.chunks_exact_mut(d) {
        for (x, m) in row.iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    let lags: Vec<DMatrix<f64>> = (0..=max_lag)
        .map(|k| {
            let mut c = DMatrix::zeros(d, d);
            for i in 0..n - k {
                let x0 = &xs[i * d..(i + 1) * d];
                let xk = &xs[(i + k) * d..(i + k + 1) * d];
                for a in 0..d {
                    for b in 0..d {
                        c[(a, b)] += x0[a] * xk[b];
                    }
                }
            }
            c / (n - k) as f64
        })
        .collect();
    let tr0 = lags[0].trace();
    let band = 4.0 * tr0.abs() / (n as f64).sqrt();
    let significant = lags.iter().skip(1).take_while(|c| c.trace().abs() > band).count();
    let (rate, fit_lags) = match significant {
        0 => (None, 0),
        _ => {
            // Weighted least squares of ln|tr C(k)| on k, weights (tr C(k))².
            let pts: Vec<(f64, f64, f64)> = lags[..=significant]
                .iter()
                .enumerate()
                .map(|(k, c)| (k as f64, c.trace().abs().ln(), c.trace().powi(2)))
                .collect();
            let sw: f64 = pts.iter().map(|p| p.2).sum();
            let mk = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
            let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
            let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mk) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mk).powi(2)).sum();
            (Some((sxy / sxx).exp()), significant)
        }
    };
    Ok(AutocorrReport { mean, lags, band, rate, fit_lags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{IidLaw, ObservableSpec};

    #[test]
    fn iid_lags_within_band() {
        let spec = DriverSpec::iid(IidLaw::Rademacher { dim: 2 }, 2f64.sqrt());
        let r = autocorrelation_decay(&spec, 1, 10, 200_000).unwrap();
        for c in &r.lags[1..] {
            assert!(c.iter().all(|x| x.abs() < r.band), "{c}");
        }
        assert_eq!(r.rate, None);
    }

    #[test]
    fn chain_decay_rate() {
        let r = autocorrelation_decay(&DriverSpec::two_state(0.25), 2, 20, 1_000_000).unwrap();
        let rate = r.rate.unwrap();
        assert!((rate - 0.5).abs() < 0.05, "{rate}");
    }

    #[test]
    fn doubling_cosine_is_uncorrelated() {
        let r = autocorrelation_decay(&DriverSpec::doubling(ObservableSpec::cosine(1), 1.0), 3, 8, 200_000).unwrap();
        assert!((r.lags[0][(0, 0)] - 0.5).abs() < 0.01);
        for c in &r.lags[1..] {
            assert!(c[(0, 0)].abs() < r.band);
        }
    }

    #[test]
    fn doubling_digit_has_no_correlation_at_long_lags() {
        // Floating-point iteration of x ↦ 2x mod 1 collapses to 0 after ~53 steps.
        let spec = DriverSpec::doubling(ObservableSpec::table(&[-1.0, 1.0]), 1.0);
        let r = autocorrelation_decay(&spec, 4, 200, 100_000).unwrap();
        assert!((r.lags[0][(0, 0)] - 1.0).abs() < 0.01);
        assert!(r.lags[200][(0, 0)].abs() < r.band);
        assert!(r.lags[60][(0, 0)].abs() < r.band);
    }

    #[test]
    fn too_short_orbit_is_an_argument_error() {
        assert!(matches!(
            autocorrelation_decay(&DriverSpec::two_state(0.25), 1, 10, 10),
            Err(Error::Argument(_))
        ));
    }
}
