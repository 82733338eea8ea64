use nalgebra::DMatrix;

use super::psd::{clip_psd, sqrt_psd};
use crate::drivers::{make_orbit, suspension_trajectory, DriverSpec, SuspensionSpec};
use crate::dynamics::{gauss_legendre8, Model};
use crate::error::{Error, Result};

/// Default truncation lag.
pub const DEFAULT_K_TRUNC: usize = 64;
/// Batches used for batch-means standard errors.
const BATCHES: usize = 50;
/// A lag is significant when `|tr ĉ_k|` exceeds this many standard errors.
const SIGNIFICANCE: f64 = 3.0;
/// Tails above this fraction of `tr A` raise the warning flag.
pub const TAIL_WARNING_FRACTION: f64 = 0.1;
/// Relative eigenvalue size below which `A` is reported as degenerate.
const DEGENERACY_FRACTION: f64 = 1e-8;

/// Estimates of `a(x, k, 0)` and `a(x, 0, k) = a(x, k, 0)ᵀ` with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCovariance {
    pub forward: DMatrix<f64>,
    pub backward: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
}

/// One evaluation of the diffusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEntry {
    pub x: Vec<f64>,
    /// Tail-corrected, symmetrized, PSD-clipped `A(x)`.
    pub a: DMatrix<f64>,
    /// `σ(x)` with `σσ = A`.
    pub sigma: DMatrix<f64>,
    /// Plain truncated two-sided sum over lags `0..=k_trunc`.
    pub raw: DMatrix<f64>,
    /// Batch-means standard error of `raw`, entrywise.
    pub stderr: DMatrix<f64>,
    pub k_trunc: usize,
    pub samples: usize,
    /// Frobenius norm of the fitted geometric tail beyond `k_trunc`.
    pub tail_estimate: f64,
    /// Fitted lag ratio, `0` when lag 1 is already insignificant.
    pub decay_ratio: f64,
    /// Smallest eigenvalue of the symmetrized estimate before clipping.
    pub min_eigenvalue: f64,
    pub tail_warning: bool,
    /// `A(x)` has an eigenvalue that is zero up to estimation noise.
    pub degenerate: bool,
}

/// Centered samples `y_t`, `t < n + k_max`, as rows of a flat buffer.
struct Series {
    d: usize,
    n: usize,
    y: Vec<f64>,
}

impl Series {
    /// Centers by the mean of the first `n` rows, so extending the series
    /// for longer lags leaves every lag estimate unchanged.
    fn new(d: usize, n: usize, mut y: Vec<f64>) -> Series {
        let mean: Vec<f64> = (0..d).map(|a| y[..n * d].iter().skip(a).step_by(d).sum::<f64>() / n as f64).collect();
        for row in y.chunks_exact_mut(d) {
            for (v, m) in row.iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        Series { d, n, y }
    }

    fn row(&self, t: usize) -> &[f64] {
        &self.y[t * self.d..(t + 1) * self.d]
    }

    /// `ĉ_k = (1/len) Σ_{t ∈ range} y_{t+k} y_tᵀ`: entry `(i, j)` pairs
    /// coordinate `i` at lag `k` with coordinate `j` at lag 0.
    fn lag(&self, k: usize, range: std::ops::Range<usize>) -> DMatrix<f64> {
        let d = self.d;
        let len = range.len() as f64;
        let mut c = DMatrix::zeros(d, d);
        for t in range {
            let (y0, yk) = (self.row(t), self.row(t + k));
            for i in 0..d {
                for j in 0..d {
                    c[(i, j)] += yk[i] * y0[j];
                }
            }
        }
        c / len
    }

    fn batches(&self) -> Vec<std::ops::Range<usize>> {
        let nb = BATCHES.min(self.n).max(1);
        let per = self.n / nb;
        (0..nb).map(|b| b * per..(b + 1) * per).collect()
    }

    fn lag_covariance(&self, k: usize) -> LagCovariance {
        let forward = self.lag(k, 0..self.n);
        let per_batch: Vec<DMatrix<f64>> = self.batches().into_iter().map(|r| self.lag(k, r)).collect();
        let stderr = batch_stderr(&per_batch);
        LagCovariance { backward: forward.transpose(), forward, stderr }
    }
}

fn batch_stderr(values: &[DMatrix<f64>]) -> DMatrix<f64> {
    let nb = values.len();
    let (r, c) = values[0].shape();
    if nb < 2 {
        return DMatrix::from_element(r, c, f64::NAN);
    }
    let mean = values.iter().fold(DMatrix::zeros(r, c), |acc, v| acc + v) / nb as f64;
    DMatrix::from_fn(r, c, |i, j| {
        let var = values.iter().map(|v| (v[(i, j)] - mean[(i, j)]).powi(2)).sum::<f64>() / (nb - 1) as f64;
        (var / nb as f64).sqrt()
    })
}

fn two_sided(lags: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut total = lags[0].clone();
    for c in &lags[1..] {
        total += c + c.transpose();
    }
    total
}

fn series_entry(x: &[f64], series: &Series, k_trunc: usize) -> Result<CovarianceEntry> {
    let lags: Vec<DMatrix<f64>> = (0..=k_trunc).map(|k| series.lag(k, 0..series.n)).collect();
    let raw = two_sided(&lags);
    let batches = series.batches();
    let batch_lags: Vec<Vec<DMatrix<f64>>> =
        batches.iter().map(|r| (0..=k_trunc).map(|k| series.lag(k, r.clone())).collect()).collect();
    let stderr = batch_stderr(&batch_lags.iter().map(|l| two_sided(l)).collect::<Vec<_>>());
    let lag_se: Vec<f64> = (0..=k_trunc)
        .map(|k| batch_stderr(&batch_lags.iter().map(|l| DMatrix::from_element(1, 1, l[k].trace())).collect::<Vec<_>>())[(0, 0)])
        .collect();

    // First insignificant lag k* ≥ 1; lags beyond it follow the geometric fit.
    let k_star = (1..=k_trunc).find(|&k| !(lags[k].trace().abs() > SIGNIFICANCE * lag_se[k])).unwrap_or(k_trunc + 1);
    let tr: Vec<f64> = lags[..k_star].iter().map(|c| c.trace()).collect();
    let rho = if k_star >= 2 {
        let num: f64 = tr.windows(2).map(|w| w[0] * w[1]).sum();
        let den: f64 = tr[..tr.len() - 1].iter().map(|v| v * v).sum();
        (num / den).clamp(-0.99, 0.99)
    } else {
        0.0
    };
    // The fit must predict an insignificant lag k*; otherwise the decay is
    // not geometric and no tail is extrapolated.
    let rho = if k_star <= k_trunc && (rho * tr[k_star - 1]).abs() > SIGNIFICANCE * lag_se[k_star] { 0.0 } else { rho };
    // Fitted model: c_k = c_{k*−1} ρ^{k−k*+1} for k ≥ k*.
    let anchor = &lags[k_star - 1];
    let anchor2 = anchor + anchor.transpose();
    let geometric_from = |k: usize| if rho == 0.0 { 0.0 } else { rho.powi((k + 1 - k_star) as i32) / (1.0 - rho) };
    let corrected = two_sided(&lags[..k_star]) + &anchor2 * geometric_from(k_star);
    let tail_estimate = (&anchor2 * geometric_from(k_trunc + 1)).norm();
    let (a, min_eigenvalue) = clip_psd(&corrected)?;
    let sigma = sqrt_psd(&a)?;
    let trace = a.trace();
    let max_eig = a.symmetric_eigenvalues().iter().copied().fold(0.0, f64::max);
    let min_clipped = a.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    let noise = stderr.norm();
    Ok(CovarianceEntry {
        x: x.to_vec(),
        sigma,
        raw,
        stderr,
        k_trunc,
        samples: series.n,
        tail_estimate,
        decay_ratio: rho,
        min_eigenvalue,
        tail_warning: tail_estimate > TAIL_WARNING_FRACTION * trace.abs(),
        degenerate: min_clipped <= (DEGENERACY_FRACTION * max_eig).max(noise),
        a,
    })
}

fn check_args(k_trunc: usize, n_samples: usize) -> Result<()> {
    if k_trunc == 0 {
        return Err(Error::argument("K_trunc must be at least 1"));
    }
    if n_samples < 2 * BATCHES {
        return Err(Error::argument(format!("n_samples must be at least {}", 2 * BATCHES)));
    }
    Ok(())
}

fn driver_series(model: &Model, driver: &DriverSpec, x: &[f64], len: usize, n: usize, seed: u64) -> Result<Series> {
    let d = model.dim();
    let mut orbit = make_orbit(driver, seed)?;
    let mut xi = vec![0.0; driver.dim()];
    let mut y = vec![0.0; len * d];
    for row in y.chunks_exact_mut(d) {
        orbit.next_into(&mut xi);
        model.b(x, &xi, row);
    }
    Ok(Series::new(d, n, y))
}

/// Monte Carlo `a(x, k, 0)` and `a(x, 0, k)` from one orbit of length `n + k`.
pub fn lag_covariance(model: &Model, driver: &DriverSpec, x: &[f64], k: usize, n_samples: usize, seed: u64) -> Result<LagCovariance> {
    check_args(1, n_samples)?;
    Ok(driver_series(model, driver, x, n_samples + k, n_samples, seed)?.lag_covariance(k))
}

/// Truncated Green–Kubo series `Σ_{|k| ≤ K} a(x, k, 0)` with geometric tail
/// correction. Every lag is estimated from the same `n_samples` products of
/// one orbit of length `n_samples + K`, so raising `K` reuses the same data.
pub fn green_kubo(model: &Model, driver: &DriverSpec, x: &[f64], k_trunc: usize, n_samples: usize, seed: u64) -> Result<CovarianceEntry> {
    check_args(k_trunc, n_samples)?;
    let series = driver_series(model, driver, x, n_samples + k_trunc, n_samples, seed)?;
    series_entry(x, &series, k_trunc)
}

/// Green–Kubo series over the centered block variables
/// `b(x, ϑᵏω) − τ(ϑᵏω)B̄(x)`, with `B̄ = Σb/Στ` from the same trajectory.
pub fn suspension_covariance(
    model: &Model,
    suspension: &SuspensionSpec,
    x: &[f64],
    k_trunc: usize,
    n_samples: usize,
    seed: u64,
) -> Result<CovarianceEntry> {
    check_args(k_trunc, n_samples)?;
    let d = model.dim();
    let len = n_samples + k_trunc;
    let horizon = len as f64 * suspension.l_bar;
    let traj = suspension_trajectory(suspension, seed, horizon)?;
    let segs = &traj.segments()[..len];
    let mut b = vec![0.0; len * d];
    for (row, seg) in b.chunks_exact_mut(d).zip(segs) {
        gauss_legendre8(seg.duration, |_, out| model.b(x, &seg.xi, out), row);
    }
    let total_tau: f64 = segs.iter().map(|s| s.duration).sum();
    let b_bar: Vec<f64> = (0..d).map(|a| b.iter().skip(a).step_by(d).sum::<f64>() / total_tau).collect();
    for (row, seg) in b.chunks_exact_mut(d).zip(segs) {
        for (v, m) in row.iter_mut().zip(&b_bar) {
            *v -= seg.duration * m;
        }
    }
    // Already centered; Series re-centering removes only rounding residue.
    series_entry(x, &Series::new(d, n_samples, b), k_trunc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{IidLaw, ObservableSpec, RoofSpec};
    use crate::dynamics::{AveragedMode, SystemSpec};

    fn identity_model(driver: &DriverSpec) -> Model {
        Model::new(SystemSpec::constant_product(vec![vec![1.0]], 1.0), driver, 1).unwrap()
    }

    fn uniform() -> DriverSpec {
        DriverSpec::iid(IidLaw::Uniform { low: vec![-1.0], high: vec![1.0] }, 1.0)
    }

    /// `E f(X_k) f(X_0)` for the symmetric two-state chain by enumerating
    /// every state sequence of length `k + 1`.
    fn brute_force_chain_lag(p: f64, k: usize) -> f64 {
        let f = [-1.0, 1.0];
        let mut total = 0.0;
        for code in 0..(1u32 << (k + 1)) {
            let states: Vec<usize> = (0..=k).map(|i| ((code >> i) & 1) as usize).collect();
            let mut prob = 0.5;
            for w in states.windows(2) {
                prob *= if w[0] == w[1] { 1.0 - p } else { p };
            }
            total += prob * f[states[0]] * f[states[k]];
        }
        total
    }

    #[test]
    fn lag_covariances_of_builtin_drivers() {
        let u = uniform();
        for k in 1..4 {
            let c = lag_covariance(&identity_model(&u), &u, &[0.0], k, 200_000, 3).unwrap();
            assert!(c.forward[(0, 0)].abs() < 4.0 * c.stderr[(0, 0)], "iid lag {k}");
            assert_eq!(c.backward, c.forward.transpose());
        }
        let dbl = DriverSpec::doubling(ObservableSpec::cosine(1), 1.0);
        let c0 = lag_covariance(&identity_model(&dbl), &dbl, &[0.0], 0, 200_000, 3).unwrap();
        assert!((c0.forward[(0, 0)] - 0.5).abs() < 0.01);
        let c2 = lag_covariance(&identity_model(&dbl), &dbl, &[0.0], 2, 200_000, 3).unwrap();
        assert!(c2.forward[(0, 0)].abs() < 4.0 * c2.stderr[(0, 0)]);
        let chain = DriverSpec::two_state(0.25);
        for k in 1..=5 {
            let exact = brute_force_chain_lag(0.25, k);
            assert!((exact - 0.5f64.powi(k as i32)).abs() < 1e-14);
            let c = lag_covariance(&identity_model(&chain), &chain, &[0.0], k, 400_000, 5).unwrap();
            assert!((c.forward[(0, 0)] - exact).abs() < 5.0 * c.stderr[(0, 0)], "chain lag {k}");
        }
    }

    #[test]
    fn iid_green_kubo_is_the_covariance() {
        let law = IidLaw::Discrete { atoms: vec![vec![-1.0, 0.5], vec![1.0, 0.0], vec![0.0, -1.0]], probs: vec![0.25, 0.5, 0.25] };
        let driver = DriverSpec::iid(law, 2.0);
        let model = Model::new(SystemSpec::constant_product(vec![vec![1.0, 0.0], vec![0.5, 1.0]], 2.0), &driver, 1).unwrap();
        let e = green_kubo(&model, &driver, &[0.0, 0.0], 16, 200_000, 9).unwrap();
        let s = model.sigma_matrix(&[0.0, 0.0]).unwrap();
        let exact = &s * driver.analytic_long_run_covariance().unwrap() * s.transpose();
        assert!((&e.a - &exact).amax() < 0.02, "{} vs {exact}", e.a);
        assert_eq!(e.decay_ratio, 0.0);
        assert!((&e.sigma * &e.sigma - &e.a).norm() < 1e-10);
        assert!((&e.a - e.a.transpose()).amax() == 0.0);
    }

    #[test]
    fn chain_and_doubling_green_kubo() {
        let chain = DriverSpec::two_state(0.25);
        let e = green_kubo(&identity_model(&chain), &chain, &[0.0], 64, 200_000, 2).unwrap();
        assert!((e.a[(0, 0)] - 3.0).abs() < 0.25, "{}", e.a[(0, 0)]);
        assert!((e.decay_ratio - 0.5).abs() < 0.15);
        let dbl = DriverSpec::doubling(ObservableSpec::cosine(1), 1.0);
        let e = green_kubo(&identity_model(&dbl), &dbl, &[0.0], 64, 200_000, 2).unwrap();
        assert!((e.a[(0, 0)] - 0.5).abs() < 0.02);
    }

    #[test]
    fn doubling_truncation_changes_less_than_tail() {
        for driver in [DriverSpec::two_state(0.25), DriverSpec::doubling(ObservableSpec::cosine(1), 1.0), uniform()] {
            let m = identity_model(&driver);
            let a = green_kubo(&m, &driver, &[0.0], 16, 100_000, 4).unwrap();
            let b = green_kubo(&m, &driver, &[0.0], 32, 100_000, 4).unwrap();
            assert!((&a.a - &b.a).norm() <= a.tail_estimate + 1e-12, "{:?}", driver.kind);
        }
    }

    #[test]
    fn coboundary_is_flagged_degenerate() {
        let spec = DriverSpec::doubling(
            ObservableSpec {
                form: crate::drivers::ObservableForm::TrigPolynomial {
                    terms: vec![vec![
                        crate::drivers::TrigTerm { freq: vec![2], cos: 1.0, sin: 0.0 },
                        crate::drivers::TrigTerm { freq: vec![1], cos: -1.0, sin: 0.0 },
                    ]],
                },
                dim: 1,
            },
            2.0,
        );
        let e = green_kubo(&identity_model(&spec), &spec, &[0.0], 32, 100_000, 1).unwrap();
        assert!(e.a[(0, 0)].abs() < 0.05);
        assert!(e.degenerate);
    }

    fn suspension(base: DriverSpec, tau: f64) -> SuspensionSpec {
        SuspensionSpec { base, roof: RoofSpec::Constant { value: tau }, l_bar: 2.0 }
    }

    #[test]
    fn suspension_forms() {
        // B constant in ξ and τ constant: every centered term vanishes.
        let flat = Model::new(
            SystemSpec {
                dim: 1,
                form: crate::dynamics::SystemForm::DriftProduct {
                    drift: crate::dynamics::DriftField::Constant { value: vec![0.7] },
                    sigma: crate::dynamics::MatrixField::Constant { matrix: vec![vec![0.0]] },
                },
                c2_bound: 1.0,
                averaged: AveragedMode::ClosedForm,
            },
            &uniform(),
            1,
        )
        .unwrap();
        let e = suspension_covariance(&flat, &suspension(uniform(), 1.5), &[0.0], 8, 10_000, 1).unwrap();
        assert!(e.a.amax() < 1e-20);

        let chain = DriverSpec::two_state(0.25);
        let m = identity_model(&chain);
        let s = suspension_covariance(&m, &suspension(chain.clone(), 1.0), &[0.0], 16, 50_000, 6).unwrap();
        let d = green_kubo(&m, &chain, &[0.0], 16, 50_000, 6).unwrap();
        assert!((&s.a - &d.a).amax() < 1e-10);

        let u = uniform();
        let e = suspension_covariance(&identity_model(&u), &suspension(u, 1.0), &[0.0], 8, 200_000, 2).unwrap();
        assert!((e.a[(0, 0)] - 1.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn sigma_difference_quotients_are_stable() {
        let driver = DriverSpec::two_state(0.25);
        let model = Model::new(SystemSpec::scalar_product(1.0, 0.5, 2.0), &driver, 1).unwrap();
        let sigma = |x: f64| green_kubo(&model, &driver, &[x], 16, 20_000, 7).unwrap().sigma[(0, 0)];
        let quotient = |h: f64| (0..8).map(|i| (sigma(i as f64 * 0.1 + h) - sigma(i as f64 * 0.1)).abs() / h).fold(0.0, f64::max);
        let (q1, q2) = (quotient(0.02), quotient(0.01));
        assert!(q2 <= 1.2 * q1 && q1 <= 1.2 * q2, "{q1} {q2}");
    }

    #[test]
    fn finite_window_variance_gap_is_bounded() {
        // |n A − Σ_{k,l<n} a(k, l)| for the two-state chain, computed exactly.
        let chain = crate::drivers::MarkovChain::new(vec![vec![0.75, 0.25], vec![0.25, 0.75]]).unwrap();
        let f = vec![vec![-1.0], vec![1.0]];
        let a = chain.long_run_covariance(&f)[(0, 0)];
        let gaps: Vec<f64> = [4usize, 16, 64, 256, 1024]
            .iter()
            .map(|&n| {
                let window: f64 = n as f64 * chain.lag_covariance(&f, 0)[(0, 0)]
                    + 2.0 * (1..n).map(|k| (n - k) as f64 * chain.lag_covariance(&f, k)[(0, 0)]).sum::<f64>();
                (n as f64 * a - window).abs()
            })
            .collect();
        assert!(gaps.iter().all(|g| *g <= 4.0 + 1e-9), "{gaps:?}");
        assert!(gaps[2..].iter().all(|g| (g - gaps[4]).abs() < 1e-9), "{gaps:?}");
    }

    #[test]
    fn arguments_are_checked() {
        let u = uniform();
        assert!(green_kubo(&identity_model(&u), &u, &[0.0], 0, 1000, 1).is_err());
        assert!(green_kubo(&identity_model(&u), &u, &[0.0], 4, 10, 1).is_err());
    }
}
