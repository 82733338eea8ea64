use nalgebra::{DMatrix, DVector};

use super::brownian::BrownianPath;
use crate::dynamics::{averaged_path, Model};
use crate::error::{Error, Result};
use crate::path::{Interpolation, Path};

/// Coefficients of the linear equation for `G`, one entry per grid node:
/// `J_k = ∇B̄(X̄(t_k))` (`d × d`) and `σ_k = σ(X̄(t_k))` (`d × m`).
#[derive(Debug, Clone, PartialEq)]
pub struct LimitCoefficients {
    t0: f64,
    dt: f64,
    grads: Vec<DMatrix<f64>>,
    sigmas: Vec<DMatrix<f64>>,
}

impl LimitCoefficients {
    pub fn new(t0: f64, dt: f64, grads: Vec<DMatrix<f64>>, sigmas: Vec<DMatrix<f64>>) -> Result<Self> {
        if grads.is_empty() || grads.len() != sigmas.len() || !(dt > 0.0) {
            return Err(Error::argument("coefficient tables must be nonempty, of equal length, with dt > 0"));
        }
        let d = grads[0].nrows();
        let m = sigmas[0].ncols();
        let shapes_ok = grads.iter().all(|g| g.shape() == (d, d)) && sigmas.iter().all(|s| s.shape() == (d, m));
        if !shapes_ok {
            return Err(Error::argument("inconsistent coefficient shapes along the grid"));
        }
        if grads.iter().chain(&sigmas).any(|a| a.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical("non-finite limit coefficient".into()));
        }
        Ok(LimitCoefficients { t0, dt, grads, sigmas })
    }

    /// Time-independent coefficients on `steps + 1` nodes.
    pub fn constant(grad: DMatrix<f64>, sigma: DMatrix<f64>, dt: f64, steps: usize) -> Result<Self> {
        Self::new(0.0, dt, vec![grad; steps + 1], vec![sigma; steps + 1])
    }

    /// `∇B̄` and `σ` evaluated at the nodes of a precomputed averaged path.
    pub fn along(model: &Model, x_bar: &Path, sigma: impl Fn(&[f64]) -> Result<DMatrix<f64>>) -> Result<Self> {
        let mut grads = Vec::with_capacity(x_bar.len());
        let mut sigmas = Vec::with_capacity(x_bar.len());
        for p in x_bar.points() {
            grads.push(model.grad_b_bar(p));
            sigmas.push(sigma(p)?);
        }
        Self::new(x_bar.t0(), x_bar.dt(), grads, sigmas)
    }

    /// Continuous-time variant: nodes `t_k = k·dt` on `[0, T]`, coefficients
    /// `τ̄∇B̄(X̄(τ̄t_k))` and `σ(X̄(τ̄t_k))`. `σσᵀ` is the per-base-step
    /// covariance of the suspension.
    pub fn time_changed(
        model: &Model,
        x0: &[f64],
        t_end: f64,
        dt: f64,
        tau_bar: f64,
        sigma: impl Fn(&[f64]) -> Result<DMatrix<f64>>,
    ) -> Result<Self> {
        if !(tau_bar > 0.0) {
            return Err(Error::argument("τ̄ must be positive"));
        }
        let x_bar = averaged_path(model, x0, tau_bar * t_end, tau_bar * dt)?;
        let mut c = Self::along(model, &x_bar, sigma)?;
        c.dt = dt;
        c.t0 = 0.0;
        for g in &mut c.grads {
            *g *= tau_bar;
        }
        Ok(c)
    }

    pub fn steps(&self) -> usize {
        self.grads.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.grads[0].nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.sigmas[0].ncols()
    }

    pub fn grad(&self, k: usize) -> &DMatrix<f64> {
        &self.grads[k]
    }

    pub fn sigma(&self, k: usize) -> &DMatrix<f64> {
        &self.sigmas[k]
    }
}

fn check_grid(t0: f64, dt: f64, steps: usize, w: &BrownianPath) -> Result<()> {
    let same = (t0 - w.t0()).abs() <= 1e-12 * dt.max(1.0) && (dt - w.dt()).abs() <= 1e-12 * dt && steps == w.steps();
    if same {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "coefficients (t0 {t0}, dt {dt}, {steps} steps) vs Brownian path (t0 {}, dt {}, {} steps)",
            w.t0(),
            w.dt(),
            w.steps()
        )))
    }
}

/// Euler–Maruyama for `dG = J(t)G dt + σ(t)dW`, `G(0) = 0`.
pub fn gaussian_limit(coeffs: &LimitCoefficients, w: &BrownianPath) -> Result<Path> {
    check_grid(coeffs.t0, coeffs.dt, coeffs.steps(), w)?;
    if w.dim() != coeffs.noise_dim() {
        return Err(Error::GridMismatch(format!("σ has {} columns, W has dimension {}", coeffs.noise_dim(), w.dim())));
    }
    let d = coeffs.dim();
    let mut values = Vec::with_capacity((coeffs.steps() + 1) * d);
    let mut g = DVector::<f64>::zeros(d);
    values.extend(g.iter());
    for k in 0..coeffs.steps() {
        let dw = DVector::from_column_slice(w.increment(k));
        g = &g + &coeffs.grads[k] * &g * coeffs.dt + &coeffs.sigmas[k] * dw;
        values.extend(g.iter());
    }
    Path::new(coeffs.t0, coeffs.dt, d, values, Interpolation::Linear)
}

/// Result of [`hasselmann`]. `coarse` is set when the step exceeds `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct HasselmannPath {
    pub path: Path,
    pub coarse: bool,
}

/// Euler–Maruyama for `dH = B̄(H)dt + √ε σ(H)dW`, `H(0) = x0`, on the grid of `w`.
pub fn hasselmann(
    b_bar: impl Fn(&[f64], &mut [f64]),
    sigma: impl Fn(&[f64]) -> DMatrix<f64>,
    eps: f64,
    x0: &[f64],
    w: &BrownianPath,
) -> Result<HasselmannPath> {
    if !(eps >= 0.0) {
        return Err(Error::argument("ε must be nonnegative"));
    }
    let d = x0.len();
    let dt = w.dt();
    let root = eps.sqrt();
    let mut h = x0.to_vec();
    let mut drift = vec![0.0; d];
    let mut values = Vec::with_capacity((w.steps() + 1) * d);
    values.extend_from_slice(&h);
    for k in 0..w.steps() {
        b_bar(&h, &mut drift);
        let s = sigma(&h);
        if s.shape() != (d, w.dim()) {
            return Err(Error::GridMismatch(format!("σ is {:?}, expected ({d}, {})", s.shape(), w.dim())));
        }
        let dw = w.increment(k);
        for i in 0..d {
            let noise: f64 = (0..w.dim()).map(|j| s[(i, j)] * dw[j]).sum();
            h[i] += drift[i] * dt + root * noise;
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("Hasselmann diffusion diverged at step {k}")));
        }
        values.extend_from_slice(&h);
    }
    Ok(HasselmannPath { path: Path::new(w.t0(), dt, d, values, Interpolation::Linear)?, coarse: dt > eps })
}

/// `Ĝ = X̄ + √ε G` pointwise.
pub fn hat_g(x_bar: &Path, g: &Path, eps: f64) -> Result<Path> {
    if !(eps >= 0.0) {
        return Err(Error::argument("ε must be nonnegative"));
    }
    x_bar.combine(1.0, g, eps.sqrt())
}
