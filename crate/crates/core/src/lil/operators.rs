use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::sqrt_psd;
use crate::dynamics::Model;
use crate::error::{Error, Result};
use crate::path::{Interpolation, Path};
use crate::seed::stream;

/// Residual ceiling for the discrete integral equation solved by [`apply_phi`].
pub const PHI_RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Coefficients along `X̄` on a uniform grid: `J_k = ∇B̄(X̄(t_k))`,
/// `σ_k = σ(X̄(t_k))` and `M_k = Σ_j ∂σ/∂y_j(X̄(t_k)) B̄_j(X̄(t_k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LilCoefficients {
    pub dt: f64,
    pub grads: Vec<DMatrix<f64>>,
    pub sigmas: Vec<DMatrix<f64>>,
    pub sigma_drift: Vec<DMatrix<f64>>,
}

impl LilCoefficients {
    pub fn new(dt: f64, grads: Vec<DMatrix<f64>>, sigmas: Vec<DMatrix<f64>>, sigma_drift: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = grads.len();
        if n < 2 || sigmas.len() != n || sigma_drift.len() != n || !(dt > 0.0) {
            return Err(Error::argument("coefficient tables must have equal length ≥ 2 and dt > 0"));
        }
        let d = grads[0].nrows();
        let ok = grads.iter().all(|g| g.shape() == (d, d))
            && sigmas.iter().chain(&sigma_drift).all(|s| s.shape() == (d, d));
        if !ok {
            return Err(Error::argument("LIL coefficients must be square of the state dimension"));
        }
        Ok(LilCoefficients { dt, grads, sigmas, sigma_drift })
    }

    /// Constant `∇B̄ = J`, `σ`, and `M = 0`.
    pub fn constant(grad: DMatrix<f64>, sigma: DMatrix<f64>, dt: f64, steps: usize) -> Result<Self> {
        let d = grad.nrows();
        Self::new(dt, vec![grad; steps + 1], vec![sigma; steps + 1], vec![DMatrix::zeros(d, d); steps + 1])
    }

    /// Product case `σ(x) = Σ(x)ς^{1/2}`, evaluated along a precomputed `X̄`.
    pub fn product(model: &Model, x_bar: &Path) -> Result<Self> {
        let field = model.spec().sigma_field().ok_or_else(|| Error::argument("the LIL coefficients need a product-form system"))?;
        let root = sqrt_psd(model.varsigma().ok_or_else(|| Error::argument("the model has no long-run covariance ς"))?)?;
        let d = model.dim();
        let mut grads = Vec::with_capacity(x_bar.len());
        let mut sigmas = Vec::with_capacity(x_bar.len());
        let mut drift = Vec::with_capacity(x_bar.len());
        for x in x_bar.points() {
            let sig = field.eval(x) * &root;
            if sig.shape() != (d, d) {
                return Err(Error::argument("the LIL maps need a square Σ"));
            }
            let b = model.b_bar_vec(x);
            let mut m = DMatrix::zeros(d, d);
            for (k, bk) in b.iter().enumerate() {
                m += field.partial(x, k) * &root * *bk;
            }
            grads.push(model.grad_b_bar(x));
            sigmas.push(sig);
            drift.push(m);
        }
        Self::new(x_bar.dt(), grads, sigmas, drift)
    }

    /// General `σ` with `∇σ` from central differences of step `h·max(1, |x|)`.
    pub fn from_sigma(model: &Model, x_bar: &Path, sigma: impl Fn(&[f64]) -> Result<DMatrix<f64>>, h: f64) -> Result<Self> {
        let d = model.dim();
        let mut grads = Vec::with_capacity(x_bar.len());
        let mut sigmas = Vec::with_capacity(x_bar.len());
        let mut drift = Vec::with_capacity(x_bar.len());
        for x in x_bar.points() {
            let b = model.b_bar_vec(x);
            let mut m = DMatrix::zeros(d, d);
            for k in 0..d {
                let step = h * x[k].abs().max(1.0);
                let mut up = x.to_vec();
                let mut down = x.to_vec();
                up[k] += step;
                down[k] -= step;
                m += (sigma(&up)? - sigma(&down)?) * (b[k] / (2.0 * step));
            }
            grads.push(model.grad_b_bar(x));
            sigmas.push(sigma(x)?);
            drift.push(m);
        }
        Self::new(x_bar.dt(), grads, sigmas, drift)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.grads[0].nrows()
    }

    pub fn t_end(&self) -> f64 {
        self.dt * (self.len() - 1) as f64
    }

    fn check(&self, phi: &Path) -> Result<()> {
        let same = phi.len() == self.len() && phi.dim() == self.dim() && (phi.dt() - self.dt).abs() <= 1e-12 * self.dt;
        if same {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "path (dt {}, {} nodes, d {}) vs coefficients (dt {}, {} nodes, d {})",
                phi.dt(),
                phi.len(),
                phi.dim(),
                self.dt,
                self.len(),
                self.dim()
            )))
        }
    }
}

fn col(p: &Path, k: usize) -> DVector<f64> {
    DVector::from_column_slice(p.point(k))
}

fn to_path(t0: f64, dt: f64, d: usize, v: &[DVector<f64>]) -> Result<Path> {
    Path::new(t0, dt, d, v.iter().flat_map(|x| x.iter().copied()).collect(), Interpolation::Linear)
}

/// `Φ(φ)(t) = ∫₀ᵗ J(s)Φ(φ)(s)ds + φ(t)` by the trapezoid rule, solved node by node.
pub fn apply_phi(phi: &Path, c: &LilCoefficients) -> Result<Path> {
    c.check(phi)?;
    let d = c.dim();
    let h = c.dt;
    let id = DMatrix::<f64>::identity(d, d);
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(phi.len());
    out.push(col(phi, 0));
    // Running trapezoid sum of J Φ up to the previous node.
    let mut integral = DVector::zeros(d);
    for k in 1..phi.len() {
        let prev = &c.grads[k - 1] * &out[k - 1];
        let lhs = &id - &c.grads[k] * (h / 2.0);
        let rhs = col(phi, k) + &integral + &prev * (h / 2.0);
        let next = lhs.lu().solve(&rhs).ok_or_else(|| Error::Numerical("trapezoid step is singular".into()))?;
        integral += (&prev + &c.grads[k] * &next) * (h / 2.0);
        let residual = (&next - &integral - col(phi, k)).amax();
        let scale = 1.0 + next.amax();
        if residual > PHI_RESIDUAL_TOLERANCE * scale {
            return Err(Error::Numerical(format!("Φ residual {residual:e} at node {k}")));
        }
        out.push(next);
    }
    to_path(phi.t0(), h, d, &out)
}

/// Inverse of [`apply_phi`]: `φ = g − ∫₀ᵗ J g ds` with the same quadrature.
pub fn invert_phi(g: &Path, c: &LilCoefficients) -> Result<Path> {
    c.check(g)?;
    let h = c.dt;
    let mut integral = DVector::zeros(c.dim());
    let mut out = vec![col(g, 0)];
    for k in 1..g.len() {
        integral += (&c.grads[k - 1] * col(g, k - 1) + &c.grads[k] * col(g, k)) * (h / 2.0);
        out.push(col(g, k) - &integral);
    }
    to_path(g.t0(), h, c.dim(), &out)
}

/// `Ψ(φ)(t) = σ(t)φ(t) − ∫₀ᵗ M(u)φ(u)du` by the trapezoid rule.
pub fn apply_psi(phi: &Path, c: &LilCoefficients) -> Result<Path> {
    c.check(phi)?;
    let h = c.dt;
    let mut integral = DVector::zeros(c.dim());
    let mut out = vec![&c.sigmas[0] * col(phi, 0)];
    for k in 1..phi.len() {
        integral += (&c.sigma_drift[k - 1] * col(phi, k - 1) + &c.sigma_drift[k] * col(phi, k)) * (h / 2.0);
        out.push(&c.sigmas[k] * col(phi, k) - &integral);
    }
    to_path(phi.t0(), h, c.dim(), &out)
}

/// Inverse of [`apply_psi`], when every `σ_k − (h/2)M_k` is invertible.
pub fn invert_psi(p: &Path, c: &LilCoefficients) -> Result<Path> {
    c.check(p)?;
    let h = c.dt;
    let first = c.sigmas[0].clone().lu().solve(&col(p, 0)).ok_or_else(|| Error::Numerical("σ is singular".into()))?;
    let mut out = vec![first];
    let mut integral = DVector::zeros(c.dim());
    for k in 1..p.len() {
        let known = &integral + &c.sigma_drift[k - 1] * &out[k - 1] * (h / 2.0);
        let lhs = &c.sigmas[k] - &c.sigma_drift[k] * (h / 2.0);
        let next = lhs.lu().solve(&(col(p, k) + &known)).ok_or_else(|| Error::Numerical("σ is singular".into()))?;
        integral = known + &c.sigma_drift[k] * &next * (h / 2.0);
        out.push(next);
    }
    to_path(p.t0(), h, c.dim(), &out)
}

/// `ΦΨ(φ)`.
pub fn apply_phi_psi(phi: &Path, c: &LilCoefficients) -> Result<Path> {
    apply_phi(&apply_psi(phi, c)?, c)
}

/// `∫₀ᵀ|φ′|²dt` of the piecewise-linear interpolant.
pub fn energy(phi: &Path) -> f64 {
    let pts: Vec<&[f64]> = phi.points().collect();
    pts.windows(2).map(|w| w[0].iter().zip(w[1]).map(|(a, b)| (b - a) * (b - a)).sum::<f64>()).sum::<f64>() / phi.dt()
}

/// Piecewise-linear path with the given per-step slopes (`steps × d`, row-major), starting at 0.
pub fn from_slopes(slopes: &[f64], d: usize, dt: f64) -> Result<Path> {
    let mut acc = vec![0.0; d];
    let mut values = acc.clone();
    for row in slopes.chunks_exact(d) {
        for (a, s) in acc.iter_mut().zip(row) {
            *a += s * dt;
        }
        values.extend_from_slice(&acc);
    }
    Path::new(0.0, dt, d, values, Interpolation::Linear)
}

/// The rays `±e_i t/√T`.
pub fn extreme_rays(d: usize, dt: f64, steps: usize) -> Result<Vec<Path>> {
    let t_end = dt * steps as f64;
    let mut out = Vec::with_capacity(2 * d);
    for i in 0..d {
        for sign in [1.0, -1.0] {
            let mut slopes = vec![0.0; steps * d];
            for k in 0..steps {
                slopes[k * d + i] = sign / t_end.sqrt();
            }
            out.push(from_slopes(&slopes, d, dt)?);
        }
    }
    Ok(out)
}

/// `count` functions with slope vectors uniform in the energy ball
/// `{Σ|s_k|²dt ≤ 1}`, followed by the extreme rays.
pub fn sample_k(count: usize, d: usize, dt: f64, steps: usize, seed: u64) -> Result<Vec<Path>> {
    if count == 0 || d == 0 || steps == 0 || !(dt > 0.0) {
        return Err(Error::argument("sample_k needs count, d, steps ≥ 1 and dt > 0"));
    }
    let dim = steps * d;
    let mut rng = stream(seed);
    let mut out = Vec::with_capacity(count + 2 * d);
    for _ in 0..count {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let radius = rng.random::<f64>().powf(1.0 / dim as f64);
        let scale = radius / (norm * dt.sqrt());
        out.push(from_slopes(&g.iter().map(|v| v * scale).collect::<Vec<_>>(), d, dt)?);
    }
    out.extend(extreme_rays(d, dt, steps)?);
    Ok(out)
}

/// Energy-one maximizer of `φ ↦ e·ΦΨ(φ)(T)`: the linear functional's Riesz
/// representer, normalized.
pub fn endpoint_maximizer(e: &[f64], c: &LilCoefficients) -> Result<Path> {
    let d = c.dim();
    let steps = c.len() - 1;
    let mut grad = vec![0.0; steps * d];
    for k in 0..steps {
        for i in 0..d {
            let mut s = vec![0.0; steps * d];
            s[k * d + i] = 1.0;
            let image = apply_phi_psi(&from_slopes(&s, d, c.dt)?, c)?;
            grad[k * d + i] = image.last().iter().zip(e).map(|(a, b)| a * b).sum();
        }
    }
    let norm = (grad.iter().map(|v| v * v).sum::<f64>() * c.dt).sqrt();
    if norm == 0.0 {
        return from_slopes(&grad, d, c.dt);
    }
    from_slopes(&grad.iter().map(|v| v / norm).collect::<Vec<_>>(), d, c.dt)
}

/// `max_φ J(ΦΨ(φ))` over the given members of K.
pub fn cluster_extreme(j: impl Fn(&Path) -> f64, c: &LilCoefficients, members: &[Path]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for phi in members {
        best = best.max(j(&apply_phi_psi(phi, c)?));
    }
    Ok(best)
}

/// Closed form `σ√T` of the endpoint extreme for constant scalar `σ` and `∇B̄ = 0`.
pub fn endpoint_extreme_closed_form(sigma: f64, t_end: f64) -> f64 {
    sigma.abs() * t_end.sqrt()
}
