use nalgebra::{DMatrix, DVector};

use super::system::{AveragedMode, Model, SystemSpec};
use crate::drivers::{make_orbit, DriverOrbit, DriverSpec, SuspensionTrajectory};
use crate::error::{Error, Result};
use crate::path::{Interpolation, Path};
use crate::seed::pairwise_mean;

/// Default RK4 substep for the continuous system, as a fraction of `ε`.
pub const DEFAULT_SUBSTEP_FRACTION: f64 = 0.125;

/// 8-point Gauss–Legendre nodes on `[-1, 1]` (positive half) and weights.
const GL8_NODES: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL8_WEIGHTS: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

/// Number of `ε`-steps in `[0, T]`: `[T/ε]` with a rounding guard.
pub fn step_count(eps: f64, t_end: f64) -> Result<usize> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::argument(format!("ε must be positive, got {eps}")));
    }
    if !(t_end >= eps * (1.0 - 1e-12)) || !t_end.is_finite() {
        return Err(Error::argument(format!("T = {t_end} must be at least ε = {eps}")));
    }
    Ok((t_end / eps * (1.0 + 1e-12)).floor() as usize)
}

fn ensure_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} produced a non-finite value")))
    }
}

/// `X^ε((n+1)ε) = X^ε(nε) + εB(X^ε(nε), ξ(n))` on `n ≤ [T/ε]`, piecewise constant.
pub fn slow_discrete(model: &Model, orbit: &mut DriverOrbit, eps: f64, x0: &[f64], t_end: f64) -> Result<Path> {
    let n = step_count(eps, t_end)?;
    let d = model.dim();
    let mut values = Vec::with_capacity((n + 1) * d);
    values.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut xi = vec![0.0; orbit.dim()];
    let mut b = vec![0.0; d];
    for _ in 0..n {
        orbit.next_into(&mut xi);
        model.b(&x, &xi, &mut b);
        for (xi, bi) in x.iter_mut().zip(&b) {
            *xi += eps * bi;
        }
        values.extend_from_slice(&x);
    }
    ensure_finite(&values, "slow_discrete")?;
    Path::new(0.0, eps, d, values, Interpolation::PiecewiseConstant)
}

fn rk4_step(f: &impl Fn(&[f64], &mut [f64]), x: &mut [f64], h: f64, k: &mut [Vec<f64>; 5]) {
    let d = x.len();
    let [k1, k2, k3, k4, tmp] = k;
    f(x, k1);
    for i in 0..d {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f(tmp, k2);
    for i in 0..d {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f(tmp, k3);
    for i in 0..d {
        tmp[i] = x[i] + h * k3[i];
    }
    f(tmp, k4);
    for i in 0..d {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn rk4_span(f: &impl Fn(&[f64], &mut [f64]), x: &mut [f64], span: f64, max_step: f64, k: &mut [Vec<f64>; 5]) {
    if span <= 0.0 {
        return;
    }
    let m = (span / max_step * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let h = span / m as f64;
    for _ in 0..m {
        rk4_step(f, x, h, k);
    }
}

fn scratch(d: usize) -> [Vec<f64>; 5] {
    std::array::from_fn(|_| vec![0.0; d])
}

/// RK4 solution of `dX/dt = field(X)` sampled every `dt` on `[0, T]`, with
/// internal steps no longer than `min(dt, 10⁻²)`.
pub fn averaged_flow(field: impl Fn(&[f64], &mut [f64]), x0: &[f64], t_end: f64, dt: f64) -> Result<Path> {
    let n = step_count(dt, t_end)?;
    let d = x0.len();
    let h = dt.min(1e-2);
    let mut k = scratch(d);
    let mut x = x0.to_vec();
    let mut values = Vec::with_capacity((n + 1) * d);
    values.extend_from_slice(&x);
    for _ in 0..n {
        rk4_span(&field, &mut x, dt, h, &mut k);
        values.extend_from_slice(&x);
    }
    ensure_finite(&values, "averaged_flow")?;
    Path::new(0.0, dt, d, values, Interpolation::Linear)
}

/// `X̄` of a model on the grid of step `dt`.
pub fn averaged_path(model: &Model, x0: &[f64], t_end: f64, dt: f64) -> Result<Path> {
    averaged_flow(|x, out| model.b_bar(x, out), x0, t_end, dt)
}

/// RK4 integration of `dX/dt = B(X, ξ(t/ε))` over a suspension driver.
///
/// Internal steps never straddle a roof-segment end `εΘ_k` or an output node;
/// the output grid has step `ε`.
pub fn slow_continuous(
    model: &Model,
    traj: &SuspensionTrajectory,
    eps: f64,
    x0: &[f64],
    t_end: f64,
    substep: Option<f64>,
) -> Result<Path> {
    let n = step_count(eps, t_end)?;
    let needed = n as f64 + 1e-9;
    if traj.horizon() < needed {
        return Err(Error::argument(format!(
            "driver horizon {} is shorter than T/ε = {}",
            traj.horizon(),
            n
        )));
    }
    let h = substep.unwrap_or(eps * DEFAULT_SUBSTEP_FRACTION);
    if !(h > 0.0) {
        return Err(Error::argument("substep must be positive"));
    }
    let d = model.dim();
    let theta = traj.theta();
    let segs = traj.segments();
    let mut k = scratch(d);
    let mut x = x0.to_vec();
    let mut values = Vec::with_capacity((n + 1) * d);
    values.extend_from_slice(&x);
    let tol = 1e-12 * eps;
    let (mut t, mut seg, mut node) = (0.0, 0usize, 1usize);
    while node <= n {
        let t_node = node as f64 * eps;
        let t_bound = eps * theta[seg + 1];
        let xi = &segs[seg].xi;
        let f = |y: &[f64], out: &mut [f64]| model.b(y, xi, out);
        if t_bound < t_node - tol {
            rk4_span(&f, &mut x, t_bound - t, h, &mut k);
            t = t_bound;
            seg += 1;
        } else {
            rk4_span(&f, &mut x, t_node - t, h, &mut k);
            t = t_node;
            values.extend_from_slice(&x);
            node += 1;
            if t_bound <= t_node + tol {
                seg += 1;
            }
        }
    }
    ensure_finite(&values, "slow_continuous")?;
    Path::new(0.0, eps, d, values, Interpolation::Linear)
}

/// The discretizations `y^ε`, `z^ε` of a suspension-driven system.
#[derive(Debug, Clone)]
pub struct SuspensionDiscretization {
    /// `y^ε(kε)`, indexed by base step `k`.
    pub y: Path,
    /// `z^ε(kε)`, with `g(x, ω) = τ(ω)B̄(x)`.
    pub z: Path,
    /// Cumulative roofs `Θ_k` of the driving trajectory.
    pub theta: Vec<f64>,
}

impl SuspensionDiscretization {
    /// `n(s) = max{k : Θ_k ≤ s}` in fast time.
    pub fn n_at(&self, s: f64) -> usize {
        self.theta.partition_point(|&th| th <= s).saturating_sub(1)
    }
}

/// `∫₀^τ f(s) ds` by 8-point Gauss–Legendre.
pub fn gauss_legendre8(tau: f64, f: impl Fn(f64, &mut [f64]), out: &mut [f64]) {
    let half = 0.5 * tau;
    let mut buf = vec![0.0; out.len()];
    out.fill(0.0);
    for (node, w) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
        for s in [half * (1.0 - node), half * (1.0 + node)] {
            f(s, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += half * w * b;
            }
        }
    }
}

/// `y^ε((k+1)ε) = y^ε(kε) + εb(y^ε(kε), ϑᵏω)` with `b = ∫₀^τ B(x, ξ(s)) ds`,
/// and the same recursion for `z^ε` with `g = τB̄`, for every base step
/// needed to cover `[0, T/ε]` in fast time.
pub fn discretize_suspension(
    model: &Model,
    traj: &SuspensionTrajectory,
    eps: f64,
    x0: &[f64],
    t_end: f64,
) -> Result<SuspensionDiscretization> {
    let n = step_count(eps, t_end)?;
    if traj.horizon() < n as f64 + 1e-9 {
        return Err(Error::argument(format!("driver horizon {} is shorter than T/ε = {n}", traj.horizon())));
    }
    let d = model.dim();
    let segs = traj.segments();
    let steps = (traj.n_at(n as f64) + 1).min(segs.len());
    let mut y = x0.to_vec();
    let mut z = x0.to_vec();
    let mut ys = Vec::with_capacity((steps + 1) * d);
    let mut zs = Vec::with_capacity((steps + 1) * d);
    ys.extend_from_slice(&y);
    zs.extend_from_slice(&z);
    let mut b = vec![0.0; d];
    let mut g = vec![0.0; d];
    for seg in &segs[..steps] {
        // ξ(s, ω) is constant on the segment.
        gauss_legendre8(seg.duration, |_, out| model.b(&y, &seg.xi, out), &mut b);
        model.b_bar(&z, &mut g);
        for i in 0..d {
            y[i] += eps * b[i];
            z[i] += eps * seg.duration * g[i];
        }
        ys.extend_from_slice(&y);
        zs.extend_from_slice(&z);
    }
    ensure_finite(&ys, "discretize_suspension")?;
    Ok(SuspensionDiscretization {
        y: Path::new(0.0, eps, d, ys, Interpolation::PiecewiseConstant)?,
        z: Path::new(0.0, eps, d, zs, Interpolation::PiecewiseConstant)?,
        theta: traj.theta()[..=steps].to_vec(),
    })
}

/// `sup_t |X^ε(t) − y^ε(ε n(t/ε))|` over the nodes of `x`.
pub fn suspension_gap(x: &Path, disc: &SuspensionDiscretization, eps: f64) -> f64 {
    (0..x.len())
        .map(|m| {
            let k = disc.n_at(x.time(m) / eps * (1.0 + 1e-12)).min(disc.y.len() - 1);
            DVector::from_column_slice(x.point(m)).metric_distance(&DVector::from_column_slice(disc.y.point(k)))
        })
        .fold(0.0, f64::max)
}

/// `εLL̄(2 + e^{LT} + L̄e^{LL̄T})`.
pub fn suspension_gap_bound(eps: f64, l: f64, l_bar: f64, t_end: f64) -> f64 {
    eps * l * l_bar * (2.0 + (l * t_end).exp() + l_bar * (l * l_bar * t_end).exp())
}

/// Pointwise `ε^{-1/2}(X(t) − X̄(t))`.
pub fn normalized_deviation(x: &Path, x_bar: &Path, eps: f64) -> Result<Path> {
    let s = eps.sqrt().recip();
    x.combine(s, x_bar, -s)
}

/// `S^ε` and the linearized deviation `Z^ε` along one orbit.
#[derive(Debug, Clone)]
pub struct LinearizedDeviation {
    /// `S^ε(nε) = Σ_{k<n} (B(X̄(kε), ξ(k)) − B̄(X̄(kε)))`.
    pub s: Path,
    /// `Z(nε) = ε(S(nε) − S((n−1)ε)) + (I + ε∇B̄(X̄((n−1)ε)))Z((n−1)ε)`.
    pub z: Path,
    pub x_bar: Path,
}

pub fn linearized_deviation_z(
    model: &Model,
    orbit: &mut DriverOrbit,
    eps: f64,
    x0: &[f64],
    t_end: f64,
) -> Result<LinearizedDeviation> {
    let n = step_count(eps, t_end)?;
    let d = model.dim();
    let x_bar = averaged_path(model, x0, n as f64 * eps, eps)?;
    let mut s = vec![0.0; d];
    let mut z = DVector::zeros(d);
    let mut ss = Vec::with_capacity((n + 1) * d);
    let mut zs = Vec::with_capacity((n + 1) * d);
    ss.extend_from_slice(&s);
    zs.extend_from_slice(z.as_slice());
    let mut xi = vec![0.0; orbit.dim()];
    let mut b = vec![0.0; d];
    let mut bb = vec![0.0; d];
    for k in 0..n {
        let xb = x_bar.point(k);
        orbit.next_into(&mut xi);
        model.b(xb, &xi, &mut b);
        model.b_bar(xb, &mut bb);
        let jump = DVector::from_fn(d, |i, _| b[i] - bb[i]);
        let prop = DMatrix::identity(d, d) + model.grad_b_bar(xb) * eps;
        z = jump * eps + prop * z;
        for i in 0..d {
            s[i] += b[i] - bb[i];
        }
        ss.extend_from_slice(&s);
        zs.extend_from_slice(z.as_slice());
    }
    Ok(LinearizedDeviation {
        s: Path::new(0.0, eps, d, ss, Interpolation::PiecewiseConstant)?,
        z: Path::new(0.0, eps, d, zs, Interpolation::PiecewiseConstant)?,
        x_bar,
    })
}

/// Both sides of the Gronwall estimate
/// `sup_n |X^ε(nε) − X̄(nε)| ≤ e^{LT}(L²Tε + ε max_n |S^ε(nε)|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GronwallCheck {
    pub deviation: f64,
    pub bound: f64,
}

impl GronwallCheck {
    pub fn holds(&self) -> bool {
        self.deviation <= self.bound
    }
}

pub fn gronwall_check(x: &Path, x_bar: &Path, s: &Path, l: f64, eps: f64) -> Result<GronwallCheck> {
    x.ensure_same_grid(x_bar)?;
    x.ensure_same_grid(s)?;
    let t = x.t_end() - x.t0();
    let sup = |p: &Path, q: Option<&Path>| {
        (0..p.len())
            .map(|k| {
                let a = p.point(k);
                match q {
                    Some(q) => a.iter().zip(q.point(k)).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt(),
                    None => a.iter().map(|u| u * u).sum::<f64>().sqrt(),
                }
            })
            .fold(0.0, f64::max)
    };
    let deviation = sup(x, Some(x_bar));
    let bound = (l * t).exp() * (l * l * t * eps + eps * sup(s, None));
    Ok(GronwallCheck { deviation, bound })
}

/// An estimate of `B̄(x)` with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedEstimate {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
}

const BATCHES: usize = 32;

/// `B̄(x)`: closed form when the system declares it, otherwise an ergodic
/// average of `B(x, ξ(k))` over `n_samples` steps with batch-means errors.
pub fn averaged_field(system: &SystemSpec, driver: &DriverSpec, x: &[f64], n_samples: usize, seed: u64) -> Result<AveragedEstimate> {
    if n_samples == 0 {
        return Err(Error::argument("n_samples must be at least 1"));
    }
    let d = system.dim;
    if system.averaged == AveragedMode::ClosedForm {
        if let Ok(model) = Model::new(system.clone(), driver, seed) {
            return Ok(AveragedEstimate { value: model.b_bar_vec(x), stderr: vec![0.0; d] });
        }
    }
    system.validate()?;
    let mut orbit = make_orbit(driver, seed)?;
    let mut xi = vec![0.0; driver.dim()];
    let mut b = vec![0.0; d];
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n_samples); d];
    for _ in 0..n_samples {
        orbit.next_into(&mut xi);
        system.eval(x, &xi, &mut b);
        for (c, v) in cols.iter_mut().zip(&b) {
            c.push(*v);
        }
    }
    let nb = BATCHES.min(n_samples);
    let per = n_samples / nb;
    let mut value = Vec::with_capacity(d);
    let mut stderr = Vec::with_capacity(d);
    for c in &cols {
        value.push(pairwise_mean(c));
        let means: Vec<f64> = (0..nb).map(|j| pairwise_mean(&c[j * per..(j + 1) * per])).collect();
        let m = pairwise_mean(&means);
        let var = if nb > 1 { means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (nb - 1) as f64 } else { f64::NAN };
        stderr.push((var / nb as f64).sqrt());
    }
    Ok(AveragedEstimate { value, stderr })
}
