use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::drivers::{make_orbit, DriverSpec, SuspensionSpec};
use crate::error::{Error, Result};
use crate::seed::{pairwise_mean, seed_derive};

/// Slow-variable drift `ℝ^d → ℝ^d` independent of `ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftField {
    Zero,
    Constant { value: Vec<f64> },
    /// `x ↦ M x`.
    Linear { matrix: Vec<Vec<f64>> },
}

/// A `d × m` matrix-valued field `Σ(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MatrixField {
    Constant { matrix: Vec<Vec<f64>> },
    /// `Σ(x) = base + Σ_k x_k slopes[k]`.
    Affine { base: Vec<Vec<f64>>, slopes: Vec<Vec<Vec<f64>>> },
    /// `Σ_ij(x) = base_ij + amplitude_ij sin(x_i)`.
    Sine { base: Vec<Vec<f64>>, amplitude: Vec<Vec<f64>> },
}

/// Vector field `B(x, ξ)` from the built-in catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemForm {
    /// `B(x, ξ) = Σ(x) ξ`.
    Product { sigma: MatrixField },
    /// `B(x, ξ) = drift(x) + Σ(x) ξ`.
    DriftProduct { drift: DriftField, sigma: MatrixField },
    /// `B_i(x, ξ) = −damping·x_i + amplitude·sin(x_i + ξ_i)`.
    SineForcing { damping: f64, amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AveragedMode {
    /// Driver moments from their closed forms.
    ClosedForm,
    /// Driver moments from an ergodic average over `samples` steps.
    MonteCarlo { samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub dim: usize,
    pub form: SystemForm,
    /// Bound `L` on `‖B‖`, `‖∇ₓB‖` and `‖∇²ₓB‖` over `|ξ| ≤ L_ξ`.
    pub c2_bound: f64,
    pub averaged: AveragedMode,
}

fn matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

fn shape(rows: &[Vec<f64>]) -> Option<(usize, usize)> {
    let c = rows.first()?.len();
    (c > 0 && rows.iter().all(|r| r.len() == c && r.iter().all(|x| x.is_finite()))).then_some((rows.len(), c))
}

impl DriftField {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            DriftField::Zero => out.fill(0.0),
            DriftField::Constant { value } => out.copy_from_slice(value),
            DriftField::Linear { matrix } => {
                for (o, row) in out.iter_mut().zip(matrix) {
                    *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
        }
    }

    fn jacobian(&self, d: usize) -> DMatrix<f64> {
        match self {
            DriftField::Linear { matrix: m } => matrix(m),
            _ => DMatrix::zeros(d, d),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        let ok = match self {
            DriftField::Zero => true,
            DriftField::Constant { value } => value.len() == d,
            DriftField::Linear { matrix } => shape(matrix) == Some((d, d)),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("form.drift", format!("drift must map ℝ^{d} to ℝ^{d}")))
        }
    }
}

impl MatrixField {
    /// `(rows, cols)` of `Σ`.
    pub fn shape(&self) -> Option<(usize, usize)> {
        match self {
            MatrixField::Constant { matrix } => shape(matrix),
            MatrixField::Affine { base, .. } | MatrixField::Sine { base, .. } => shape(base),
        }
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            MatrixField::Constant { matrix: m } => matrix(m),
            MatrixField::Affine { base, slopes } => {
                let mut s = matrix(base);
                for (xk, m) in x.iter().zip(slopes) {
                    s += matrix(m) * *xk;
                }
                s
            }
            MatrixField::Sine { base, amplitude } => {
                let (r, c) = (base.len(), base[0].len());
                DMatrix::from_fn(r, c, |i, j| base[i][j] + amplitude[i][j] * x[i].sin())
            }
        }
    }

    /// `∂Σ/∂x_k`.
    pub fn partial(&self, x: &[f64], k: usize) -> DMatrix<f64> {
        let (r, c) = self.shape().unwrap_or((0, 0));
        match self {
            MatrixField::Constant { .. } => DMatrix::zeros(r, c),
            MatrixField::Affine { slopes, .. } => matrix(&slopes[k]),
            MatrixField::Sine { amplitude, .. } => {
                DMatrix::from_fn(r, c, |i, j| if i == k { amplitude[i][j] * x[i].cos() } else { 0.0 })
            }
        }
    }

    /// `∂²Σ/∂x_k∂x_l`.
    fn second_partial(&self, x: &[f64], k: usize, l: usize) -> DMatrix<f64> {
        let (r, c) = self.shape().unwrap_or((0, 0));
        match self {
            MatrixField::Sine { amplitude, .. } if k == l => {
                DMatrix::from_fn(r, c, |i, j| if i == k { -amplitude[i][j] * x[i].sin() } else { 0.0 })
            }
            _ => DMatrix::zeros(r, c),
        }
    }

    fn validate(&self, d: usize) -> Result<usize> {
        let bad = |m: String| Err(Error::config("form.sigma", m));
        let Some((r, c)) = self.shape() else { return bad("sigma must be a non-empty finite matrix".into()) };
        if r != d {
            return bad(format!("sigma has {r} rows, system dimension is {d}"));
        }
        match self {
            MatrixField::Affine { slopes, .. } => {
                if slopes.len() != d || slopes.iter().any(|m| shape(m) != Some((r, c))) {
                    return bad(format!("affine sigma needs {d} slope matrices of shape {r}×{c}"));
                }
            }
            MatrixField::Sine { amplitude, .. } if shape(amplitude) != Some((r, c)) => {
                return bad(format!("sine amplitude must be {r}×{c}"));
            }
            _ => {}
        }
        Ok(c)
    }
}

impl SystemSpec {
    /// Scalar `B(x, ξ) = (a + b x) ξ`.
    pub fn scalar_product(a: f64, b: f64, c2_bound: f64) -> Self {
        SystemSpec {
            dim: 1,
            form: SystemForm::Product {
                sigma: MatrixField::Affine { base: vec![vec![a]], slopes: vec![vec![vec![b]]] },
            },
            c2_bound,
            averaged: AveragedMode::ClosedForm,
        }
    }

    /// `B(x, ξ) = Σ ξ` with constant `Σ`.
    pub fn constant_product(sigma: Vec<Vec<f64>>, c2_bound: f64) -> Self {
        SystemSpec {
            dim: sigma.len(),
            form: SystemForm::Product { sigma: MatrixField::Constant { matrix: sigma } },
            c2_bound,
            averaged: AveragedMode::ClosedForm,
        }
    }

    pub fn is_product(&self) -> bool {
        matches!(self.form, SystemForm::Product { .. })
    }

    pub fn sigma_field(&self) -> Option<&MatrixField> {
        match &self.form {
            SystemForm::Product { sigma } | SystemForm::DriftProduct { sigma, .. } => Some(sigma),
            SystemForm::SineForcing { .. } => None,
        }
    }

    /// Driver dimension the system expects.
    pub fn driver_dim(&self) -> Result<usize> {
        if self.dim == 0 {
            return Err(Error::config("dim", "must be positive"));
        }
        match &self.form {
            SystemForm::Product { sigma } => sigma.validate(self.dim),
            SystemForm::DriftProduct { drift, sigma } => {
                drift.validate(self.dim)?;
                sigma.validate(self.dim)
            }
            SystemForm::SineForcing { damping, amplitude } => {
                if !damping.is_finite() || !amplitude.is_finite() {
                    return Err(Error::config("form", "coefficients must be finite"));
                }
                Ok(self.dim)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.driver_dim()?;
        if !(self.c2_bound > 0.0) || !self.c2_bound.is_finite() {
            return Err(Error::config("c2_bound", "must be positive and finite"));
        }
        if let AveragedMode::MonteCarlo { samples: 0 } = self.averaged {
            return Err(Error::config("averaged.samples", "must be at least 1"));
        }
        Ok(())
    }

    /// `B(x, ξ)`.
    pub fn eval(&self, x: &[f64], xi: &[f64], out: &mut [f64]) {
        match &self.form {
            SystemForm::Product { sigma } => {
                let s = sigma.eval(x);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..s.ncols()).map(|j| s[(i, j)] * xi[j]).sum();
                }
            }
            SystemForm::DriftProduct { drift, sigma } => {
                drift.eval(x, out);
                let s = sigma.eval(x);
                for (i, o) in out.iter_mut().enumerate() {
                    *o += (0..s.ncols()).map(|j| s[(i, j)] * xi[j]).sum::<f64>();
                }
            }
            SystemForm::SineForcing { damping, amplitude } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = -damping * x[i] + amplitude * (x[i] + xi[i]).sin();
                }
            }
        }
    }

    /// Norms of `B`, `∇ₓB`, `∇²ₓB` at `x`, maximized over `|ξ| ≤ xi_bound`
    /// (Frobenius norms of the derivative tensors).
    pub fn derivative_norms(&self, x: &[f64], xi_bound: f64) -> (f64, f64, f64) {
        let d = self.dim;
        match &self.form {
            SystemForm::Product { sigma } | SystemForm::DriftProduct { sigma, .. } => {
                let mut drift = vec![0.0; d];
                let mut jac = DMatrix::zeros(d, d);
                if let SystemForm::DriftProduct { drift: f, .. } = &self.form {
                    f.eval(x, &mut drift);
                    jac = f.jacobian(d);
                }
                let c0 = DVector::from_vec(drift).norm() + sigma.eval(x).norm() * xi_bound;
                let s1: f64 = (0..d).map(|k| sigma.partial(x, k).norm_squared()).sum();
                let c1 = jac.norm() + s1.sqrt() * xi_bound;
                let s2: f64 = (0..d).flat_map(|k| (0..d).map(move |l| (k, l))).map(|(k, l)| sigma.second_partial(x, k, l).norm_squared()).sum();
                (c0, c1, s2.sqrt() * xi_bound)
            }
            SystemForm::SineForcing { damping, amplitude } => {
                let xn = DVector::from_column_slice(x).norm();
                let sd = (d as f64).sqrt();
                (damping.abs() * xn + amplitude.abs() * sd, damping.abs() * sd + amplitude.abs(), amplitude.abs())
            }
        }
    }

    /// Spot-check the declared C² bound on a grid of states.
    pub fn check_c2_bound(&self, xi_bound: f64, grid: &[Vec<f64>]) -> Result<()> {
        for x in grid {
            let (c0, c1, c2) = self.derivative_norms(x, xi_bound);
            let worst = c0.max(c1).max(c2);
            if worst > self.c2_bound * (1.0 + 1e-12) {
                return Err(Error::config(
                    "c2_bound",
                    format!("at x = {x:?} the C² norm reaches {worst}, above L = {}", self.c2_bound),
                ));
            }
        }
        Ok(())
    }
}

/// Driver moments entering `B̄`: `E ξ` for product forms, `(E cos ξ_i, E sin ξ_i)`
/// for sine forcing.
#[derive(Debug, Clone, PartialEq)]
enum Moments {
    Mean(Vec<f64>),
    Trig { cos: Vec<f64>, sin: Vec<f64> },
}

/// A system resolved against a driver: `B`, `B̄`, `∇B̄` and the product
/// diffusion `Σ ς Σᵀ` are all available.
#[derive(Debug, Clone)]
pub struct Model {
    spec: SystemSpec,
    moments: Moments,
    varsigma: Option<DMatrix<f64>>,
}

fn estimate_moments(spec: &SystemSpec, samples: &[Vec<f64>], weights: &[f64]) -> Moments {
    let m = samples[0].len();
    let total: f64 = weights.iter().sum();
    let weighted = |g: &dyn Fn(f64) -> f64, j: usize| -> f64 {
        let terms: Vec<f64> = samples.iter().zip(weights).map(|(s, w)| w * g(s[j])).collect();
        pairwise_mean(&terms) * samples.len() as f64 / total
    };
    match spec.form {
        SystemForm::SineForcing { .. } => Moments::Trig {
            cos: (0..m).map(|j| weighted(&f64::cos, j)).collect(),
            sin: (0..m).map(|j| weighted(&f64::sin, j)).collect(),
        },
        _ => Moments::Mean((0..m).map(|j| weighted(&|v| v, j)).collect()),
    }
}

impl Model {
    /// Resolve against a discrete driver under its invariant measure.
    pub fn new(spec: SystemSpec, driver: &DriverSpec, seed: u64) -> Result<Model> {
        spec.validate()?;
        driver.validate()?;
        let m = spec.driver_dim()?;
        if driver.dim() != m {
            return Err(Error::config("driver.observable.dim", format!("system expects a driver of dimension {m}")));
        }
        let moments = match (&spec.averaged, &spec.form) {
            (AveragedMode::ClosedForm, SystemForm::SineForcing { .. }) => {
                return Err(Error::config("averaged", "sine-forcing needs monte-carlo averaging"));
            }
            (AveragedMode::ClosedForm, _) => Moments::Mean(driver.analytic_mean().ok_or_else(|| {
                Error::config("averaged", "driver has no closed-form mean; use monte-carlo averaging")
            })?),
            (AveragedMode::MonteCarlo { samples }, _) => {
                let mut orbit = make_orbit(driver, seed_derive(seed, "averaged-field", 0))?;
                let xs: Vec<Vec<f64>> = (0..*samples).map(|_| orbit.next()).collect();
                estimate_moments(&spec, &xs, &vec![1.0; xs.len()])
            }
        };
        Ok(Model { spec, moments, varsigma: driver.analytic_long_run_covariance() })
    }

    /// Resolve against a suspension flow: time averages weight each base
    /// sample by its roof, `E[τ ξ]/E[τ]`.
    pub fn for_suspension(spec: SystemSpec, suspension: &SuspensionSpec, seed: u64) -> Result<Model> {
        suspension.validate()?;
        let constant_roof = matches!(suspension.roof, crate::drivers::RoofSpec::Constant { .. });
        if constant_roof {
            let mut model = Model::new(spec, &suspension.base, seed)?;
            model.varsigma = None;
            return Ok(model);
        }
        spec.validate()?;
        let samples = match spec.averaged {
            AveragedMode::MonteCarlo { samples } => samples,
            AveragedMode::ClosedForm => {
                return Err(Error::config("averaged", "a non-constant roof needs monte-carlo averaging"));
            }
        };
        let traj = crate::drivers::suspension_trajectory(suspension, seed_derive(seed, "averaged-field", 0), samples as f64)?;
        let xs: Vec<Vec<f64>> = traj.segments().iter().map(|s| s.xi.clone()).collect();
        let w: Vec<f64> = traj.segments().iter().map(|s| s.duration).collect();
        let moments = estimate_moments(&spec, &xs, &w);
        Ok(Model { spec, moments, varsigma: None })
    }

    /// A model with an explicitly given driver mean (product forms).
    pub fn with_mean(spec: SystemSpec, xi_bar: Vec<f64>, varsigma: Option<DMatrix<f64>>) -> Result<Model> {
        spec.validate()?;
        if spec.driver_dim()? != xi_bar.len() || matches!(spec.form, SystemForm::SineForcing { .. }) {
            return Err(Error::argument("mean does not fit the system"));
        }
        Ok(Model { spec, moments: Moments::Mean(xi_bar), varsigma })
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn c2_bound(&self) -> f64 {
        self.spec.c2_bound
    }

    /// `E ξ` for product forms.
    pub fn xi_bar(&self) -> Option<&[f64]> {
        match &self.moments {
            Moments::Mean(m) => Some(m),
            Moments::Trig { .. } => None,
        }
    }

    /// Long-run covariance `ς` of the driver, when known in closed form.
    pub fn varsigma(&self) -> Option<&DMatrix<f64>> {
        self.varsigma.as_ref()
    }

    pub fn set_varsigma(&mut self, varsigma: DMatrix<f64>) {
        self.varsigma = Some(varsigma);
    }

    pub fn b(&self, x: &[f64], xi: &[f64], out: &mut [f64]) {
        self.spec.eval(x, xi, out);
    }

    /// `B̄(x)`.
    pub fn b_bar(&self, x: &[f64], out: &mut [f64]) {
        match (&self.moments, &self.spec.form) {
            (Moments::Mean(m), _) => self.spec.eval(x, m, out),
            (Moments::Trig { cos, sin }, SystemForm::SineForcing { damping, amplitude }) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = -damping * x[i] + amplitude * (x[i].sin() * cos[i] + x[i].cos() * sin[i]);
                }
            }
            _ => unreachable!(),
        }
    }

    pub fn b_bar_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.b_bar(x, &mut out);
        out
    }

    /// `∇B̄(x)`, with `(i, k)` entry `∂B̄_i/∂x_k`.
    pub fn grad_b_bar(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        match (&self.moments, &self.spec.form) {
            (Moments::Mean(m), SystemForm::Product { sigma } | SystemForm::DriftProduct { sigma, .. }) => {
                let mut g = match &self.spec.form {
                    SystemForm::DriftProduct { drift, .. } => drift.jacobian(d),
                    _ => DMatrix::zeros(d, d),
                };
                let mv = DVector::from_column_slice(m);
                for k in 0..d {
                    let col = sigma.partial(x, k) * &mv;
                    for i in 0..d {
                        g[(i, k)] += col[i];
                    }
                }
                g
            }
            (Moments::Trig { cos, sin }, SystemForm::SineForcing { damping, amplitude }) => {
                DMatrix::from_fn(d, d, |i, k| {
                    if i == k {
                        -damping + amplitude * (x[i].cos() * cos[i] - x[i].sin() * sin[i])
                    } else {
                        0.0
                    }
                })
            }
            _ => unreachable!(),
        }
    }

    /// `Σ(x)` for product forms.
    pub fn sigma_matrix(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.spec.sigma_field().map(|s| s.eval(x))
    }

    /// Closed-form `A(x) = Σ(x) ς Σ(x)ᵀ` for product forms with known `ς`.
    pub fn product_diffusion(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let s = self.sigma_matrix(x)?;
        let v = self.varsigma.as_ref()?;
        Some(&s * v * s.transpose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{IidLaw, ObservableSpec};

    fn uniform() -> DriverSpec {
        DriverSpec::iid(IidLaw::Uniform { low: vec![-1.0], high: vec![1.0] }, 1.0)
    }

    #[test]
    fn product_averaged_field_is_sigma_times_mean() {
        let driver = DriverSpec::iid(IidLaw::Uniform { low: vec![0.0], high: vec![1.0] }, 1.0);
        let model = Model::new(SystemSpec::scalar_product(1.0, 0.5, 2.0), &driver, 1).unwrap();
        assert_eq!(model.b_bar_vec(&[2.0]), vec![(1.0 + 0.5 * 2.0) * 0.5]);
        assert_eq!(model.grad_b_bar(&[2.0])[(0, 0)], 0.25);
    }

    #[test]
    fn doubling_cosine_and_symmetric_chain_average_to_zero() {
        let spec = SystemSpec::constant_product(vec![vec![1.0]], 1.0);
        let dbl = Model::new(spec.clone(), &DriverSpec::doubling(ObservableSpec::cosine(1), 1.0), 1).unwrap();
        assert_eq!(dbl.b_bar_vec(&[0.3]), vec![0.0]);
        let chain = Model::new(spec, &DriverSpec::two_state(0.25), 1).unwrap();
        assert_eq!(chain.b_bar_vec(&[0.3]), vec![0.0]);
    }

    #[test]
    fn sine_forcing_monte_carlo_moments() {
        let spec = SystemSpec {
            dim: 1,
            form: SystemForm::SineForcing { damping: 1.0, amplitude: 0.5 },
            c2_bound: 3.0,
            averaged: AveragedMode::MonteCarlo { samples: 200_000 },
        };
        let model = Model::new(spec, &uniform(), 7).unwrap();
        // E cos ξ = sin 1 for ξ ~ U[−1, 1]; E sin ξ = 0.
        let x = 0.4f64;
        let want = -x + 0.5 * x.sin() * 1f64.sin();
        assert!((model.b_bar_vec(&[x])[0] - want).abs() < 5e-3);
        let h = 1e-6;
        let fd = (model.b_bar_vec(&[x + h])[0] - model.b_bar_vec(&[x - h])[0]) / (2.0 * h);
        assert!((model.grad_b_bar(&[x])[(0, 0)] - fd).abs() < 1e-6);
    }

    #[test]
    fn c2_spot_check() {
        let spec = SystemSpec::scalar_product(1.0, 0.5, 1.5);
        let grid: Vec<Vec<f64>> = (-10..=10).map(|i| vec![i as f64 * 0.1]).collect();
        spec.check_c2_bound(1.0, &grid).unwrap();
        assert!(spec.check_c2_bound(1.0, &[vec![5.0]]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let spec = SystemSpec::constant_product(vec![vec![1.0, 0.0]], 1.0);
        assert!(matches!(Model::new(spec, &uniform(), 1), Err(Error::Config { .. })));
    }
}
