//! Stationary fast drivers `ξ(n) = f(Fⁿω)`.
//!
//! Built-in maps are represented exactly so long orbits do not collapse:
//!
//! * the doubling map is the Bernoulli shift on a lazily extended stream of
//!   fair bits, observed through a 64-bit window;
//! * the cat map acts on the `2^64 × 2^64` integer torus lattice with
//!   wrapping arithmetic;
//! * the Gauss map is the shift on continued-fraction digits, each new digit
//!   drawn from its exact conditional law given the past digits, observed
//!   through a finite digit window;
//! * finite Markov chains stand in for Gibbs measures on subshifts.
//!
//! Every orbit starts from a draw of the invariant measure.

mod autocorr;
mod markov;
mod observable;
mod orbit;
mod suspension;

pub use autocorr::{autocorrelation_decay, AutocorrReport};
pub use markov::MarkovChain;
pub use observable::Observable;
pub use orbit::{make_orbit, DriverOrbit};
pub use suspension::{suspension_trajectory, RoofSpec, Segment, SuspensionSpec, SuspensionTrajectory};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Gauss-map digit window.
pub const DEFAULT_GAUSS_WINDOW: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriverKind {
    DoublingMap,
    CatMap,
    GaussMap,
    MarkovChain,
    Iid,
}

impl DriverKind {
    /// Dimension of the underlying map state (the domain of a coordinate
    /// or trig-polynomial observable).
    pub fn state_dim(self, params: &DriverParams) -> usize {
        match self {
            DriverKind::DoublingMap | DriverKind::GaussMap | DriverKind::MarkovChain => 1,
            DriverKind::CatMap => 2,
            DriverKind::Iid => params.distribution.as_ref().map_or(1, IidLaw::dim),
        }
    }
}

/// One Fourier mode `cos·cos(2π⟨k,x⟩) + sin·sin(2π⟨k,x⟩)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub freq: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObservableForm {
    /// `terms[i]` lists the modes of output component `i`.
    TrigPolynomial { terms: Vec<Vec<TrigTerm>> },
    /// `values[c]` is the output vector on symbolic cell `c`.
    CellIndicator { values: Vec<Vec<f64>> },
    /// The raw map state.
    Coordinate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSpec {
    #[serde(flatten)]
    pub form: ObservableForm,
    pub dim: usize,
}

impl ObservableSpec {
    pub fn coordinate(dim: usize) -> Self {
        ObservableSpec { form: ObservableForm::Coordinate, dim }
    }

    /// Scalar `cos(2π k x)` on a one-dimensional state.
    pub fn cosine(k: i64) -> Self {
        ObservableSpec {
            form: ObservableForm::TrigPolynomial {
                terms: vec![vec![TrigTerm { freq: vec![k], cos: 1.0, sin: 0.0 }]],
            },
            dim: 1,
        }
    }

    /// Scalar lookup table over cells.
    pub fn table(values: &[f64]) -> Self {
        ObservableSpec {
            form: ObservableForm::CellIndicator { values: values.iter().map(|v| vec![*v]).collect() },
            dim: 1,
        }
    }
}

/// Law of an iid driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IidLaw {
    /// Independent coordinates uniform on `[low_i, high_i]`.
    Uniform { low: Vec<f64>, high: Vec<f64> },
    /// Independent fair signs.
    Rademacher { dim: usize },
    /// Independent `N(0, sd²)` coordinates conditioned on `|z| ≤ cutoff·sd`.
    TruncatedNormal { dim: usize, sd: f64, cutoff: f64 },
    Discrete { atoms: Vec<Vec<f64>>, probs: Vec<f64> },
    Constant { value: Vec<f64> },
}

impl IidLaw {
    pub fn dim(&self) -> usize {
        match self {
            IidLaw::Uniform { low, .. } => low.len(),
            IidLaw::Rademacher { dim } | IidLaw::TruncatedNormal { dim, .. } => *dim,
            IidLaw::Discrete { atoms, .. } => atoms.first().map_or(0, Vec::len),
            IidLaw::Constant { value } => value.len(),
        }
    }

    /// Number of symbolic cells, when the law is discrete.
    fn cells(&self) -> Option<usize> {
        match self {
            IidLaw::Rademacher { dim: 1 } => Some(2),
            IidLaw::Discrete { atoms, .. } => Some(atoms.len()),
            IidLaw::Constant { .. } => Some(1),
            _ => None,
        }
    }

    fn mean(&self) -> Vec<f64> {
        match self {
            IidLaw::Uniform { low, high } => low.iter().zip(high).map(|(a, b)| 0.5 * (a + b)).collect(),
            IidLaw::Rademacher { dim } | IidLaw::TruncatedNormal { dim, .. } => vec![0.0; *dim],
            IidLaw::Discrete { atoms, probs } => {
                let d = self.dim();
                let mut m = vec![0.0; d];
                for (a, p) in atoms.iter().zip(probs) {
                    for (mi, ai) in m.iter_mut().zip(a) {
                        *mi += p * ai;
                    }
                }
                m
            }
            IidLaw::Constant { value } => value.clone(),
        }
    }

    fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        match self {
            IidLaw::Uniform { low, high } => {
                DMatrix::from_fn(d, d, |i, j| if i == j { (high[i] - low[i]).powi(2) / 12.0 } else { 0.0 })
            }
            IidLaw::Rademacher { .. } => DMatrix::identity(d, d),
            IidLaw::TruncatedNormal { sd, cutoff, .. } => {
                // Var of N(0,1) truncated to [-c, c]: 1 - 2cφ(c)/(2Φ(c)-1).
                let c = *cutoff;
                let phi = (-0.5 * c * c).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let mass = statrs::function::erf::erf(c / std::f64::consts::SQRT_2);
                let v = 1.0 - 2.0 * c * phi / mass;
                DMatrix::from_diagonal_element(d, d, sd * sd * v)
            }
            IidLaw::Discrete { atoms, probs } => {
                let m = self.mean();
                let mut c = DMatrix::zeros(d, d);
                for (a, p) in atoms.iter().zip(probs) {
                    for i in 0..d {
                        for j in 0..d {
                            c[(i, j)] += p * (a[i] - m[i]) * (a[j] - m[j]);
                        }
                    }
                }
                c
            }
            IidLaw::Constant { .. } => DMatrix::zeros(d, d),
        }
    }

    fn coordinate_bound(&self) -> f64 {
        match self {
            IidLaw::Uniform { low, high } => norm(&low.iter().zip(high).map(|(a, b)| a.abs().max(b.abs())).collect::<Vec<_>>()),
            IidLaw::Rademacher { dim } => (*dim as f64).sqrt(),
            IidLaw::TruncatedNormal { dim, sd, cutoff } => (*dim as f64).sqrt() * sd * cutoff,
            IidLaw::Discrete { atoms, .. } => atoms.iter().map(|a| norm(a)).fold(0.0, f64::max),
            IidLaw::Constant { value } => norm(value),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config("params.distribution", m.to_string()));
        match self {
            IidLaw::Uniform { low, high } => {
                if low.is_empty() || low.len() != high.len() || low.iter().zip(high).any(|(a, b)| !(a <= b)) {
                    return bad("uniform law needs matching non-empty low <= high");
                }
            }
            IidLaw::Rademacher { dim } if *dim == 0 => return bad("dim must be positive"),
            IidLaw::TruncatedNormal { dim, sd, cutoff } => {
                if *dim == 0 || !(*sd > 0.0) || !(*cutoff > 0.0) {
                    return bad("truncated normal needs dim > 0, sd > 0, cutoff > 0");
                }
            }
            IidLaw::Discrete { atoms, probs } => {
                let d = atoms.first().map_or(0, Vec::len);
                if atoms.is_empty() || d == 0 || atoms.len() != probs.len() || atoms.iter().any(|a| a.len() != d) {
                    return bad("discrete law needs equal-length atoms with one probability each");
                }
                if probs.iter().any(|p| *p < 0.0) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return bad("probabilities must be non-negative and sum to 1 within 1e-12");
                }
            }
            IidLaw::Constant { value } if value.is_empty() => return bad("constant value must be non-empty"),
            _ => {}
        }
        Ok(())
    }
}

/// Kind-specific parameters. Only the fields relevant to the kind may be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverParams {
    /// Row-stochastic transition matrix (markov-chain).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<f64>>>,
    /// Law of the samples (iid).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<IidLaw>,
    /// Continued-fraction digits used to evaluate observables (gauss-map).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digit_window: Option<usize>,
    /// Start a chain in state 0 and discard this many steps instead of
    /// drawing from the stationary law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
}

/// A stationary fast driver: a map or chain together with an observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    pub kind: DriverKind,
    pub observable: ObservableSpec,
    #[serde(default)]
    pub params: DriverParams,
    /// Almost-sure bound on `|ξ(n)|` (Euclidean).
    pub bound: f64,
}

impl DriverSpec {
    pub fn doubling(observable: ObservableSpec, bound: f64) -> Self {
        DriverSpec { kind: DriverKind::DoublingMap, observable, params: DriverParams::default(), bound }
    }

    pub fn cat(observable: ObservableSpec, bound: f64) -> Self {
        DriverSpec { kind: DriverKind::CatMap, observable, params: DriverParams::default(), bound }
    }

    pub fn gauss(observable: ObservableSpec, bound: f64) -> Self {
        DriverSpec { kind: DriverKind::GaussMap, observable, params: DriverParams::default(), bound }
    }

    pub fn markov(transition: Vec<Vec<f64>>, observable: ObservableSpec, bound: f64) -> Self {
        DriverSpec {
            kind: DriverKind::MarkovChain,
            observable,
            params: DriverParams { transition: Some(transition), ..Default::default() },
            bound,
        }
    }

    /// Symmetric two-state chain with flip probability `p` observed as `±1`.
    pub fn two_state(p: f64) -> Self {
        Self::markov(vec![vec![1.0 - p, p], vec![p, 1.0 - p]], ObservableSpec::table(&[-1.0, 1.0]), 1.0)
    }

    pub fn iid(law: IidLaw, bound: f64) -> Self {
        let dim = law.dim();
        DriverSpec {
            kind: DriverKind::Iid,
            observable: ObservableSpec::coordinate(dim),
            params: DriverParams { distribution: Some(law), ..Default::default() },
            bound,
        }
    }

    pub fn dim(&self) -> usize {
        self.observable.dim
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim(&self.params)
    }

    pub(crate) fn chain(&self) -> Result<MarkovChain> {
        let rows = self
            .params
            .transition
            .as_ref()
            .ok_or_else(|| Error::config("params.transition", "markov-chain requires a transition matrix"))?;
        MarkovChain::new(rows.clone())
    }

    fn cells(&self) -> Option<usize> {
        match self.kind {
            DriverKind::DoublingMap | DriverKind::CatMap | DriverKind::GaussMap => None,
            DriverKind::MarkovChain => self.params.transition.as_ref().map(Vec::len),
            DriverKind::Iid => self.params.distribution.as_ref().and_then(IidLaw::cells),
        }
    }

    /// Check every type invariant, including that the observable's a-priori
    /// sup bound does not exceed `bound`.
    pub fn validate(&self) -> Result<()> {
        if !(self.bound > 0.0) || !self.bound.is_finite() {
            return Err(Error::config("bound", "must be positive and finite"));
        }
        let p = &self.params;
        let only = |ok: bool, field: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("params.{field}"), format!("not used by {:?}", self.kind)))
            }
        };
        only(p.transition.is_none() || self.kind == DriverKind::MarkovChain, "transition")?;
        only(p.distribution.is_none() || self.kind == DriverKind::Iid, "distribution")?;
        only(p.digit_window.is_none() || self.kind == DriverKind::GaussMap, "digit_window")?;
        only(p.burn_in.is_none() || self.kind == DriverKind::MarkovChain, "burn_in")?;
        match self.kind {
            DriverKind::MarkovChain => {
                self.chain()?;
            }
            DriverKind::Iid => p
                .distribution
                .as_ref()
                .ok_or_else(|| Error::config("params.distribution", "iid driver requires a distribution"))?
                .validate()?,
            DriverKind::GaussMap => {
                if let Some(w) = p.digit_window {
                    if !(1..=256).contains(&w) {
                        return Err(Error::config("params.digit_window", "must be in 1..=256"));
                    }
                }
            }
            _ => {}
        }
        let obs = Observable::compile(self)?;
        let sup = obs.sup_bound();
        if sup > self.bound * (1.0 + 1e-12) {
            return Err(Error::config(
                "bound",
                format!("observable can reach |ξ| = {sup}, above the declared bound {}", self.bound),
            ));
        }
        Ok(())
    }

    /// `E ξ(0)` in closed form, when available.
    pub fn analytic_mean(&self) -> Option<Vec<f64>> {
        let obs = Observable::compile(self).ok()?;
        obs.analytic_mean(self)
    }

    /// Long-run covariance `ς = Σ_k E(ξ̂(0) ξ̂(k)ᵀ)` summed over all integer lags,
    /// in closed form when available (iid laws, Markov chains, trig observables
    /// of the doubling and cat maps).
    pub fn analytic_long_run_covariance(&self) -> Option<DMatrix<f64>> {
        let obs = Observable::compile(self).ok()?;
        obs.analytic_long_run_covariance(self)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
