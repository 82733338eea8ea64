use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI, SQRT_2};

use nalgebra::DMatrix;

use super::{norm, DriverKind, DriverSpec, IidLaw, ObservableForm};
use crate::error::{Error, Result};

const TWO_POW_NEG_64: f64 = 1.0 / 18_446_744_073_709_551_616.0;

/// A point of the underlying map handed to an observable.
#[derive(Debug, Clone, Copy)]
pub(crate) enum MapPoint<'a> {
    /// `ω ≈ w · 2^-64` on the circle.
    Dyadic(u64),
    /// `(u, v) · 2^-64` on the torus.
    Torus(u64, u64),
    /// A real state with its symbolic cell.
    Real { x: &'a [f64], cell: usize },
}

/// Canonical Fourier modes of one output component: frequency (first nonzero
/// entry positive) mapped to `(cos, sin)` coefficients.
type Modes = BTreeMap<Vec<i64>, (f64, f64)>;

#[derive(Debug, Clone)]
enum Compiled {
    Trig { comps: Vec<Vec<(Vec<i64>, f64, f64)>> },
    Table { values: Vec<Vec<f64>>, depth: u32 },
    Coordinate,
}

/// An observable checked against its driver and ready for evaluation.
#[derive(Debug, Clone)]
pub struct Observable {
    kind: DriverKind,
    dim: usize,
    compiled: Compiled,
    coordinate_bound: f64,
}

fn canonical(freq: &[i64]) -> (Vec<i64>, f64) {
    match freq.iter().find(|&&k| k != 0) {
        Some(&k) if k < 0 => (freq.iter().map(|k| -k).collect(), -1.0),
        _ => (freq.to_vec(), 1.0),
    }
}

impl Observable {
    pub fn compile(spec: &DriverSpec) -> Result<Self> {
        let field = |m: String| Error::config("observable", m);
        let dim = spec.observable.dim;
        if dim == 0 {
            return Err(field("dim must be positive".into()));
        }
        let state_dim = spec.state_dim();
        let compiled = match &spec.observable.form {
            ObservableForm::TrigPolynomial { terms } => {
                if terms.len() != dim {
                    return Err(field(format!("{} term lists for output dimension {dim}", terms.len())));
                }
                for t in terms.iter().flatten() {
                    if t.freq.len() != state_dim {
                        return Err(field(format!("frequency {:?} does not match state dimension {state_dim}", t.freq)));
                    }
                }
                if spec.kind == DriverKind::MarkovChain {
                    return Err(field("markov chains take cell-indicator or coordinate observables".into()));
                }
                Compiled::Trig {
                    comps: terms.iter().map(|c| c.iter().map(|t| (t.freq.clone(), t.cos, t.sin)).collect()).collect(),
                }
            }
            ObservableForm::CellIndicator { values } => {
                let cells = values.len();
                if cells == 0 || values.iter().any(|v| v.len() != dim) {
                    return Err(field(format!("every cell needs a value of length {dim}")));
                }
                let depth = match spec.kind {
                    DriverKind::DoublingMap => {
                        if !cells.is_power_of_two() || !(2..=1 << 16).contains(&cells) {
                            return Err(field("doubling-map cells must be 2^m with 1 <= m <= 16".into()));
                        }
                        cells.trailing_zeros()
                    }
                    DriverKind::CatMap => {
                        let m = cells.trailing_zeros();
                        if !cells.is_power_of_two() || m % 2 != 0 || !(4..=1 << 16).contains(&cells) {
                            return Err(field("cat-map cells must be 4^m with 1 <= m <= 8".into()));
                        }
                        m / 2
                    }
                    DriverKind::GaussMap => 0,
                    DriverKind::MarkovChain | DriverKind::Iid => {
                        if spec.cells() != Some(cells) {
                            return Err(field(format!("{cells} cells do not match the driver's {:?} symbols", spec.cells())));
                        }
                        0
                    }
                };
                Compiled::Table { values: values.clone(), depth }
            }
            ObservableForm::Coordinate => {
                if dim != state_dim {
                    return Err(field(format!("coordinate observable has dimension {state_dim}, not {dim}")));
                }
                Compiled::Coordinate
            }
        };
        let coordinate_bound = match spec.kind {
            DriverKind::DoublingMap | DriverKind::GaussMap => 1.0,
            DriverKind::CatMap => SQRT_2,
            DriverKind::MarkovChain => spec.params.transition.as_ref().map_or(0.0, |t| (t.len() - 1) as f64),
            DriverKind::Iid => spec.params.distribution.as_ref().map_or(0.0, IidLaw::coordinate_bound),
        };
        Ok(Observable { kind: spec.kind, dim, compiled, coordinate_bound })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// A-priori bound on `|f|` over the whole state space.
    pub fn sup_bound(&self) -> f64 {
        match &self.compiled {
            Compiled::Trig { comps } => {
                norm(&comps.iter().map(|c| c.iter().map(|(_, a, b)| a.abs() + b.abs()).sum()).collect::<Vec<f64>>())
            }
            Compiled::Table { values, .. } => values.iter().map(|v| norm(v)).fold(0.0, f64::max),
            Compiled::Coordinate => self.coordinate_bound,
        }
    }

    pub(crate) fn eval(&self, point: MapPoint<'_>, out: &mut [f64]) {
        match &self.compiled {
            Compiled::Coordinate => match point {
                MapPoint::Dyadic(w) => out[0] = w as f64 * TWO_POW_NEG_64,
                MapPoint::Torus(u, v) => {
                    out[0] = u as f64 * TWO_POW_NEG_64;
                    out[1] = v as f64 * TWO_POW_NEG_64;
                }
                MapPoint::Real { x, .. } => out.copy_from_slice(x),
            },
            Compiled::Table { values, depth } => {
                let cell = match point {
                    MapPoint::Dyadic(w) => (w >> (64 - depth)) as usize,
                    MapPoint::Torus(u, v) => (((u >> (64 - depth)) << depth) | (v >> (64 - depth))) as usize,
                    MapPoint::Real { cell, .. } => cell.min(values.len() - 1),
                };
                out.copy_from_slice(&values[cell]);
            }
            Compiled::Trig { comps } => {
                for (o, comp) in out.iter_mut().zip(comps) {
                    let mut acc = 0.0;
                    for (freq, c, s) in comp {
                        let turns = match point {
                            // Exact phase mod 1 on the dyadic lattice.
                            MapPoint::Dyadic(w) => (freq[0] as u64).wrapping_mul(w) as f64 * TWO_POW_NEG_64,
                            MapPoint::Torus(u, v) => (freq[0] as u64)
                                .wrapping_mul(u)
                                .wrapping_add((freq[1] as u64).wrapping_mul(v)) as f64
                                * TWO_POW_NEG_64,
                            MapPoint::Real { x, .. } => {
                                let p: f64 = freq.iter().zip(x).map(|(k, xi)| *k as f64 * xi).sum();
                                p - p.floor()
                            }
                        };
                        let angle = 2.0 * PI * turns;
                        if *c != 0.0 {
                            acc += c * angle.cos();
                        }
                        if *s != 0.0 {
                            acc += s * angle.sin();
                        }
                    }
                    *o = acc;
                }
            }
        }
    }

    /// Observable values on the finitely many states of a chain or discrete law.
    fn tabulate(&self, spec: &DriverSpec) -> Option<Vec<Vec<f64>>> {
        let states: Vec<(Vec<f64>, usize)> = match spec.kind {
            DriverKind::MarkovChain => (0..spec.params.transition.as_ref()?.len()).map(|s| (vec![s as f64], s)).collect(),
            DriverKind::Iid => match spec.params.distribution.as_ref()? {
                IidLaw::Discrete { atoms, .. } => atoms.iter().cloned().zip(0..).collect(),
                IidLaw::Rademacher { dim: 1 } => vec![(vec![-1.0], 0), (vec![1.0], 1)],
                IidLaw::Constant { value } => vec![(value.clone(), 0)],
                _ => return None,
            },
            _ => return None,
        };
        Some(
            states
                .iter()
                .map(|(x, cell)| {
                    let mut out = vec![0.0; self.dim];
                    self.eval(MapPoint::Real { x, cell: *cell }, &mut out);
                    out
                })
                .collect(),
        )
    }

    fn tabulated_probs(spec: &DriverSpec) -> Option<Vec<f64>> {
        match spec.params.distribution.as_ref()? {
            IidLaw::Discrete { probs, .. } => Some(probs.clone()),
            IidLaw::Rademacher { dim: 1 } => Some(vec![0.5, 0.5]),
            IidLaw::Constant { .. } => Some(vec![1.0]),
            _ => None,
        }
    }

    fn trig_modes(&self) -> Option<(Vec<Modes>, Vec<f64>)> {
        let Compiled::Trig { comps } = &self.compiled else { return None };
        let mut modes = Vec::with_capacity(comps.len());
        let mut means = Vec::with_capacity(comps.len());
        for comp in comps {
            let mut m = Modes::new();
            let mut mean = 0.0;
            for (freq, c, s) in comp {
                if freq.iter().all(|k| *k == 0) {
                    mean += c;
                    continue;
                }
                let (f, sign) = canonical(freq);
                let e = m.entry(f).or_insert((0.0, 0.0));
                e.0 += c;
                e.1 += sign * s;
            }
            modes.push(m);
            means.push(mean);
        }
        Some((modes, means))
    }

    pub(crate) fn analytic_mean(&self, spec: &DriverSpec) -> Option<Vec<f64>> {
        match (&self.compiled, self.kind) {
            (_, DriverKind::MarkovChain) => Some(spec.chain().ok()?.mean(&self.tabulate(spec)?)),
            (Compiled::Coordinate, DriverKind::Iid) => Some(spec.params.distribution.as_ref()?.mean()),
            (_, DriverKind::Iid) => {
                let table = self.tabulate(spec)?;
                let probs = Self::tabulated_probs(spec)?;
                let mut m = vec![0.0; self.dim];
                for (v, p) in table.iter().zip(&probs) {
                    for (mi, vi) in m.iter_mut().zip(v) {
                        *mi += p * vi;
                    }
                }
                Some(m)
            }
            (Compiled::Trig { .. }, DriverKind::DoublingMap | DriverKind::CatMap) => Some(self.trig_modes()?.1),
            (Compiled::Trig { .. }, DriverKind::GaussMap) => None,
            (Compiled::Coordinate, DriverKind::DoublingMap) => Some(vec![0.5]),
            (Compiled::Coordinate, DriverKind::CatMap) => Some(vec![0.5, 0.5]),
            (Compiled::Coordinate, DriverKind::GaussMap) => Some(vec![1.0 / LN_2 - 1.0]),
            (Compiled::Table { values, .. }, DriverKind::DoublingMap | DriverKind::CatMap) => {
                let n = values.len() as f64;
                Some((0..self.dim).map(|i| values.iter().map(|v| v[i]).sum::<f64>() / n).collect())
            }
            (Compiled::Table { values, .. }, DriverKind::GaussMap) => {
                let m = values.len();
                let mut mean = vec![0.0; self.dim];
                for (c, v) in values.iter().enumerate() {
                    let k = (c + 1) as f64;
                    let p = if c + 1 < m { (1.0 + 1.0 / (k * (k + 2.0))).log2() } else { (1.0 + 1.0 / k).log2() };
                    for (mi, vi) in mean.iter_mut().zip(v) {
                        *mi += p * vi;
                    }
                }
                Some(mean)
            }
        }
    }

    pub(crate) fn analytic_long_run_covariance(&self, spec: &DriverSpec) -> Option<DMatrix<f64>> {
        let d = self.dim;
        match (&self.compiled, self.kind) {
            (_, DriverKind::MarkovChain) => Some(spec.chain().ok()?.long_run_covariance(&self.tabulate(spec)?)),
            (Compiled::Coordinate, DriverKind::Iid) => Some(spec.params.distribution.as_ref()?.covariance()),
            (_, DriverKind::Iid) => {
                let table = self.tabulate(spec)?;
                let probs = Self::tabulated_probs(spec)?;
                let mean = self.analytic_mean(spec)?;
                Some(DMatrix::from_fn(d, d, |i, j| {
                    table.iter().zip(&probs).map(|(v, p)| p * (v[i] - mean[i]) * (v[j] - mean[j])).sum()
                }))
            }
            (Compiled::Trig { .. }, DriverKind::DoublingMap) => {
                self.trig_long_run(|k: &[i64]| k[0].checked_mul(2).map(|x| vec![x]))
            }
            (Compiled::Trig { .. }, DriverKind::CatMap) => {
                // Aᵀ with A = [[2, 1], [1, 1]] (symmetric).
                self.trig_long_run(|k: &[i64]| {
                    let a = k[0].checked_mul(2)?.checked_add(k[1])?;
                    let b = k[0].checked_add(k[1])?;
                    Some(vec![a, b])
                })
            }
            (Compiled::Coordinate, DriverKind::DoublingMap) => {
                // Cov(ω, {2ⁿω}) = 2⁻ⁿ/12.
                Some(DMatrix::from_element(1, 1, 0.25))
            }
            (Compiled::Table { values, depth }, DriverKind::DoublingMap) if *depth <= 10 => {
                Some(doubling_table_long_run(values, *depth))
            }
            _ => None,
        }
    }

    /// Two-sided long-run covariance of a trig observable under a toral
    /// endomorphism whose action on frequencies is `propagate`.
    fn trig_long_run(&self, propagate: impl Fn(&[i64]) -> Option<Vec<i64>>) -> Option<DMatrix<f64>> {
        let (modes, _) = self.trig_modes()?;
        let d = self.dim;
        let max_freq = modes.iter().flat_map(|m| m.keys()).flat_map(|k| k.iter().map(|x| x.abs())).max().unwrap_or(0);
        let inner = |a: &Modes, b: &Modes| -> f64 {
            a.iter()
                .filter_map(|(k, (c, s))| b.get(k).map(|(c2, s2)| 0.5 * (c * c2 + s * s2)))
                .sum()
        };
        let mut total = DMatrix::from_fn(d, d, |i, j| inner(&modes[i], &modes[j]));
        let mut current: Vec<Modes> = modes.clone();
        for _ in 0..512 {
            let mut next = Vec::with_capacity(d);
            let mut alive = false;
            for comp in &current {
                let mut m = Modes::new();
                for (k, (c, s)) in comp {
                    if let Some(k2) = propagate(k) {
                        if k2.iter().any(|x| x.abs() <= max_freq.saturating_mul(1 << 20)) {
                            alive = true;
                        }
                        let (f, sign) = canonical(&k2);
                        let e = m.entry(f).or_insert((0.0, 0.0));
                        e.0 += c;
                        e.1 += sign * s;
                    }
                }
                next.push(m);
            }
            // Γ(n)_{ij} = E f̂_i(Fⁿω) f̂_j(ω)
            let gamma = DMatrix::from_fn(d, d, |i, j| inner(&next[i], &modes[j]));
            total += &gamma + gamma.transpose();
            if !alive {
                break;
            }
            current = next;
        }
        Some(total)
    }
}

/// Exact long-run covariance of a function of the first `depth` bits under
/// the Bernoulli shift: lags `n >= depth` see disjoint bits and vanish.
fn doubling_table_long_run(values: &[Vec<f64>], depth: u32) -> DMatrix<f64> {
    let d = values[0].len();
    let cells = values.len();
    let mean: Vec<f64> = (0..d).map(|i| values.iter().map(|v| v[i]).sum::<f64>() / cells as f64).collect();
    let mut total = DMatrix::zeros(d, d);
    for n in 0..depth {
        let bits = depth + n;
        let count = 1u64 << bits;
        let mut gamma = DMatrix::zeros(d, d);
        for code in 0..count {
            // code holds bits b1..b_{depth+n}, b1 most significant.
            let first = (code >> n) as usize;
            let shifted = (code & ((1u64 << depth) - 1)) as usize;
            for i in 0..d {
                for j in 0..d {
                    gamma[(i, j)] += (values[shifted][i] - mean[i]) * (values[first][j] - mean[j]);
                }
            }
        }
        gamma /= count as f64;
        if n == 0 {
            total += gamma;
        } else {
            total += &gamma + gamma.transpose();
        }
    }
    total
}
