use serde::{Deserialize, Serialize};

use super::observable::Observable;
use super::{make_orbit, DriverSpec, ObservableSpec};
use crate::error::{Error, Result};

/// Roof function `τ(ω)` of a suspension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RoofSpec {
    Constant { value: f64 },
    /// `τ(ω) = offset + scale·g(ω)` with a scalar observable `g` of the base map.
    Affine { offset: f64, scale: f64, observable: ObservableSpec },
}

/// A suspension flow over a base driver with roof bounds `1/l_bar ≤ τ ≤ l_bar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuspensionSpec {
    pub base: DriverSpec,
    pub roof: RoofSpec,
    pub l_bar: f64,
}

/// One roof segment `[start, start + duration)` over which `ξ` is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub duration: f64,
    pub xi: Vec<f64>,
}

impl SuspensionSpec {
    fn roof_observable(&self) -> Result<Option<Observable>> {
        match &self.roof {
            RoofSpec::Constant { .. } => Ok(None),
            RoofSpec::Affine { observable, .. } => {
                if observable.dim != 1 {
                    return Err(Error::config("roof.observable", "roof observable must be scalar"));
                }
                let mut probe = self.base.clone();
                probe.observable = observable.clone();
                Observable::compile(&probe).map(Some)
            }
        }
    }

    /// Check the base driver and that the roof cannot leave `[1/l_bar, l_bar]`.
    pub fn validate(&self) -> Result<()> {
        self.base.validate().map_err(|e| match e {
            Error::Config { path, message } => Error::config(format!("base.{path}"), message),
            other => other,
        })?;
        if !(self.l_bar >= 1.0) || !self.l_bar.is_finite() {
            return Err(Error::config("l_bar", "must be finite and at least 1"));
        }
        let (lo, hi) = match (&self.roof, self.roof_observable()?) {
            (RoofSpec::Constant { value }, _) => (*value, *value),
            (RoofSpec::Affine { offset, scale, .. }, Some(g)) => {
                let reach = scale.abs() * g.sup_bound();
                (offset - reach, offset + reach)
            }
            _ => unreachable!(),
        };
        let (min, max) = (1.0 / self.l_bar, self.l_bar);
        if !(lo >= min * (1.0 - 1e-12) && hi <= max * (1.0 + 1e-12)) {
            return Err(Error::config("roof", format!("roof range [{lo}, {hi}] leaves [{min}, {max}]")));
        }
        Ok(())
    }

    /// `τ̄ = Eτ` in closed form, when the base observable admits one.
    pub fn tau_bar(&self) -> Option<f64> {
        match &self.roof {
            RoofSpec::Constant { value } => Some(*value),
            RoofSpec::Affine { offset, scale, observable } => {
                let mut probe = self.base.clone();
                probe.observable = observable.clone();
                let g = Observable::compile(&probe).ok()?;
                Some(offset + scale * g.analytic_mean(&probe)?[0])
            }
        }
    }
}

/// Segments of a suspension flow with cumulative roofs `Θ_k = Σ_{j<k} τ_j`.
#[derive(Debug, Clone)]
pub struct SuspensionTrajectory {
    segments: Vec<Segment>,
    theta: Vec<f64>,
}

impl SuspensionTrajectory {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// `Θ_k` for `k = 0..=segments`.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn horizon(&self) -> f64 {
        *self.theta.last().unwrap()
    }

    /// `n(t) = max{k ≥ 0 : Θ_k ≤ t}`.
    pub fn n_at(&self, t: f64) -> usize {
        self.theta.partition_point(|&th| th <= t).saturating_sub(1)
    }

    /// `ξ(t)`, constant on each segment.
    pub fn xi_at(&self, t: f64) -> &[f64] {
        let k = self.n_at(t).min(self.segments.len() - 1);
        &self.segments[k].xi
    }
}

/// Emit segments until their durations cover `horizon`.
pub fn suspension_trajectory(spec: &SuspensionSpec, seed: u64, horizon: f64) -> Result<SuspensionTrajectory> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::argument(format!("horizon must be positive and finite, got {horizon}")));
    }
    spec.validate()?;
    let roof = spec.roof_observable()?;
    let mut orbit = make_orbit(&spec.base, seed)?;
    let (min, max) = (1.0 / spec.l_bar, spec.l_bar);
    let mut segments = Vec::new();
    let mut theta = vec![0.0];
    let mut g = [0.0];
    let mut start = 0.0;
    while start < horizon {
        let tau = match (&spec.roof, &roof) {
            (RoofSpec::Constant { value }, _) => *value,
            (RoofSpec::Affine { offset, scale, .. }, Some(obs)) => {
                orbit.evaluate(obs, &mut g);
                offset + scale * g[0]
            }
            _ => unreachable!(),
        };
        if !(tau >= min * (1.0 - 1e-12) && tau <= max * (1.0 + 1e-12)) {
            return Err(Error::Invariant(format!("roof value {tau} at segment {} leaves [{min}, {max}]", segments.len())));
        }
        let xi = orbit.next();
        segments.push(Segment { start, duration: tau, xi });
        start += tau;
        theta.push(start);
    }
    Ok(SuspensionTrajectory { segments, theta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::IidLaw;

    fn constant(value: f64) -> SuspensionSpec {
        SuspensionSpec {
            base: DriverSpec::iid(IidLaw::Uniform { low: vec![-1.0], high: vec![1.0] }, 1.0),
            roof: RoofSpec::Constant { value },
            l_bar: 2.0,
        }
    }

    #[test]
    fn constant_roof_segments_and_counting() {
        let traj = suspension_trajectory(&constant(2.0), 1, 5.0).unwrap();
        assert_eq!(traj.segments().len(), 3);
        assert!(traj.segments().iter().all(|s| s.duration == 2.0));
        assert_eq!(traj.n_at(5.0), 2);
        assert_eq!(traj.n_at(6.0), 3);
        assert_eq!(traj.n_at(0.0), 0);
        assert_eq!(traj.xi_at(4.5), traj.segments()[2].xi.as_slice());
    }

    #[test]
    fn random_roof_stays_in_bounds() {
        let spec = SuspensionSpec {
            base: DriverSpec::doubling(ObservableSpec::cosine(1), 1.0),
            roof: RoofSpec::Affine { offset: 1.25, scale: 0.75, observable: ObservableSpec::cosine(1) },
            l_bar: 2.0,
        };
        let traj = suspension_trajectory(&spec, 4, 1.0e5).unwrap();
        assert!(traj.segments().len() >= 50_000);
        assert!(traj.segments().iter().all(|s| (0.5..=2.0).contains(&s.duration)));
        assert_eq!(spec.tau_bar(), Some(1.25));
    }

    #[test]
    fn roof_outside_bounds_is_a_config_error() {
        assert!(matches!(constant(3.0).validate(), Err(Error::Config { .. })));
        assert!(suspension_trajectory(&constant(0.25), 1, 1.0).is_err());
        assert!(suspension_trajectory(&constant(1.0), 1, 0.0).is_err());
    }
}
