use rayon::prelude::*;
use serde::Serialize;

use super::operators::{apply_phi_psi, endpoint_maximizer, invert_phi, invert_psi, sample_k, LilCoefficients};
use super::taut::{taut_string_free, unit_energy};
use crate::drivers::{make_orbit, DriverSpec};
use crate::dynamics::{averaged_path, normalized_deviation, slow_discrete, Model};
use crate::error::{Error, Result};
use crate::path::{Interpolation, Path};

/// `e^{−e}`: the normalizer needs `log log(1/ε) > 1`.
pub const LIL_EPS_CEILING: f64 = 0.065_988_035_845_312_54;

/// Relative band around the cluster extreme for the endpoint running maximum.
pub const RUNNING_MAX_BAND: [f64; 2] = [0.7, 1.3];

/// `√(2ε log log(1/ε))` with the natural logarithm.
pub fn lil_normalizer(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < LIL_EPS_CEILING) {
        return Err(Error::argument(format!("ε = {eps} is outside (0, e^(−e))")));
    }
    Ok((2.0 * eps * (1.0 / eps).ln().ln()).sqrt())
}

/// `points` values from `from` down to `to`, equally spaced in `log ε`.
pub fn geometric_grid(from: f64, to: f64, points: usize) -> Result<Vec<f64>> {
    if !(from > to && to > 0.0) || points < 2 {
        return Err(Error::argument("geometric grid needs from > to > 0 and at least 2 points"));
    }
    let (a, b) = (from.ln(), to.ln());
    Ok((0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum HullCandidate {
    TautString,
    Sample(usize),
}

/// Sup-norm distance from a path to the nearest evaluated point of `ΦΨ(K)`:
/// an upper bound on the set distance, measured on the path's own grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HullDistance {
    pub distance: f64,
    pub candidate: HullCandidate,
}

/// Images `ΦΨ(φ)` of sampled members of K on a coarse grid, reused across paths.
#[derive(Debug, Clone)]
pub struct HullContext {
    coeffs: LilCoefficients,
    images: Vec<Path>,
}

const REFINED_CANDIDATES: usize = 3;

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl HullContext {
    pub fn new(coeffs: LilCoefficients, members: &[Path]) -> Result<Self> {
        let images = members.par_iter().map(|m| apply_phi_psi(m, &coeffs)).collect::<Result<Vec<_>>>()?;
        Ok(HullContext { coeffs, images })
    }

    pub fn coefficients(&self) -> &LilCoefficients {
        &self.coeffs
    }

    pub fn images(&self) -> &[Path] {
        &self.images
    }

    /// Minimal-energy preimage inside the smallest tube around `(ΦΨ)^{-1}(y)`
    /// that the unit energy budget allows, when `ΦΨ` is invertible.
    fn taut_candidate(&self, y: &Path) -> Option<Path> {
        let c = &self.coeffs;
        let f = invert_psi(&invert_phi(y, c).ok()?, c).ok()?;
        let d = f.dim();
        let coords: Vec<Vec<f64>> = (0..d).map(|i| f.coordinate(i)).collect();
        let energy = |r: f64| -> (f64, Vec<Vec<f64>>) {
            let strings: Vec<Vec<f64>> = coords.iter().map(|fi| taut_string_free(fi, r)).collect();
            (strings.iter().map(|s| unit_energy(s)).sum::<f64>() / c.dt, strings)
        };
        let mut lo = coords.iter().map(|fi| fi[0].abs()).fold(0.0, f64::max);
        let mut hi = coords.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())) * (1.0 + 1e-12) + 1e-300;
        if lo >= hi {
            return None;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if energy(mid).0 <= 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let (e, strings) = energy(hi);
        let shrink = if e > 1.0 { e.sqrt().recip() } else { 1.0 };
        let values = (0..f.len()).flat_map(|k| strings.iter().map(move |s| s[k] * shrink).collect::<Vec<_>>()).collect();
        Path::new(0.0, c.dt, d, values, Interpolation::Linear).ok()
    }

    pub fn distance(&self, y: &Path) -> Result<HullDistance> {
        let c = &self.coeffs;
        if y.dim() != c.dim() {
            return Err(Error::GridMismatch(format!("path dimension {} vs {}", y.dim(), c.dim())));
        }
        let coarse = Path::from_fn(0.0, c.dt, c.len(), y.dim(), Interpolation::Linear, |t, o| {
            o.copy_from_slice(&y.value_at(t.min(y.t_end())))
        })?;
        let mut candidates: Vec<(HullCandidate, Path)> = Vec::new();
        if let Some(phi) = self.taut_candidate(&coarse) {
            candidates.push((HullCandidate::TautString, apply_phi_psi(&phi, c)?));
        }
        let coarse_dist = |img: &Path| coarse.points().zip(img.points()).map(|(a, b)| euclid(a, b)).fold(0.0, f64::max);
        let mut scored: Vec<(f64, HullCandidate, &Path)> = candidates.iter().map(|(h, p)| (coarse_dist(p), *h, p)).collect();
        scored.extend(self.images.iter().enumerate().map(|(i, p)| (coarse_dist(p), HullCandidate::Sample(i), p)));
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best = HullDistance { distance: f64::INFINITY, candidate: HullCandidate::TautString };
        for (_, cand, img) in scored.into_iter().take(REFINED_CANDIDATES) {
            let fine = (0..y.len())
                .map(|k| {
                    let t = y.time(k);
                    euclid(y.point(k), &img.value_at(t.min(img.t_end())))
                })
                .fold(0.0, f64::max);
            if fine < best.distance {
                best = HullDistance { distance: fine, candidate: cand };
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LilConfig {
    pub x0: Vec<f64>,
    pub t_end: f64,
    /// Strictly decreasing, inside `(0, e^{−e})`.
    pub eps_grid: Vec<f64>,
    /// One driver orbit per seed, shared by every `ε`.
    pub seeds: Vec<u64>,
    pub k_samples: usize,
    pub hull_nodes: usize,
    pub sample_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LilReport {
    pub eps_grid: Vec<f64>,
    pub normalizers: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `|normalized(T)|` per seed and `ε`.
    pub endpoints: Vec<Vec<f64>>,
    /// Running maximum of `endpoints` along the grid, per seed.
    pub running_max: Vec<Vec<f64>>,
    /// Hull distance per seed and `ε` (upper bounds).
    pub sup_distances: Vec<Vec<f64>>,
    /// `max |ΦΨ(φ)(T)|` over the evaluated members of K.
    pub cluster_extreme: f64,
    pub tolerance_band: [f64; 2],
}

impl LilReport {
    /// Final running maximum of each seed.
    pub fn final_running_max(&self) -> Vec<f64> {
        self.running_max.iter().map(|r| *r.last().expect("nonempty grid")).collect()
    }

    pub fn max_sup_distance(&self) -> f64 {
        self.sup_distances.iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// Normalized deviations `(X^ε − X̄)/√(2ε log log(1/ε))` along one orbit per
/// seed, compared with the cluster set `ΦΨ(K)` of the product case.
pub fn lil_run(model: &Model, driver: &DriverSpec, cfg: &LilConfig) -> Result<LilReport> {
    if model.spec().sigma_field().is_none() {
        return Err(Error::argument("the LIL run needs a product-form system"));
    }
    if cfg.eps_grid.is_empty() || cfg.eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::config("eps_grid", "must be nonempty and strictly decreasing"));
    }
    let normalizers = cfg
        .eps_grid
        .iter()
        .map(|e| lil_normalizer(*e).map_err(|err| Error::config("eps_grid", err.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if cfg.seeds.is_empty() || cfg.hull_nodes < 2 || !(cfg.t_end > 0.0) {
        return Err(Error::argument("the LIL run needs seeds, at least 2 hull nodes and T > 0"));
    }
    let d = model.dim();
    let dt_c = cfg.t_end / cfg.hull_nodes as f64;
    let coarse_bar = averaged_path(model, &cfg.x0, cfg.t_end, dt_c)?;
    let coeffs = LilCoefficients::product(model, &coarse_bar)?;
    let mut members = sample_k(cfg.k_samples.max(1), d, dt_c, cfg.hull_nodes, cfg.sample_seed)?;
    for i in 0..d {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[i] = sign;
            members.push(endpoint_maximizer(&e, &coeffs)?);
        }
    }
    let hull = HullContext::new(coeffs, &members)?;
    let cluster_extreme = hull.images().iter().map(|p| p.last().iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);

    let bars = cfg.eps_grid.par_iter().map(|e| averaged_path(model, &cfg.x0, cfg.t_end, *e)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.seeds.len()).flat_map(|s| (0..cfg.eps_grid.len()).map(move |e| (s, e))).collect();
    let results = jobs
        .par_iter()
        .map(|&(s, e)| {
            let eps = cfg.eps_grid[e];
            let mut orbit = make_orbit(driver, cfg.seeds[s])?;
            let x = slow_discrete(model, &mut orbit, eps, &cfg.x0, cfg.t_end)?;
            let y = normalized_deviation(&x, &bars[e], eps)?.map_values(|v| v * eps.sqrt() / normalizers[e])?;
            let end = y.last().iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok((end, hull.distance(&y)?.distance))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_seed = |f: fn(&(f64, f64)) -> f64| -> Vec<Vec<f64>> {
        results.chunks(cfg.eps_grid.len()).map(|row| row.iter().map(f).collect()).collect()
    };
    let endpoints = per_seed(|r| r.0);
    let running_max = endpoints
        .iter()
        .map(|row| {
            row.iter()
                .scan(0.0f64, |m, v| {
                    *m = m.max(*v);
                    Some(*m)
                })
                .collect()
        })
        .collect();
    Ok(LilReport {
        eps_grid: cfg.eps_grid.clone(),
        normalizers,
        seeds: cfg.seeds.clone(),
        endpoints,
        running_max,
        sup_distances: per_seed(|r| r.1),
        cluster_extreme,
        tolerance_band: [RUNNING_MAX_BAND[0] * cluster_extreme, RUNNING_MAX_BAND[1] * cluster_extreme],
    })
}
