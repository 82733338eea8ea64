use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// A finite, irreducible and aperiodic Markov chain.
#[derive(Debug, Clone)]
pub struct MarkovChain {
    transition: DMatrix<f64>,
    cumulative: Vec<Vec<f64>>,
    stationary: Vec<f64>,
    stationary_cumulative: Vec<f64>,
}

fn cumulate(p: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = p
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

impl MarkovChain {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let bad = |m: String| Err(Error::config("params.transition", m));
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return bad("transition matrix must be square and non-empty".into());
        }
        for (i, r) in rows.iter().enumerate() {
            if r.iter().any(|p| !(*p >= 0.0) || *p > 1.0) {
                return bad(format!("row {i} has entries outside [0, 1]"));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return bad(format!("row {i} sums to {s}, not 1 within 1e-12"));
            }
        }
        if !is_primitive(&rows) {
            return bad("chain is reducible or periodic".into());
        }
        let transition = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let stationary = stationary_law(&transition)?;
        Ok(MarkovChain {
            cumulative: rows.iter().map(|r| cumulate(r.iter().copied())).collect(),
            stationary_cumulative: cumulate(stationary.iter().copied()),
            stationary,
            transition,
        })
    }

    pub fn states(&self) -> usize {
        self.stationary.len()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        pick(&self.stationary_cumulative, rng.random::<f64>())
    }

    pub fn step<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        pick(&self.cumulative[state], rng.random::<f64>())
    }

    /// Stationary mean of the observable `values[state]`.
    pub fn mean(&self, values: &[Vec<f64>]) -> Vec<f64> {
        let d = values[0].len();
        let mut m = vec![0.0; d];
        for (p, v) in self.stationary.iter().zip(values) {
            for (mi, vi) in m.iter_mut().zip(v) {
                *mi += p * vi;
            }
        }
        m
    }

    /// Exact `E[f̂(X_k) f̂(X_0)ᵀ]` under the stationary law.
    pub fn lag_covariance(&self, values: &[Vec<f64>], k: usize) -> DMatrix<f64> {
        let pk = self.transition.pow(k as u32);
        self.covariance_from_power(values, &pk)
    }

    fn covariance_from_power(&self, values: &[Vec<f64>], pk: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.states();
        let d = values[0].len();
        let m = self.mean(values);
        let centered = DMatrix::from_fn(n, d, |s, i| values[s][i] - m[i]);
        // E f̂(X_k)_a f̂(X_0)_b = Σ_s π_s f̂_b(s) Σ_t P^k(s,t) f̂_a(t)
        let forward = pk * &centered; // (n × d): row s = E[f̂(X_k) | X_0 = s]
        DMatrix::from_fn(d, d, |a, b| (0..n).map(|s| self.stationary[s] * forward[(s, a)] * centered[(s, b)]).sum())
    }

    /// Exact two-sided long-run covariance. Lags use `(P − Π)^k = P^k − Π`,
    /// which decays to zero without a rounding floor.
    pub fn long_run_covariance(&self, values: &[Vec<f64>]) -> DMatrix<f64> {
        let n = self.states();
        let projector = DMatrix::from_fn(n, n, |_, j| self.stationary[j]);
        let deviation = &self.transition - projector;
        let mut total = self.lag_covariance(values, 0);
        let mut dk = deviation.clone();
        for _ in 1..100_000 {
            let c = self.covariance_from_power(values, &dk);
            total += &c + c.transpose();
            if dk.amax() < 1e-18 {
                break;
            }
            dk = &dk * &deviation;
        }
        total
    }
}

/// Irreducible and aperiodic iff some power `P^k`, `k ≤ (n-1)² + 1`, is
/// entrywise positive (Wielandt).
fn is_primitive(rows: &[Vec<f64>]) -> bool {
    let n = rows.len();
    let adj: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|p| *p > 0.0).collect()).collect();
    let mut reach = adj.clone();
    let limit = (n - 1) * (n - 1) + 1;
    for _ in 1..limit {
        if reach.iter().all(|r| r.iter().all(|&b| b)) {
            return true;
        }
        let next: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|j| (0..n).any(|k| reach[i][k] && adj[k][j])).collect())
            .collect();
        reach = next;
    }
    reach.iter().all(|r| r.iter().all(|&b| b))
}

fn stationary_law(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("singular system for the stationary law".into()))?;
    Ok(pi.iter().map(|x| x.max(0.0)).collect())
}
