use nalgebra::{DMatrix, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const MIN_COUPLING_ENSEMBLE: usize = 64;

/// Relative eigenvalue cutoff below which a target direction is treated as null.
const NULL_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileCoupling {
    /// One coupled Gaussian vector per ensemble member.
    pub w: Vec<Vec<f64>>,
    /// Number of non-null target directions that were coupled.
    pub rank: usize,
}

/// Mid-rank empirical CDF values `(#{< y} + #{= y}/2)/n`.
fn mid_ranks(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| y[*a].total_cmp(&y[*b]));
    let mut f = vec![0.0; n];
    let mut s = 0;
    while s < n {
        let mut e = s + 1;
        while e < n && y[order[e]] == y[order[s]] {
            e += 1;
        }
        for &i in &order[s..e] {
            f[i] = (s + e) as f64 / (2 * n) as f64;
        }
        s = e;
    }
    f
}

/// Couple each member's block vector to a `N(0, target)` vector: project on
/// the target's eigendirections and map every coordinate through its mid-rank
/// empirical CDF and the standard normal quantile. Null directions get zero.
pub fn quantile_couple(v: &[Vec<f64>], target: &DMatrix<f64>) -> Result<QuantileCoupling> {
    let n = v.len();
    if n < MIN_COUPLING_ENSEMBLE {
        return Err(Error::argument(format!("quantile coupling needs at least {MIN_COUPLING_ENSEMBLE} members, got {n}")));
    }
    let d = target.nrows();
    if !target.is_square() || v.iter().any(|x| x.len() != d) {
        return Err(Error::argument("block vectors and target covariance disagree in dimension"));
    }
    let eig = SymmetricEigen::new(target.clone());
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let std_normal = Normal::new(0.0, 1.0).expect("valid law");
    let mut w = vec![vec![0.0; d]; n];
    let mut rank = 0;
    for (i, lambda) in eig.eigenvalues.iter().enumerate() {
        if !(top > 0.0) || *lambda <= NULL_CUTOFF * top {
            continue;
        }
        rank += 1;
        let mut u = eig.eigenvectors.column(i).into_owned();
        // Sign convention: the largest-magnitude component is positive.
        let imax = u.iamax();
        if u[imax] < 0.0 {
            u.neg_mut();
        }
        let y: Vec<f64> = v.iter().map(|x| u.iter().zip(x).map(|(a, b)| a * b).sum()).collect();
        let scale = lambda.sqrt();
        for (m, f) in mid_ranks(&y).into_iter().enumerate() {
            let z = std_normal.inverse_cdf(f) * scale;
            for (wj, uj) in w[m].iter_mut().zip(u.iter()) {
                *wj += uj * z;
            }
        }
    }
    Ok(QuantileCoupling { w, rank })
}
