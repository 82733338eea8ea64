use nalgebra::{DMatrix, DVector};

use super::partition::BlockPartition;
use crate::covariance::pinv_psd;
use crate::error::{Error, Result};
use crate::limits::{brownian, BrownianPath};

/// Relative eigenvalue cutoff for the pseudo-inverse of a block covariance.
const PINV_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledBrownian {
    pub path: BrownianPath,
    /// Set when some block's weighted covariance was singular.
    pub pinv_used: bool,
}

/// A Brownian path with increment covariance `dt·C` on `N` steps whose
/// weighted block sums `Σ_{j∈block k} σ_j ΔW_j` equal `targets[k−1]`.
/// Increments inside a block are conditioned on the sum by the Gaussian
/// projection formula; gap and remainder increments are unconditioned.
/// `weights = None` means `σ_j = I`.
pub fn assemble_brownian(
    targets: &[Vec<f64>],
    weights: Option<&[DMatrix<f64>]>,
    base: &DMatrix<f64>,
    partition: &BlockPartition,
    dt: f64,
    seed: u64,
) -> Result<AssembledBrownian> {
    let n = partition.n as usize;
    let m = base.nrows();
    if targets.len() != partition.nu as usize {
        return Err(Error::argument(format!("{} block targets for ν = {}", targets.len(), partition.nu)));
    }
    let d = weights.map_or(m, |w| w.first().map_or(m, |s| s.nrows()));
    if let Some(w) = weights {
        if w.len() < n || w.iter().any(|s| s.shape() != (d, m)) {
            return Err(Error::argument(format!("need {n} weight matrices of shape {d}×{m}")));
        }
    }
    if targets.iter().any(|t| t.len() != d) {
        return Err(Error::argument("block targets disagree with the weight dimension"));
    }
    let fresh = brownian(seed, n as f64 * dt, dt, m, base)?;
    if fresh.steps() != n {
        return Err(Error::argument(format!("dt {dt} does not give {n} steps")));
    }
    let mut inc = fresh.increments().to_vec();
    let identity = DMatrix::identity(d, m);
    let weight = |j: usize| weights.map_or(&identity, |w| &w[j]);
    let mut pinv_used = false;
    for k in 1..=partition.nu {
        let range = partition.block_range(k);
        let mut sum = DVector::<f64>::zeros(d);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for j in range.clone() {
            let s = weight(j);
            sum += s * DVector::from_column_slice(&inc[j * m..(j + 1) * m]);
            cov += s * base * s.transpose();
        }
        cov *= dt;
        let (pinv, rank) = pinv_psd(&cov, PINV_CUTOFF)?;
        pinv_used |= rank < d;
        let h = pinv * (DVector::from_column_slice(&targets[k as usize - 1]) - sum);
        for j in range {
            let shift = base * weight(j).transpose() * &h * dt;
            for (z, s) in inc[j * m..(j + 1) * m].iter_mut().zip(shift.iter()) {
                *z += s;
            }
        }
    }
    let path = BrownianPath::from_increments(0.0, dt, m, base.clone(), inc)?;
    Ok(AssembledBrownian { path, pinv_used })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::block_partition;

    fn block_sum(w: &BrownianPath, p: &BlockPartition, k: u64) -> Vec<f64> {
        let mut s = vec![0.0; w.dim()];
        for j in p.block_range(k) {
            for (a, b) in s.iter_mut().zip(w.increment(j)) {
                *a += b;
            }
        }
        s
    }

    #[test]
    fn identity_weights_hit_targets() {
        let p = block_partition(10_000).unwrap();
        let targets: Vec<Vec<f64>> = (0..p.nu).map(|k| vec![k as f64 * 0.1 - 0.3, 0.2]).collect();
        let a = assemble_brownian(&targets, None, &DMatrix::identity(2, 2), &p, 1e-4, 3).unwrap();
        assert!(!a.pinv_used);
        for k in 1..=p.nu {
            let s = block_sum(&a.path, &p, k);
            for (x, y) in s.iter().zip(&targets[k as usize - 1]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_targets_give_bridges() {
        let p = block_partition(4096).unwrap();
        let targets = vec![vec![0.0]; p.nu as usize];
        let a = assemble_brownian(&targets, None, &DMatrix::identity(1, 1), &p, 1.0, 4).unwrap();
        for k in 1..=p.nu {
            assert!(block_sum(&a.path, &p, k)[0].abs() < 1e-10);
        }
        // Gap increments are untouched draws.
        let fresh = brownian(4, 4096.0, 1.0, 1, &DMatrix::identity(1, 1)).unwrap();
        let g = p.gap_range(1);
        assert_eq!(&a.path.increments()[g.clone()], &fresh.increments()[g]);
    }

    #[test]
    fn weighted_sums_hit_targets() {
        let p = block_partition(1000).unwrap();
        let w: Vec<DMatrix<f64>> =
            (0..1000).map(|j| DMatrix::from_row_slice(2, 2, &[1.0 + (j as f64 * 0.01).sin(), 0.3, 0.0, 2.0])).collect();
        let targets: Vec<Vec<f64>> = (0..p.nu).map(|k| vec![0.5, -(k as f64)]).collect();
        let a = assemble_brownian(&targets, Some(&w), &DMatrix::identity(2, 2), &p, 1e-3, 5).unwrap();
        for k in 1..=p.nu {
            let mut s = DVector::zeros(2);
            for j in p.block_range(k) {
                s += &w[j] * DVector::from_column_slice(a.path.increment(j));
            }
            assert!((s - DVector::from_column_slice(&targets[k as usize - 1])).amax() < 1e-12);
        }
    }

    #[test]
    fn singular_weights_use_pseudo_inverse() {
        let p = block_partition(100).unwrap();
        let w = vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]); 100];
        let a = assemble_brownian(&vec![vec![1.0, 0.0]; p.nu as usize], Some(&w), &DMatrix::identity(2, 2), &p, 0.01, 1).unwrap();
        assert!(a.pinv_used);
    }

    #[test]
    fn quadratic_variation_is_preserved() {
        // Targets drawn from the correct law keep the Brownian property.
        let n = 40_000u64;
        let p = block_partition(n).unwrap();
        let dt = 1.0 / n as f64;
        let src = brownian(11, 1.0, dt, 2, &DMatrix::identity(2, 2)).unwrap();
        let targets: Vec<Vec<f64>> = (1..=p.nu).map(|k| block_sum(&src, &p, k)).collect();
        let a = assemble_brownian(&targets, None, &DMatrix::identity(2, 2), &p, dt, 12).unwrap();
        let se = (2.0 * dt * 2.0).sqrt();
        assert!((a.path.quadratic_variation() - 2.0).abs() < 3.0 * se, "{}", a.path.quadratic_variation());
    }
}
