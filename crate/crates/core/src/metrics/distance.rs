use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::path::Path;

/// Largest ensemble size solved by exact assignment.
pub const EXACT_ASSIGNMENT_LIMIT: usize = 512;

/// `max_k |p(t_k) − q(t_k)|` over the shared grid.
pub fn sup_distance(p: &Path, q: &Path) -> Result<f64> {
    p.ensure_same_grid(q)?;
    Ok(sup_distance_unchecked(p, q))
}

pub(crate) fn sup_distance_unchecked(p: &Path, q: &Path) -> f64 {
    p.points()
        .zip(q.points())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Minimum-cost perfect matching on a square cost matrix (row-major),
/// shortest augmenting paths with potentials. Returns the column of each row.
pub fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // 1-based arrays with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        col[owner[j] - 1] = j - 1;
    }
    col
}

fn greedy_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    let mut taken = vec![false; n];
    (0..n)
        .map(|i| {
            let j = (0..n)
                .filter(|j| !taken[*j])
                .min_by(|a, b| cost[i * n + a].total_cmp(&cost[i * n + b]))
                .expect("a free column remains");
            taken[j] = true;
            j
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WassersteinEstimate {
    pub value: f64,
    /// False when the greedy matching was used; `value` is then an upper bound.
    pub exact: bool,
}

/// Empirical `L^q` Wasserstein distance between equal-size path ensembles
/// under the sup metric.
pub fn wasserstein(a: &[Path], b: &[Path], order: f64) -> Result<WassersteinEstimate> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::argument(format!("ensembles must be nonempty and of equal size ({} vs {})", a.len(), b.len())));
    }
    if !(order >= 1.0) {
        return Err(Error::argument("Wasserstein order must be at least 1"));
    }
    let n = a.len();
    // Canonical orientation: the result is bit-identical under swapping the arguments.
    let key = |e: &[Path]| e.iter().flat_map(|p| p.values().iter().copied()).collect::<Vec<f64>>();
    let (a, b) = match key(a).iter().zip(key(b).iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()) {
        Some(std::cmp::Ordering::Greater) => (b, a),
        _ => (a, b),
    };
    for p in a.iter().chain(b) {
        a[0].ensure_same_grid(p)?;
    }
    let cost: Vec<f64> = a
        .par_iter()
        .flat_map_iter(|p| b.iter().map(move |q| sup_distance_unchecked(p, q).powf(order)))
        .collect();
    Ok(wasserstein_from_costs(&cost, n, order))
}

/// `(min over matchings of the mean cost)^{1/q}` for costs already raised to the power `q`.
pub fn wasserstein_from_costs(cost: &[f64], n: usize, order: f64) -> WassersteinEstimate {
    let exact = n <= EXACT_ASSIGNMENT_LIMIT;
    let col = if exact { assignment(cost, n) } else { greedy_assignment(cost, n) };
    // Sorted summation makes the value independent of which side is the row set.
    let mut matched: Vec<f64> = col.iter().enumerate().map(|(i, j)| cost[i * n + j]).collect();
    matched.sort_by(f64::total_cmp);
    let total: f64 = matched.iter().sum();
    WassersteinEstimate { value: (total / n as f64).powf(1.0 / order), exact }
}

/// `inf{γ ≥ 0 : #{d_i > γ}/n ≤ γ}`.
pub fn kyfan(distances: &[f64]) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    let mut d = distances.to_vec();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let exceed = |g: f64| (n - d.partition_point(|x| *x <= g)) as f64 / n as f64;
    // The feasible set is [γ*, ∞); γ* is a jump of the exceedance or one of its levels.
    let mut candidates: Vec<f64> = d.iter().copied().chain((0..=n).map(|j| j as f64 / n as f64)).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.into_iter().find(|g| *g >= 0.0 && exceed(*g) <= *g).unwrap_or(1.0)
}

/// `γ* = q^{1/(2M+1)}`, the minimizer of `max(γ, q γ^{−2M})`; returns `(γ*, bound)`.
pub fn prokhorov_bound(q: f64, m: u32) -> Result<(f64, f64)> {
    if !(q >= 0.0) || m == 0 {
        return Err(Error::argument("moment must be nonnegative and M ≥ 1"));
    }
    let g = q.powf(1.0 / (2 * m + 1) as f64);
    Ok((g, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::Interpolation;
    use proptest::prelude::*;

    fn line(f: impl Fn(f64) -> f64) -> Path {
        Path::from_fn(0.0, 0.01, 101, 1, Interpolation::Linear, |t, o| o[0] = f(t)).unwrap()
    }

    fn constant(c: f64) -> Path {
        Path::from_fn(0.0, 0.5, 3, 1, Interpolation::Linear, |_, o| o[0] = c).unwrap()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    pub(crate) fn brute_force(cost: &[f64], n: usize) -> f64 {
        permutations(n).iter().map(|p| p.iter().enumerate().map(|(i, j)| cost[i * n + j]).sum::<f64>()).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn sup_distance_cases() {
        let p = line(|t| t);
        assert_eq!(sup_distance(&p, &p).unwrap(), 0.0);
        assert!((sup_distance(&p, &line(|t| t + 0.3)).unwrap() - 0.3).abs() < 1e-15);
        assert!((sup_distance(&p, &line(|t| t * t)).unwrap() - 0.25).abs() < 1e-15);
        assert!(sup_distance(&p, &constant(0.0)).is_err());
    }

    #[test]
    fn wasserstein_small_cases() {
        let a = vec![constant(0.0), constant(1.0), constant(5.0)];
        assert_eq!(wasserstein(&a, &a, 1.0).unwrap().value, 0.0);
        let w = wasserstein(&a[..1], &a[2..], 2.0).unwrap();
        assert!((w.value - 5.0).abs() < 1e-12 && w.exact);
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let col = assignment(&cost, 3);
        let total: f64 = col.iter().enumerate().map(|(i, j)| cost[i * 3 + j]).sum();
        assert_eq!(total, brute_force(&cost, 3));
        assert_eq!(total, 5.0);
        assert!(wasserstein(&a, &a[..2], 1.0).is_err());
    }

    #[test]
    fn greedy_above_limit_is_flagged() {
        let n = EXACT_ASSIGNMENT_LIMIT + 1;
        let cost: Vec<f64> = (0..n * n).map(|k| ((k % n) as f64 - (k / n) as f64).abs()).collect();
        let w = wasserstein_from_costs(&cost, n, 1.0);
        assert!(!w.exact);
        assert_eq!(w.value, 0.0);
    }

    #[test]
    fn kyfan_cases() {
        assert_eq!(kyfan(&[0.0; 5]), 0.0);
        assert_eq!(kyfan(&[1.0; 7]), 1.0);
        assert_eq!(kyfan(&[0.0, 0.0, 0.0, 0.5]), 0.25);
        assert_eq!(kyfan(&[0.01, 0.02, 0.03]), 0.03);
        assert_eq!(kyfan(&[5.0, 0.0]), 0.5);
    }

    #[test]
    fn prokhorov_bound_cases() {
        let (g, b) = prokhorov_bound(1e-4, 1).unwrap();
        assert!((g - 10f64.powf(-4.0 / 3.0)).abs() < 1e-15 && g == b);
        assert!((g - 0.0464).abs() < 1e-4);
        assert_eq!(prokhorov_bound(0.0, 2).unwrap().0, 0.0);
        for m in 1..5 {
            assert_eq!(prokhorov_bound(1.0, m).unwrap().0, 1.0);
        }
        for (q, m) in [(0.3, 1), (1e-6, 2), (2.5, 3)] {
            let (g, _) = prokhorov_bound(q, m).unwrap();
            assert!((g - q * g.powi(-2 * m as i32)).abs() < 1e-12 * g.max(1.0));
        }
    }

    /// Prokhorov distance between two empirical laws of `n` atoms on the line,
    /// by enumerating subsets of the first law's atoms.
    fn prokhorov_small(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ok = |g: f64| {
            (1u32..1 << a.len()).all(|mask| {
                let chosen: Vec<f64> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
                let mass_a = chosen.len() as f64 / n;
                let mass_b = b.iter().filter(|y| chosen.iter().any(|x| (x - *y).abs() <= g)).count() as f64 / n;
                mass_a <= mass_b + g + 1e-12
            })
        };
        let mut cand: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| (x - y).abs())).collect();
        cand.extend((0..=a.len()).map(|k| k as f64 / n));
        cand.sort_by(f64::total_cmp);
        cand.into_iter().find(|g| ok(*g)).unwrap_or(1.0)
    }

    proptest! {
        #[test]
        fn assignment_matches_brute_force(n in 1usize..=6, seed in any::<u64>()) {
            let mut s = seed;
            let cost: Vec<f64> = (0..n * n).map(|_| { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 11) as f64 / (1u64 << 53) as f64 }).collect();
            let col = assignment(&cost, n);
            let total: f64 = col.iter().enumerate().map(|(i, j)| cost[i * n + j]).sum();
            prop_assert!((total - brute_force(&cost, n)).abs() < 1e-12);
        }

        #[test]
        fn wasserstein_is_a_metric(
            xs in prop::collection::vec(-3.0f64..3.0, 5),
            ys in prop::collection::vec(-3.0f64..3.0, 5),
            zs in prop::collection::vec(-3.0f64..3.0, 5),
        ) {
            let to = |v: &[f64]| v.iter().map(|c| constant(*c)).collect::<Vec<_>>();
            let (a, b, c) = (to(&xs), to(&ys), to(&zs));
            for q in [1.0, 2.0] {
                let ab = wasserstein(&a, &b, q).unwrap().value;
                prop_assert_eq!(ab, wasserstein(&b, &a, q).unwrap().value);
                let ac = wasserstein(&a, &c, q).unwrap().value;
                let cb = wasserstein(&c, &b, q).unwrap().value;
                prop_assert!(ab <= ac + cb + 1e-12);
            }
            let mut shuffled = a.clone();
            shuffled.rotate_left(2);
            prop_assert_eq!(wasserstein(&a, &shuffled, 1.0).unwrap().value, 0.0);
            let (mut sx, mut sy) = (xs.clone(), ys.clone());
            sx.sort_by(f64::total_cmp);
            sy.sort_by(f64::total_cmp);
            prop_assert_eq!(wasserstein(&a, &b, 1.0).unwrap().value == 0.0, sx == sy);
        }

        #[test]
        fn kyfan_and_wasserstein_bound_prokhorov(
            xs in prop::collection::vec(-1.0f64..1.0, 1..=5),
            shift in prop::collection::vec(-0.5f64..0.5, 5),
        ) {
            let ys: Vec<f64> = xs.iter().zip(&shift).map(|(x, s)| x + s).collect();
            let pi = prokhorov_small(&xs, &ys);
            let d: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| (x - y).abs()).collect();
            prop_assert!(pi <= kyfan(&d) + 1e-12);
            let a: Vec<Path> = xs.iter().map(|c| constant(*c)).collect();
            let b: Vec<Path> = ys.iter().map(|c| constant(*c)).collect();
            prop_assert!(pi * pi <= wasserstein(&a, &b, 1.0).unwrap().value + 1e-12);
        }

        #[test]
        fn kyfan_is_feasible_and_minimal(d in prop::collection::vec(0.0f64..2.0, 1..40)) {
            let g = kyfan(&d);
            let n = d.len() as f64;
            let exceed = |g: f64| d.iter().filter(|x| **x > g).count() as f64 / n;
            prop_assert!(exceed(g) <= g);
            prop_assert!(exceed(g * (1.0 - 1e-9) - 1e-12) > g * (1.0 - 1e-9) - 1e-12 || g == 0.0);
        }
    }
}
