//! Minimal-energy paths inside a sup-norm tube ("taut strings").

/// Piecewise-linear path of minimal `Σ(Δφ)²` through the windows
/// `lo[k] ≤ φ_k ≤ hi[k]` on unit-spaced nodes. The first and last windows must
/// be single points. The minimizer is the taut string, which bends only at
/// window endpoints.
pub fn taut_string_fixed(lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = lo.len() - 1;
    debug_assert!(lo[0] == hi[0] && lo[n] == hi[n]);
    let mut out = vec![0.0; n + 1];
    let mut apex = 0;
    out[0] = lo[0];
    while apex < n {
        let ya = out[apex];
        let (mut smax, mut jmax) = (f64::INFINITY, apex);
        let (mut smin, mut jmin) = (f64::NEG_INFINITY, apex);
        let mut k = apex + 1;
        // (bend node, slope, value at the bend)
        let (bend, slope, landing) = loop {
            let run = (k - apex) as f64;
            let su = (hi[k] - ya) / run;
            let sl = (lo[k] - ya) / run;
            if sl > smax {
                break (jmax, smax, hi[jmax]);
            }
            if su < smin {
                break (jmin, smin, lo[jmin]);
            }
            if su < smax {
                smax = su;
                jmax = k;
            }
            if sl > smin {
                smin = sl;
                jmin = k;
            }
            if k == n {
                break (n, 0.5 * (smin + smax), lo[n]);
            }
            k += 1;
        };
        for j in apex + 1..bend {
            out[j] = ya + slope * (j - apex) as f64;
        }
        out[bend] = landing;
        apex = bend;
    }
    out
}

/// `Σ(Δφ)²` over unit-spaced nodes.
pub fn unit_energy(v: &[f64]) -> f64 {
    v.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum()
}

/// Minimal `Σ(Δφ)²` with `φ_0 = 0` and `|φ_k − f_k| ≤ r` for `k ≥ 1`, free at
/// the right end. Returns the minimizer. Requires `|f_0| ≤ r`.
pub fn taut_string_free(f: &[f64], r: f64) -> Vec<f64> {
    let n = f.len() - 1;
    let mut lo: Vec<f64> = f.iter().map(|v| v - r).collect();
    let mut hi: Vec<f64> = f.iter().map(|v| v + r).collect();
    lo[0] = 0.0;
    hi[0] = 0.0;
    let solve = |end: f64, lo: &mut Vec<f64>, hi: &mut Vec<f64>| {
        lo[n] = end;
        hi[n] = end;
        taut_string_fixed(lo, hi)
    };
    // The optimal energy is convex in the end value.
    let (mut a, mut b) = (f[n] - r, f[n] + r);
    for _ in 0..100 {
        if b - a <= 1e-13 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if unit_energy(&solve(m1, &mut lo, &mut hi)) <= unit_energy(&solve(m2, &mut lo, &mut hi)) {
            b = m2;
        } else {
            a = m1;
        }
    }
    solve(0.5 * (a + b), &mut lo, &mut hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;
    use proptest::prelude::*;
    use rand::Rng;

    /// Projected Gauss–Seidel on the same box-constrained quadratic.
    fn gauss_seidel(f: &[f64], r: f64) -> Vec<f64> {
        let n = f.len() - 1;
        let mut v: Vec<f64> = f.iter().map(|x| x.clamp(-r + x, r + x)).collect();
        v[0] = 0.0;
        for _ in 0..200_000 {
            let mut change = 0.0f64;
            for k in 1..=n {
                let target = if k == n { v[n - 1] } else { 0.5 * (v[k - 1] + v[k + 1]) };
                let new = target.clamp(f[k] - r, f[k] + r);
                change = change.max((new - v[k]).abs());
                v[k] = new;
            }
            if change < 1e-14 {
                break;
            }
        }
        v
    }

    #[test]
    fn straight_line_when_unconstrained() {
        let lo = vec![0.0, -10.0, -10.0, -10.0, 3.0];
        let hi = vec![0.0, 10.0, 10.0, 10.0, 3.0];
        let s = taut_string_fixed(&lo, &hi);
        for (k, v) in s.iter().enumerate() {
            assert!((v - 0.75 * k as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn bends_around_an_obstacle() {
        let lo = vec![0.0, -5.0, 2.0, -5.0, 0.0];
        let hi = vec![0.0, 5.0, 5.0, 5.0, 0.0];
        assert_eq!(taut_string_fixed(&lo, &hi), vec![0.0, 1.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn free_end_matches_projected_gauss_seidel() {
        let mut rng = stream(17);
        for case in 0..20 {
            let n = 30;
            let mut f = vec![0.0];
            for _ in 0..n {
                let last = *f.last().unwrap();
                f.push(last + rng.random_range(-1.0..1.0));
            }
            let r = 0.2 + 0.1 * (case % 5) as f64;
            let ours = taut_string_free(&f, r);
            let oracle = gauss_seidel(&f, r);
            for k in 1..=n {
                assert!((ours[k] - f[k]).abs() <= r + 1e-12);
            }
            let (a, b) = (unit_energy(&ours), unit_energy(&oracle));
            assert!((a - b).abs() < 1e-8 * (1.0 + b), "case {case}: {a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn fixed_string_is_feasible_and_optimal(
            steps in prop::collection::vec(-2.0f64..2.0, 2..25),
            r in 0.05f64..1.5,
            end in -3.0f64..3.0,
        ) {
            let mut f = vec![0.0];
            for s in &steps {
                f.push(f.last().unwrap() + s);
            }
            let n = f.len() - 1;
            let mut lo: Vec<f64> = f.iter().map(|v| v - r).collect();
            let mut hi: Vec<f64> = f.iter().map(|v| v + r).collect();
            lo[0] = 0.0; hi[0] = 0.0;
            let end = f[n] + end.clamp(-r, r);
            lo[n] = end; hi[n] = end;
            let s = taut_string_fixed(&lo, &hi);
            for k in 0..=n {
                prop_assert!(s[k] >= lo[k] - 1e-12 && s[k] <= hi[k] + 1e-12);
            }
            // Any feasible perturbation has at least the same energy.
            let e = unit_energy(&s);
            for k in 1..n {
                for delta in [-1e-3, 1e-3] {
                    let mut t = s.clone();
                    t[k] = (t[k] + delta).clamp(lo[k], hi[k]);
                    prop_assert!(unit_energy(&t) >= e - 1e-12);
                }
            }
        }
    }
}
