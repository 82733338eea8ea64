use std::collections::VecDeque;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::observable::{MapPoint, Observable};
use super::{DriverKind, DriverSpec, IidLaw, MarkovChain, DEFAULT_GAUSS_WINDOW};
use crate::error::Result;
use crate::seed::{stream, StreamRng};

/// Largest continued-fraction digit ever emitted.
const DIGIT_CAP: u64 = 1 << 62;

#[derive(Debug, Clone)]
enum State {
    /// Bernoulli shift: `window` holds bits `b_{n+1} … b_{n+64}`.
    Doubling { window: u64, bits: u64, left: u32, rng: StreamRng },
    Cat { u: u64, v: u64 },
    /// `digits` holds `a_{n+1} … a_{n+W}`; `(r, s)` encode the conditional
    /// law of the next digit given every digit drawn so far.
    Gauss { digits: VecDeque<u64>, r: f64, s: f64, x: [f64; 1], rng: StreamRng },
    Markov { state: usize, chain: MarkovChain, rng: StreamRng },
    Iid { law: IidLaw, sample: Vec<f64>, cell: usize, rng: StreamRng },
}

/// An exact orbit `ξ(n) = f(Fⁿω)` started from the invariant measure.
///
/// Cloning an orbit forks it: both copies emit the same continuation.
#[derive(Debug, Clone)]
pub struct DriverOrbit {
    seed: u64,
    emitted: u64,
    bound: f64,
    observable: Observable,
    state: State,
}

/// Initialize an orbit from a draw of the invariant measure.
pub fn make_orbit(spec: &DriverSpec, seed: u64) -> Result<DriverOrbit> {
    spec.validate()?;
    let observable = Observable::compile(spec)?;
    let mut rng = stream(seed);
    let state = match spec.kind {
        DriverKind::DoublingMap => State::Doubling { window: rng.next_u64(), bits: 0, left: 0, rng },
        DriverKind::CatMap => State::Cat { u: rng.next_u64(), v: rng.next_u64() },
        DriverKind::GaussMap => {
            let window = spec.params.digit_window.unwrap_or(DEFAULT_GAUSS_WINDOW);
            let mut st = State::Gauss { digits: VecDeque::with_capacity(window + 1), r: 0.0, s: 1.0, x: [0.0], rng };
            if let State::Gauss { digits, r, s, x, rng } = &mut st {
                for _ in 0..window {
                    digits.push_back(next_digit(r, s, rng));
                }
                x[0] = continued_fraction(digits);
            }
            st
        }
        DriverKind::MarkovChain => {
            let chain = spec.chain()?;
            let state = match spec.params.burn_in {
                Some(burn) => {
                    let mut s = 0;
                    for _ in 0..burn {
                        s = chain.step(s, &mut rng);
                    }
                    s
                }
                None => chain.sample_stationary(&mut rng),
            };
            State::Markov { state, chain, rng }
        }
        DriverKind::Iid => {
            let law = spec.params.distribution.clone().expect("validated iid law");
            let mut sample = vec![0.0; law.dim()];
            let cell = draw_iid(&law, &mut rng, &mut sample);
            State::Iid { law, sample, cell, rng }
        }
    };
    Ok(DriverOrbit { seed, emitted: 0, bound: spec.bound, observable, state })
}

/// Draw the next digit from density `∝ 1/((1+ry)(1+sy))` on `(0, 1]` by
/// inversion, then update `(r, s)` to condition on it.
fn next_digit(r: &mut f64, s: &mut f64, rng: &mut StreamRng) -> u64 {
    let u: f64 = rng.random();
    let delta = *s - *r;
    let y = if delta == 0.0 {
        u / (1.0 + *r - u * *r)
    } else {
        let c = (delta / (1.0 + *r)).ln_1p();
        let q = (u * c).exp_m1() / delta;
        q / (1.0 - q * *r)
    };
    let a = if y > 0.0 { (1.0 / y).floor().clamp(1.0, DIGIT_CAP as f64) as u64 } else { DIGIT_CAP };
    let af = a as f64;
    *r = 1.0 / (af + *r);
    *s = 1.0 / (af + *s);
    a
}

fn continued_fraction(digits: &VecDeque<u64>) -> f64 {
    digits.iter().rev().fold(0.0, |x, &a| 1.0 / (a as f64 + x))
}

fn draw_iid(law: &IidLaw, rng: &mut StreamRng, out: &mut [f64]) -> usize {
    match law {
        IidLaw::Uniform { low, high } => {
            for ((o, a), b) in out.iter_mut().zip(low).zip(high) {
                let u: f64 = rng.random();
                *o = a + (b - a) * u;
            }
            0
        }
        IidLaw::Rademacher { .. } => {
            for o in out.iter_mut() {
                *o = if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
            usize::from(out[0] > 0.0)
        }
        IidLaw::TruncatedNormal { sd, cutoff, .. } => {
            for o in out.iter_mut() {
                *o = loop {
                    let z: f64 = rng.sample(StandardNormal);
                    if z.abs() <= *cutoff {
                        break sd * z;
                    }
                };
            }
            0
        }
        IidLaw::Discrete { atoms, probs } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut idx = atoms.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            out.copy_from_slice(&atoms[idx]);
            idx
        }
        IidLaw::Constant { value } => {
            out.copy_from_slice(value);
            0
        }
    }
}

impl DriverOrbit {
    /// Doubling-map orbit whose first 64 bits are `window` (most significant
    /// first); later bits come from the seed's stream.
    pub fn doubling_from_window(spec: &DriverSpec, window: u64, seed: u64) -> Result<Self> {
        let mut orbit = make_orbit(spec, seed)?;
        match &mut orbit.state {
            State::Doubling { window: w, .. } => *w = window,
            _ => return Err(crate::error::Error::argument("doubling_from_window needs a doubling-map spec")),
        }
        Ok(orbit)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.observable.dim()
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Bits `b_{n+1} … b_{n+64}` of the current doubling-map state.
    pub fn doubling_window(&self) -> Option<u64> {
        match &self.state {
            State::Doubling { window, .. } => Some(*window),
            _ => None,
        }
    }

    fn point(&self) -> MapPoint<'_> {
        match &self.state {
            State::Doubling { window, .. } => MapPoint::Dyadic(*window),
            State::Cat { u, v } => MapPoint::Torus(*u, *v),
            State::Gauss { digits, x, .. } => {
                MapPoint::Real { x, cell: digits[0] as usize - 1 }
            }
            State::Markov { state, .. } => MapPoint::Real { x: &[], cell: *state },
            State::Iid { sample, cell, .. } => MapPoint::Real { x: sample, cell: *cell },
        }
    }

    /// Evaluate another observable of the same map at the current state.
    pub(crate) fn evaluate(&self, observable: &Observable, out: &mut [f64]) {
        if let State::Markov { state, .. } = &self.state {
            let x = [*state as f64];
            observable.eval(MapPoint::Real { x: &x, cell: *state }, out);
        } else {
            observable.eval(self.point(), out);
        }
    }

    /// Write `ξ(n)` into `out` and advance one step.
    pub fn next_into(&mut self, out: &mut [f64]) {
        self.evaluate(&self.observable, out);
        let sq: f64 = out.iter().map(|x| x * x).sum();
        assert!(sq.sqrt() <= self.bound * (1.0 + 1e-9), "driver sample {out:?} exceeds bound {}", self.bound);
        self.advance();
    }

    pub fn next(&mut self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.next_into(&mut out);
        out
    }

    /// Advance the map state one step without emitting.
    pub fn advance(&mut self) {
        self.emitted += 1;
        match &mut self.state {
            State::Doubling { window, bits, left, rng } => {
                if *left == 0 {
                    *bits = rng.next_u64();
                    *left = 64;
                }
                *window = (*window << 1) | (*bits >> 63);
                *bits <<= 1;
                *left -= 1;
            }
            State::Cat { u, v } => {
                let (a, b) = (u.wrapping_mul(2).wrapping_add(*v), u.wrapping_add(*v));
                *u = a;
                *v = b;
            }
            State::Gauss { digits, r, s, x, rng } => {
                digits.pop_front();
                digits.push_back(next_digit(r, s, rng));
                x[0] = continued_fraction(digits);
            }
            State::Markov { state, chain, rng } => *state = chain.step(*state, rng),
            State::Iid { law, sample, cell, rng } => *cell = draw_iid(law, rng, sample),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{ObservableForm, ObservableSpec, TrigTerm};

    fn ks_uniform_stat(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn doubling_replay_is_identical() {
        let spec = DriverSpec::doubling(ObservableSpec::cosine(3), 1.0);
        let mut a = make_orbit(&spec, 11).unwrap();
        let mut b = make_orbit(&spec, 11).unwrap();
        let mut x = [0.0];
        let mut y = [0.0];
        for _ in 0..1_000_000 {
            a.next_into(&mut x);
            b.next_into(&mut y);
            assert_eq!(x[0].to_bits(), y[0].to_bits());
        }
        assert_eq!(a.emitted(), 1_000_000);
    }

    #[test]
    fn first_binary_digit_and_shift() {
        let spec = DriverSpec::doubling(ObservableSpec::table(&[0.0, 1.0]), 1.0);
        // 0.101101…₂
        let window = 0b101101u64 << 58;
        let mut orbit = DriverOrbit::doubling_from_window(&spec, window, 5).unwrap();
        assert_eq!(orbit.next(), vec![1.0]);
        assert_eq!(orbit.doubling_window().unwrap() >> 59, 0b01101);
        assert_eq!(orbit.next(), vec![0.0]);
        assert_eq!(orbit.next(), vec![1.0]);
    }

    #[test]
    fn symmetric_chain_starts_uniform() {
        let spec = DriverSpec::two_state(0.1);
        let ones = (0..20_000u64).filter(|s| make_orbit(&spec, *s).unwrap().next()[0] > 0.0).count();
        let frac = ones as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 4.0 * (0.25f64 / 20_000.0).sqrt(), "{frac}");
    }

    #[test]
    fn gauss_initial_draw_has_gauss_measure() {
        // The Gauss-measure CDF is log₂(1+x), inverted by x = 2^u − 1.
        let inv = |u: f64| 2f64.powf(u) - 1.0;
        for u in [0.0, 0.25, 0.5, 1.0] {
            assert!(((1.0 + inv(u)).log2() - u).abs() < 1e-15);
        }
        let spec = DriverSpec::gauss(ObservableSpec::coordinate(1), 1.0);
        let xs: Vec<f64> = (0..20_000u64).map(|s| make_orbit(&spec, s).unwrap().next()[0]).collect();
        let d = ks_uniform_stat(xs, |x| (1.0 + x).log2());
        assert!(d < 1.63 / (20_000f64).sqrt(), "KS {d}");
    }

    #[test]
    fn gauss_orbit_stays_stationary() {
        let spec = DriverSpec::gauss(ObservableSpec::coordinate(1), 1.0);
        let xs: Vec<f64> = (0..20_000u64)
            .map(|s| {
                let mut o = make_orbit(&spec, s).unwrap();
                for _ in 0..50 {
                    o.advance();
                }
                o.next()[0]
            })
            .collect();
        let d = ks_uniform_stat(xs, |x| (1.0 + x).log2());
        assert!(d < 1.63 / (20_000f64).sqrt(), "KS {d}");
    }

    #[test]
    fn cat_map_is_uniform_after_many_steps() {
        let spec = DriverSpec::cat(ObservableSpec::coordinate(2), std::f64::consts::SQRT_2);
        let xs: Vec<f64> = (0..20_000u64)
            .map(|s| {
                let mut o = make_orbit(&spec, s).unwrap();
                for _ in 0..200 {
                    o.advance();
                }
                o.next()[1]
            })
            .collect();
        let d = ks_uniform_stat(xs, |x| x);
        assert!(d < 1.63 / (20_000f64).sqrt(), "KS {d}");
    }

    #[test]
    fn iid_lag_one_autocorrelation_in_clt_band() {
        let spec = DriverSpec::iid(IidLaw::Uniform { low: vec![-1.0], high: vec![1.0] }, 1.0);
        let mut o = make_orbit(&spec, 3).unwrap();
        let xs: Vec<f64> = (0..1_000_000).map(|_| o.next()[0]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>();
        let c1 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>();
        assert!((c1 / v).abs() < 4.0 / 1000.0, "{}", c1 / v);
    }

    #[test]
    fn chain_lag_covariance_matches_eigenvalue() {
        let spec = DriverSpec::two_state(0.25);
        let mut o = make_orbit(&spec, 9).unwrap();
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| o.next()[0]).collect();
        for k in 1..=4 {
            let c = xs.iter().zip(&xs[k..]).map(|(a, b)| a * b).sum::<f64>() / (n - k) as f64;
            assert!((c - 0.5f64.powi(k as i32)).abs() < 0.01, "lag {k}: {c}");
        }
    }

    #[test]
    fn trig_observable_matches_float_evaluation() {
        let spec = DriverSpec::cat(
            ObservableSpec {
                form: ObservableForm::TrigPolynomial {
                    terms: vec![vec![TrigTerm { freq: vec![1, 2], cos: 0.5, sin: 0.25 }]],
                },
                dim: 1,
            },
            1.0,
        );
        let mut o = make_orbit(&spec, 1).unwrap();
        let coord = Observable::compile(&DriverSpec::cat(ObservableSpec::coordinate(2), 2.0)).unwrap();
        for _ in 0..100 {
            let mut uv = [0.0; 2];
            o.evaluate(&coord, &mut uv);
            let phase = 2.0 * std::f64::consts::PI * (uv[0] + 2.0 * uv[1]);
            let want = 0.5 * phase.cos() + 0.25 * phase.sin();
            assert!((o.next()[0] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn clones_fork_the_same_continuation() {
        let spec = DriverSpec::gauss(ObservableSpec::coordinate(1), 1.0);
        let mut a = make_orbit(&spec, 2).unwrap();
        a.advance();
        let mut b = a.clone();
        for _ in 0..100 {
            assert_eq!(a.next(), b.next());
        }
    }
}
