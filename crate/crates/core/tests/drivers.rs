use fastslow::drivers::{make_orbit, DriverSpec, IidLaw, ObservableSpec};
use fastslow::metrics::ks_two_sample;
use fastslow::seed::seed_derive;
use rayon::prelude::*;

const ORBITS: u64 = 10_000;

fn builtin_drivers() -> Vec<(&'static str, DriverSpec)> {
    let cat: DriverSpec = serde_json::from_str(
        r#"{"kind": "cat-map", "bound": 1.0,
            "observable": {"form": "trig-polynomial", "dim": 1, "terms": [[{"freq": [1, 1], "cos": 0.6, "sin": 0.4}]]}}"#,
    )
    .unwrap();
    vec![
        ("doubling", DriverSpec::doubling(ObservableSpec::cosine(1), 1.0)),
        ("cat", cat),
        ("gauss", DriverSpec::gauss(ObservableSpec::coordinate(1), 1.0)),
        ("markov", DriverSpec::markov(vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.4, 0.4, 0.2]], ObservableSpec::table(&[-1.0, 0.5, 2.0]), 2.0)),
        ("iid", DriverSpec::iid(IidLaw::TruncatedNormal { dim: 1, sd: 1.0, cutoff: 3.0 }, 3.0)),
    ]
}

/// `ξ(k)` over independent orbits, seeded by `role`.
fn marginal(spec: &DriverSpec, role: &str, k: usize) -> Vec<f64> {
    (0..ORBITS)
        .into_par_iter()
        .map(|i| {
            let mut orbit = make_orbit(spec, seed_derive(7, role, i)).unwrap();
            let mut x = orbit.next();
            for _ in 0..k {
                x = orbit.next();
            }
            x[0]
        })
        .collect()
}

/// Family-wise 1% over every (driver, lag) comparison.
#[test]
fn marginals_are_stationary() {
    let drivers = builtin_drivers();
    let alpha = 0.01 / (3 * drivers.len()) as f64;
    for (name, spec) in drivers {
        let start = marginal(&spec, "start", 0);
        for k in [1, 10, 100] {
            let later = marginal(&spec, "later", k);
            let t = ks_two_sample(&start, &later, alpha).unwrap();
            assert!(t.pass, "{name} at lag {k}: D = {}, p = {}", t.statistic, t.p_value);
        }
    }
}

#[test]
fn sample_streams_do_not_depend_on_thread_count() {
    let spec = DriverSpec::gauss(ObservableSpec::coordinate(1), 1.0);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| marginal(&spec, "threads", 50))
    };
    let one = run(1);
    assert_eq!(one.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), run(4).iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}
