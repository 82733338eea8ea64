use fastslow::drivers::{make_orbit, DriverSpec, IidLaw};
use fastslow::dynamics::{
    averaged_path, gronwall_check, linearized_deviation_z, slow_discrete, AveragedMode, DriftField, MatrixField, Model, SystemForm, SystemSpec,
};
use fastslow::metrics::{moment_sup_error, rate_fit, sup_distance};
use fastslow::seed::{pairwise_mean, seed_derive};
use fastslow::Interpolation;
use rayon::prelude::*;

const GRID: [f64; 3] = [1e-2, 1e-3, 1e-4];
const MEMBERS: u64 = 400;

fn driver() -> DriverSpec {
    DriverSpec::iid(IidLaw::Uniform { low: vec![-1.0], high: vec![1.0] }, 1.0)
}

/// `B(x, ξ) = −x + (1 + sin(x)/2)ξ`: `B̄(x) = −x`.
fn mean_reverting() -> Model {
    let spec = SystemSpec {
        dim: 1,
        form: SystemForm::DriftProduct {
            drift: DriftField::Linear { matrix: vec![vec![-1.0]] },
            sigma: MatrixField::Sine { base: vec![vec![1.0]], amplitude: vec![vec![0.5]] },
        },
        c2_bound: 2.5,
        averaged: AveragedMode::ClosedForm,
    };
    Model::new(spec, &driver(), 1).unwrap()
}

#[test]
fn second_moment_of_sup_deviation_scales_like_eps() {
    let model = mean_reverting();
    let x0 = [0.8];
    let stats: Vec<f64> = GRID
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let bar = averaged_path(&model, &x0, 1.0, eps).unwrap().with_interpolation(Interpolation::PiecewiseConstant);
            let pairs: Vec<_> = (0..MEMBERS)
                .into_par_iter()
                .map(|i| {
                    let mut orbit = make_orbit(&driver(), seed_derive(11, "driver", i)).unwrap();
                    (slow_discrete(&model, &mut orbit, eps, &x0, 1.0).unwrap(), bar.clone())
                })
                .collect();
            moment_sup_error(&pairs, 2, seed_derive(11, "bootstrap", k as u64)).unwrap().mean
        })
        .collect();
    let fit = rate_fit(&GRID, &stats).unwrap();
    assert!((fit.slope - 1.0).abs() <= 0.2, "{fit:?}");
}

#[test]
fn linearized_deviation_residual_is_order_eps() {
    let model = mean_reverting();
    let x0 = [0.8];
    let residuals: Vec<f64> = GRID
        .iter()
        .map(|&eps| {
            let r: Vec<f64> = (0..MEMBERS)
                .into_par_iter()
                .map(|i| {
                    let mut orbit = make_orbit(&driver(), seed_derive(12, "driver", i)).unwrap();
                    let mut copy = orbit.clone();
                    let x = slow_discrete(&model, &mut orbit, eps, &x0, 1.0).unwrap();
                    let lin = linearized_deviation_z(&model, &mut copy, eps, &x0, 1.0).unwrap();
                    let dev = x.combine(1.0, &lin.x_bar.clone().with_interpolation(Interpolation::PiecewiseConstant), -1.0).unwrap();
                    let check = gronwall_check(&x, &lin.x_bar.clone().with_interpolation(Interpolation::PiecewiseConstant), &lin.s, 2.5, eps).unwrap();
                    assert!(check.holds(), "{check:?}");
                    sup_distance(&dev, &lin.z).unwrap()
                })
                .collect();
            pairwise_mean(&r)
        })
        .collect();
    let fit = rate_fit(&GRID, &residuals).unwrap();
    assert!(fit.slope >= 0.8, "{fit:?}");
}
