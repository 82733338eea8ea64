use fastslow::coupling::{block_partition, couple_ensemble, CouplingConfig};
use fastslow::drivers::{DriverSpec, IidLaw};
use fastslow::dynamics::{Model, SystemSpec};
use fastslow::seed::{pairwise_mean, seed_derive};
use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn uniform() -> DriverSpec {
    DriverSpec::iid(IidLaw::Uniform { low: vec![-1.0], high: vec![1.0] }, 1.0)
}

/// `B(x, ξ) = (1 + x/2)ξ` with `ξ ~ U[−1, 1]`: `X̄ ≡ x0`, `A = (1 + x0/2)²/3`.
fn toy() -> (Model, f64, f64) {
    let x0 = 0.2;
    (Model::new(SystemSpec::scalar_product(1.0, 0.5, 2.0), &uniform(), 1).unwrap(), x0, (1.0 + 0.5 * x0).powi(2) / 3.0)
}

fn sigma_of(x: &[f64]) -> fastslow::Result<DMatrix<f64>> {
    Ok(DMatrix::from_element(1, 1, (1.0 + 0.5 * x[0]) / 3f64.sqrt()))
}

#[test]
fn block_increments_have_the_prescribed_covariance() {
    let (model, x0, a) = toy();
    let eps = 1e-3;
    let cfg = CouplingConfig { eps, t_end: 1.0, members: 1000, seed: seed_derive(31, "couple", 0) };
    let e = couple_ensemble(&model, &uniform(), &sigma_of, &[x0], &cfg).unwrap();
    let n = e.pairs.len() as f64;
    let chi = ChiSquared::new(n - 1.0).unwrap();
    for k in 0..e.partition.nu as usize {
        let target = a * eps * e.partition.block as f64;
        let ws: Vec<f64> = e.pairs.iter().map(|p| p.w_blocks[k][0]).collect();
        let mean = pairwise_mean(&ws);
        let ss: f64 = ws.iter().map(|w| (w - mean) * (w - mean)).sum();
        let p = chi.cdf(ss / target);
        assert!((0.005..=0.995).contains(&p), "block {k}: variance {} vs {target}, p = {p}", ss / (n - 1.0));
    }
}

#[test]
fn integral_pairing_improves_as_eps_shrinks() {
    let (model, x0, _) = toy();
    let grid = [1e-2, 3.162_277_660_168_379_4e-3, 1e-3, 3.162_277_660_168_379_4e-4];
    let errs: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let cfg = CouplingConfig { eps, t_end: 1.0, members: 400, seed: seed_derive(32, "couple", k as u64) };
            couple_ensemble(&model, &uniform(), &sigma_of, &[x0], &cfg).unwrap().diagnostics(&model).unwrap().sup_err
        })
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn kyfan_shrinks_with_block_length_for_the_two_state_chain() {
    let driver = DriverSpec::two_state(0.25);
    let model = Model::new(SystemSpec::constant_product(vec![vec![1.0]], 2.0), &driver, 1).unwrap();
    let sigma = |_: &[f64]| Ok(DMatrix::from_element(1, 1, 3f64.sqrt()));
    let mut stats = Vec::new();
    for (steps, block) in [(43u64, 16u64), (256, 64), (1626, 256), (10_322, 1024)] {
        assert_eq!(block_partition(steps).unwrap().block, block);
        let cfg = CouplingConfig { eps: 1.0 / steps as f64, t_end: 1.0, members: 2000, seed: seed_derive(33, "couple", block) };
        let e = couple_ensemble(&model, &driver, &sigma, &[0.0], &cfg).unwrap();
        stats.push(pairwise_mean(&e.kyfan));
    }
    assert!(stats.windows(2).all(|w| w[1] < w[0]), "{stats:?}");
}
