use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};
use std::sync::Mutex;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{prefixed, ExperimentConfig, ExperimentKind};
use crate::coupling::{couple_ensemble, write_diagnostics_csv, CouplingConfig};
use crate::covariance::{write_entries_csv, CovarianceField};
use crate::drivers::{make_orbit, suspension_trajectory, DriverSpec};
use crate::dynamics::{averaged_path, slow_continuous, slow_discrete, Model};
use crate::error::{Error, Result};
use crate::lil::{lil_run, LilConfig, LilReport};
use crate::metrics::{moment_sup_error, rate_fit, MomentEstimate, RateReport};
use crate::path::{Ensemble, Interpolation, Path};
use crate::seed::seed_derive;

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "FASTSLOW_OUT";
pub const DEFAULT_OUTPUT_DIR: &str = "fastslow-out";

/// First line of every CSV artifact, after `# `.
pub fn provenance_line(digest: &str) -> String {
    format!("fastslow {} config={digest}", crate::VERSION)
}

/// Files written by one run, relative to its output directory, in write order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub digest: String,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    tool_version: &'a str,
    config_digest: &'a str,
    kind: &'a str,
    #[serde(flatten)]
    body: T,
}

struct Writer<'a> {
    root: &'a FsPath,
    digest: String,
    kind: &'static str,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn csv(&mut self, rel: &str, f: impl FnOnce(&mut BufWriter<File>, &str) -> Result<()>) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(&path)?);
        f(&mut out, &provenance_line(&self.digest))?;
        out.flush()?;
        self.files.push(rel.into());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, body: T) -> Result<()> {
        let stamped = Stamped { tool_version: crate::VERSION, config_digest: &self.digest, kind: self.kind, body };
        fs::create_dir_all(self.root)?;
        fs::write(self.root.join(rel), serde_json::to_string_pretty(&stamped)? + "\n")?;
        self.files.push(rel.into());
        Ok(())
    }
}

fn model_for(cfg: &ExperimentConfig) -> Result<Model> {
    let seed = seed_derive(cfg.seed, "model", 0);
    match (&cfg.driver, &cfg.suspension) {
        (Some(d), _) => Model::new(cfg.system.clone(), d, seed),
        (None, Some(s)) => Model::for_suspension(cfg.system.clone(), s, seed),
        (None, None) => Err(Error::config("driver", "missing")),
    }
}

fn driver(cfg: &ExperimentConfig) -> Result<&DriverSpec> {
    cfg.driver.as_ref().ok_or_else(|| Error::config("driver", "this experiment needs a discrete driver"))
}

/// Member `i` of the slow-motion ensemble at `eps`.
fn slow_member(cfg: &ExperimentConfig, model: &Model, eps: f64, i: usize) -> Result<Path> {
    let seed = seed_derive(cfg.seed, "driver", i as u64);
    match (&cfg.driver, &cfg.suspension) {
        (Some(d), _) => slow_discrete(model, &mut make_orbit(d, seed)?, eps, &cfg.x0, cfg.t_end),
        (None, Some(s)) => {
            let traj = suspension_trajectory(s, seed, cfg.t_end / eps + 1.0)?;
            slow_continuous(model, &traj, eps, &cfg.x0, cfg.t_end, None)
        }
        (None, None) => Err(Error::config("driver", "missing")),
    }
}

fn member_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.ensemble_size as u64).map(|i| seed_derive(cfg.seed, "driver", i)).collect()
}

fn sigma_field(cfg: &ExperimentConfig, model: &Model) -> Result<CovarianceField> {
    let c = &cfg.covariance;
    let seed = seed_derive(cfg.seed, "covariance", 0);
    if model.product_diffusion(&cfg.x0).is_some() {
        return CovarianceField::closed_form(model.clone());
    }
    Ok(match (&cfg.driver, &cfg.suspension) {
        (Some(d), _) => CovarianceField::green_kubo(model.clone(), d.clone(), c.k_trunc, c.samples, seed),
        (None, Some(s)) => CovarianceField::suspension(model.clone(), s.clone(), c.k_trunc, c.samples, seed),
        (None, None) => return Err(Error::config("driver", "missing")),
    })
}

#[derive(Serialize)]
struct SimulateSummary {
    eps_grid: Vec<f64>,
    members: usize,
    directories: Vec<String>,
}

fn simulate(cfg: &ExperimentConfig, model: &Model, w: &mut Writer) -> Result<()> {
    let mut dirs = Vec::new();
    for (k, &eps) in cfg.eps_grid.iter().enumerate() {
        let members = (0..cfg.ensemble_size).into_par_iter().map(|i| slow_member(cfg, model, eps, i)).collect::<Result<Vec<_>>>()?;
        let dir = format!("simulate/eps_{k:02}");
        let manifest = Ensemble::new(members, member_seeds(cfg), w.digest.clone())?.write_dir(&w.root.join(&dir), "member")?;
        w.files.extend(manifest.files.iter().map(|f| PathBuf::from(&dir).join(f)));
        w.files.push(PathBuf::from(&dir).join("member_manifest.json"));
        let bar = averaged_path(model, &cfg.x0, cfg.t_end, eps)?;
        w.csv(&format!("{dir}/averaged.csv"), |out, p| bar.write_csv(out, Some(p)))?;
        dirs.push(dir);
    }
    w.json("simulate.json", SimulateSummary { eps_grid: cfg.eps_grid.clone(), members: cfg.ensemble_size, directories: dirs })
}

fn covariance(cfg: &ExperimentConfig, model: &Model, w: &mut Writer) -> Result<()> {
    let mut field = sigma_field(cfg, model)?;
    let points = if cfg.covariance.points.is_empty() { vec![cfg.x0.clone()] } else { cfg.covariance.points.clone() };
    field.fill(&points)?;
    let entries = points.iter().map(|p| field.entry(p).cloned()).collect::<Result<Vec<_>>>()?;
    w.csv("covariance.csv", |out, p| write_entries_csv(&entries, out, Some(p)))
}

#[derive(Serialize)]
struct RatesSummary {
    moment: u32,
    #[serde(flatten)]
    report: RateReport,
    estimates: Vec<MomentEstimate>,
}

fn rates(cfg: &ExperimentConfig, model: &Model, w: &mut Writer) -> Result<()> {
    let exponent = 2 * cfg.moment;
    let estimates = cfg
        .eps_grid
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let bar = averaged_path(model, &cfg.x0, cfg.t_end, eps)?.with_interpolation(Interpolation::PiecewiseConstant);
            let pairs = (0..cfg.ensemble_size)
                .into_par_iter()
                .map(|i| Ok((slow_member(cfg, model, eps, i)?, bar.clone())))
                .collect::<Result<Vec<_>>>()?;
            moment_sup_error(&pairs, exponent, seed_derive(cfg.seed, "bootstrap", k as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = rate_fit(&cfg.eps_grid, &estimates.iter().map(|e| e.mean).collect::<Vec<_>>())?;
    w.json("rates.json", RatesSummary { moment: cfg.moment, report, estimates })
}

#[derive(Serialize)]
struct CoupleSummary {
    kyfan: Vec<f64>,
    limit_err_rate: Option<RateReport>,
}

fn couple(cfg: &ExperimentConfig, model: &Model, w: &mut Writer) -> Result<()> {
    let field = Mutex::new(sigma_field(cfg, model)?);
    let sigma = |x: &[f64]| -> Result<DMatrix<f64>> { field.lock().expect("covariance cache").sigma(x) };
    let d = driver(cfg)?;
    let mut rows = Vec::new();
    for (k, &eps) in cfg.eps_grid.iter().enumerate() {
        let cc = CouplingConfig { eps, t_end: cfg.t_end, members: cfg.ensemble_size, seed: seed_derive(cfg.seed, "couple", k as u64) };
        rows.push(couple_ensemble(model, d, &sigma, &cfg.x0, &cc)?.diagnostics(model)?);
    }
    w.csv("couple_diagnostics.csv", |out, p| write_diagnostics_csv(out, &rows, Some(p)))?;
    let lim: Vec<f64> = rows.iter().map(|r| r.l2_err).collect();
    let limit_err_rate = if rows.len() >= 3 && lim.iter().all(|s| *s > 0.0) { Some(rate_fit(&cfg.eps_grid, &lim)?) } else { None };
    w.json("couple.json", CoupleSummary { kyfan: rows.iter().map(|r| r.kyfan).collect(), limit_err_rate })
}

fn lil(cfg: &ExperimentConfig, model: &Model, w: &mut Writer) -> Result<()> {
    let lc = LilConfig {
        x0: cfg.x0.clone(),
        t_end: cfg.t_end,
        eps_grid: cfg.eps_grid.clone(),
        seeds: (0..cfg.ensemble_size as u64).map(|i| seed_derive(cfg.seed, "lil", i)).collect(),
        k_samples: cfg.lil.k_samples,
        hull_nodes: cfg.lil.hull_nodes,
        sample_seed: seed_derive(cfg.seed, "lil-k", 0),
    };
    let report: LilReport = lil_run(model, driver(cfg)?, &lc)?;
    w.json("lil.json", report)
}

/// Run one experiment into `out`. `threads` sizes a private worker pool; the
/// artifacts do not depend on it.
pub fn run(cfg: &ExperimentConfig, out: &FsPath, threads: Option<usize>) -> Result<RunOutcome> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::argument(format!("thread pool: {e}")))?;
    pool.install(|| {
        fs::create_dir_all(out)?;
        let model = model_for(cfg).map_err(|e| prefixed("system", e))?;
        let mut w = Writer { root: out, digest: cfg.digest(), kind: cfg.kind.name(), files: Vec::new() };
        match cfg.kind {
            ExperimentKind::Simulate => simulate(cfg, &model, &mut w)?,
            ExperimentKind::Covariance => covariance(cfg, &model, &mut w)?,
            ExperimentKind::Rates => rates(cfg, &model, &mut w)?,
            ExperimentKind::Couple => couple(cfg, &model, &mut w)?,
            ExperimentKind::Lil => lil(cfg, &model, &mut w)?,
        }
        Ok(RunOutcome { digest: w.digest, files: w.files })
    })
}

/// `--out`, then the environment variable, then the config, then the default.
pub fn resolve_output_dir(flag: Option<&FsPath>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.and_then(|c| c.output_dir.clone()).map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR), PathBuf::from)
}
