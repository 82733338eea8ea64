use std::collections::BTreeMap;
use std::fs;
use std::path::{Path as FsPath, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::config::ExperimentConfig;
use super::run::run;
use crate::error::{Error, Result};

fn iid_uniform() -> Value {
    json!({"kind": "iid", "observable": {"form": "coordinate", "dim": 1},
           "params": {"distribution": {"law": "uniform", "low": [-1.0], "high": [1.0]}}, "bound": 1.0})
}

fn affine_toy() -> Value {
    json!({"dim": 1, "form": {"form": "product", "sigma": {"form": "affine", "base": [[1.0]], "slopes": [[[0.5]]]}},
           "c2_bound": 2.0, "averaged": {"mode": "closed-form"}})
}

fn suspended_toy() -> Value {
    let mut v = affine_toy();
    v["averaged"] = json!({"mode": "monte-carlo", "samples": 4000});
    v
}

/// Small configurations covering every experiment kind, seeded from `seed`.
pub fn selftest_suite(seed: u64) -> Vec<(String, ExperimentConfig)> {
    let two_state = json!({"kind": "markov-chain", "observable": {"form": "cell-indicator", "values": [[-1.0], [1.0]], "dim": 1},
                           "params": {"transition": [[0.75, 0.25], [0.25, 0.75]]}, "bound": 1.0});
    let sine = json!({"dim": 1, "form": {"form": "sine-forcing", "damping": 1.0, "amplitude": 0.5},
                      "c2_bound": 2.0, "averaged": {"mode": "monte-carlo", "samples": 4000}});
    let configs = [
        ("simulate", json!({"kind": "simulate", "system": affine_toy(), "driver": iid_uniform(),
            "eps_grid": [0.01, 0.005], "t_end": 1.0, "x0": [0.2], "ensemble_size": 6, "seed": seed})),
        ("simulate-suspension", json!({"kind": "simulate", "system": suspended_toy(),
            "suspension": {"base": two_state, "l_bar": 2.0,
                "roof": {"form": "affine", "offset": 1.25, "scale": 0.75, "observable": {"form": "cell-indicator", "values": [[-1.0], [1.0]], "dim": 1}}},
            "eps_grid": [0.02], "t_end": 1.0, "x0": [0.2], "ensemble_size": 4, "seed": seed})),
        ("covariance", json!({"kind": "covariance", "system": sine, "driver": two_state,
            "eps_grid": [0.01], "t_end": 1.0, "x0": [0.0], "ensemble_size": 1, "seed": seed,
            "covariance": {"k_trunc": 16, "samples": 20000, "points": [[0.0], [0.5]]}})),
        ("rates", json!({"kind": "rates", "system": affine_toy(), "driver": iid_uniform(),
            "eps_grid": [0.01, 0.003, 0.001], "t_end": 1.0, "x0": [0.2], "ensemble_size": 16, "seed": seed})),
        ("couple", json!({"kind": "couple", "system": affine_toy(), "driver": iid_uniform(),
            "eps_grid": [0.01, 0.005], "t_end": 1.0, "x0": [0.2], "ensemble_size": 64, "seed": seed})),
        ("lil", json!({"kind": "lil", "system": affine_toy(), "driver": iid_uniform(),
            "eps_grid": [0.01, 0.001], "t_end": 1.0, "x0": [0.0], "ensemble_size": 2, "seed": seed,
            "lil": {"k_samples": 40, "hull_nodes": 100}})),
    ];
    configs
        .into_iter()
        .map(|(name, v)| (name.to_string(), ExperimentConfig::from_json(&v.to_string()).expect("built-in selftest config is valid")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub tool_version: String,
    pub seed: u64,
    pub threads: [usize; 2],
    pub files_compared: usize,
    pub mismatches: Vec<String>,
    pub digests: BTreeMap<String, String>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.files_compared > 0
    }
}

fn run_suite(suite: &[(String, ExperimentConfig)], root: &FsPath, threads: usize) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for (name, cfg) in suite {
        let outcome = run(cfg, &root.join(name), Some(threads))?;
        files.extend(outcome.files.into_iter().map(|f| PathBuf::from(name).join(f)));
    }
    Ok(files)
}

/// Run the suite twice, single-threaded and with `threads` workers, into
/// `out/run_a` and `out/run_b`, then compare every artifact byte for byte.
pub fn selftest(out: &FsPath, seed: u64, threads: Option<usize>) -> Result<SelftestReport> {
    let suite = selftest_suite(seed);
    let wide = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(2, |n| n.get())).max(2);
    let (a, b) = (out.join("run_a"), out.join("run_b"));
    for dir in [&a, &b] {
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
    }
    let files_a = run_suite(&suite, &a, 1)?;
    let files_b = run_suite(&suite, &b, wide)?;
    let mut mismatches = Vec::new();
    if files_a != files_b {
        mismatches.push("artifact lists differ".to_string());
    }
    for f in &files_a {
        if fs::read(a.join(f))? != fs::read(b.join(f))? {
            mismatches.push(f.display().to_string());
        }
    }
    let report = SelftestReport {
        tool_version: crate::VERSION.to_string(),
        seed,
        threads: [1, wide],
        files_compared: files_a.len(),
        mismatches,
        digests: suite.iter().map(|(n, c)| (n.clone(), c.digest())).collect(),
    };
    fs::write(out.join("selftest.json"), serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n")?;
    Ok(report)
}
