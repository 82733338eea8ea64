use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::MIN_COUPLING_ENSEMBLE;
use crate::covariance::DEFAULT_K_TRUNC;
use crate::drivers::{DriverSpec, SuspensionSpec};
use crate::dynamics::SystemSpec;
use crate::error::{Error, Result};
use crate::lil::LIL_EPS_CEILING;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Covariance,
    Rates,
    Couple,
    Lil,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Covariance => "covariance",
            ExperimentKind::Rates => "rates",
            ExperimentKind::Couple => "couple",
            ExperimentKind::Lil => "lil",
        }
    }
}

fn default_moment() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSettings {
    #[serde(default = "CovarianceSettings::default_k_trunc")]
    pub k_trunc: usize,
    #[serde(default = "CovarianceSettings::default_samples")]
    pub samples: usize,
    /// Evaluation points; empty means `x0` only.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
}

impl CovarianceSettings {
    fn default_k_trunc() -> usize {
        DEFAULT_K_TRUNC
    }
    fn default_samples() -> usize {
        100_000
    }
}

impl Default for CovarianceSettings {
    fn default() -> Self {
        CovarianceSettings { k_trunc: DEFAULT_K_TRUNC, samples: Self::default_samples(), points: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LilSettings {
    #[serde(default = "LilSettings::default_k_samples")]
    pub k_samples: usize,
    #[serde(default = "LilSettings::default_hull_nodes")]
    pub hull_nodes: usize,
}

impl LilSettings {
    fn default_k_samples() -> usize {
        200
    }
    fn default_hull_nodes() -> usize {
        400
    }
}

impl Default for LilSettings {
    fn default() -> Self {
        LilSettings { k_samples: Self::default_k_samples(), hull_nodes: Self::default_hull_nodes() }
    }
}

/// One experiment. Exactly one of `driver` and `suspension` is given; a
/// suspension selects the continuous-time slow motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub system: SystemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<DriverSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suspension: Option<SuspensionSpec>,
    pub eps_grid: Vec<f64>,
    pub t_end: f64,
    pub x0: Vec<f64>,
    pub ensemble_size: usize,
    pub seed: u64,
    /// Moment exponent `M` of the `2M`-th moment in rate reports.
    #[serde(default = "default_moment")]
    pub moment: u32,
    /// Not part of the digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub covariance: CovarianceSettings,
    #[serde(default)]
    pub lil: LilSettings,
}

pub(super) fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { path, message } => Error::config(format!("{prefix}.{path}"), message),
        Error::Argument(m) | Error::Invariant(m) => Error::config(prefix, m),
        other => other,
    }
}

impl ExperimentConfig {
    /// Parse and validate; schema errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = &self.eps_grid;
        if grid.is_empty() || grid.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::config("eps_grid", "values must be positive and finite"));
        }
        if grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("eps_grid", "values must be strictly decreasing"));
        }
        if !(self.t_end.is_finite() && self.t_end >= grid[0]) {
            return Err(Error::config("t_end", "must be finite and at least the largest ε"));
        }
        if self.ensemble_size == 0 {
            return Err(Error::config("ensemble_size", "must be at least 1"));
        }
        if self.moment == 0 {
            return Err(Error::config("moment", "must be at least 1"));
        }
        self.system.validate().map_err(|e| prefixed("system", e))?;
        if self.x0.len() != self.system.dim || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("x0", format!("needs {} finite coordinates", self.system.dim)));
        }
        match (&self.driver, &self.suspension) {
            (Some(d), None) => d.validate().map_err(|e| prefixed("driver", e))?,
            (None, Some(s)) => {
                s.validate().map_err(|e| prefixed("suspension", e))?;
                if !matches!(self.kind, ExperimentKind::Simulate | ExperimentKind::Covariance) {
                    return Err(Error::config("suspension", format!("`{}` runs need a discrete driver", self.kind.name())));
                }
            }
            _ => return Err(Error::config("driver", "exactly one of `driver` and `suspension` is required")),
        }
        for (i, p) in self.covariance.points.iter().enumerate() {
            if p.len() != self.system.dim {
                return Err(Error::config(format!("covariance.points[{i}]"), "dimension differs from the system"));
            }
        }
        if self.covariance.samples == 0 {
            return Err(Error::config("covariance.samples", "must be at least 1"));
        }
        match self.kind {
            ExperimentKind::Rates if grid.len() < 3 => Err(Error::config("eps_grid", "a rate fit needs at least 3 values")),
            ExperimentKind::Couple if self.ensemble_size < MIN_COUPLING_ENSEMBLE => {
                Err(Error::config("ensemble_size", format!("coupling needs at least {MIN_COUPLING_ENSEMBLE} members")))
            }
            ExperimentKind::Lil if grid[0] >= LIL_EPS_CEILING => Err(Error::config("eps_grid", "LIL runs need ε < e^(−e)")),
            ExperimentKind::Lil if self.lil.hull_nodes < 2 => Err(Error::config("lil.hull_nodes", "must be at least 2")),
            _ => Ok(()),
        }
    }

    /// Lowercase hex SHA-256 of the canonical JSON (sorted keys) without `output_dir`.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let value = serde_json::to_value(&canonical).expect("config serializes");
        let text = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
