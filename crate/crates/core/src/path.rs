//! Time-gridded vector paths and seed-indexed ensembles.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a path is read between grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// `X(t) = X([t/dt] dt)`, the convention for discrete slow motions.
    PiecewiseConstant,
    Linear,
}

/// Values in `R^d` on the uniform grid `t0 + k dt`, `k = 0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    t0: f64,
    dt: f64,
    dim: usize,
    values: Vec<f64>,
    interpolation: Interpolation,
}

impl Path {
    /// Build from a flat row-major buffer of `len * dim` values.
    pub fn new(t0: f64, dt: f64, dim: usize, values: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::argument(format!("grid step must be positive, got {dt}")));
        }
        if dim == 0 || values.len() % dim != 0 || values.is_empty() {
            return Err(Error::argument(format!(
                "path buffer of length {} is not a non-empty multiple of dimension {dim}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite path value at flat index {bad}")));
        }
        Ok(Path { t0, dt, dim, values, interpolation })
    }

    /// Evaluate `f(t)` at every node.
    pub fn from_fn(t0: f64, dt: f64, len: usize, dim: usize, interpolation: Interpolation, mut f: impl FnMut(f64, &mut [f64])) -> Result<Self> {
        let mut values = vec![0.0; len * dim];
        for (k, chunk) in values.chunks_mut(dim).enumerate() {
            f(t0 + k as f64 * dt, chunk);
        }
        Path::new(t0, dt, dim, values, interpolation)
    }

    pub fn zeros(t0: f64, dt: f64, len: usize, dim: usize, interpolation: Interpolation) -> Result<Self> {
        Path::new(t0, dt, dim, vec![0.0; len * dim], interpolation)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of grid nodes.
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn point_mut(&mut self, k: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.values[k * d..(k + 1) * d]
    }

    pub fn last(&self) -> &[f64] {
        self.point(self.len() - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    /// Scalar series of one coordinate.
    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.points().map(|p| p[k]).collect()
    }

    /// Value at an arbitrary time, honouring the interpolation tag and
    /// clamping outside the grid.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let s = ((t - self.t0) / self.dt).max(0.0);
        let last = self.len() - 1;
        // Nodes hit up to rounding are treated as exact.
        let snapped = s.round();
        let s = if (s - snapped).abs() < 1e-9 { snapped } else { s };
        let k = (s.floor() as usize).min(last);
        match self.interpolation {
            Interpolation::PiecewiseConstant => self.point(k).to_vec(),
            Interpolation::Linear => {
                if k == last {
                    return self.point(k).to_vec();
                }
                let w = s - k as f64;
                self.point(k)
                    .iter()
                    .zip(self.point(k + 1))
                    .map(|(a, b)| a + w * (b - a))
                    .collect()
            }
        }
    }

    pub fn same_grid(&self, other: &Path) -> bool {
        self.len() == other.len()
            && self.dim == other.dim
            && (self.t0 - other.t0).abs() <= 1e-12 * (1.0 + self.t0.abs())
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }

    pub fn ensure_same_grid(&self, other: &Path) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "(t0={}, dt={}, len={}, d={}) vs (t0={}, dt={}, len={}, d={})",
                self.t0,
                self.dt,
                self.len(),
                self.dim,
                other.t0,
                other.dt,
                other.len(),
                other.dim
            )))
        }
    }

    /// Pointwise `a * self + b * other` on a shared grid.
    pub fn combine(&self, a: f64, other: &Path, b: f64) -> Result<Path> {
        self.ensure_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Path::new(self.t0, self.dt, self.dim, values, self.interpolation)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Path> {
        Path::new(self.t0, self.dt, self.dim, self.values.iter().map(|&v| f(v)).collect(), self.interpolation)
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Path {
        self.interpolation = interpolation;
        self
    }

    /// Write the path as CSV with header `t,x1,...,xd`. An optional provenance
    /// line is emitted first as a `#` comment.
    pub fn write_csv<W: Write>(&self, mut out: W, provenance: Option<&str>) -> Result<()> {
        if let Some(p) = provenance {
            writeln!(out, "# {p}")?;
        }
        let mut header = String::from("t");
        for k in 1..=self.dim {
            header.push_str(&format!(",x{k}"));
        }
        writeln!(out, "{header}")?;
        for k in 0..self.len() {
            let mut line = format!("{}", self.time(k));
            for v in self.point(k) {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Parse CSV produced by [`Path::write_csv`]; `#` lines are skipped.
    pub fn read_csv(text: &str) -> Result<Path> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::argument("empty CSV"))?;
        let dim = header.split(',').count() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::argument(format!("row {row}: expected {} fields", dim + 1)));
            }
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::argument(format!("row {row}: {e}")));
            times.push(parse(fields[0])?);
            for f in &fields[1..] {
                values.push(parse(f)?);
            }
        }
        if times.len() < 2 {
            return Err(Error::argument("CSV needs at least two rows to recover the grid"));
        }
        let dt = times[1] - times[0];
        Path::new(times[0], dt, dim, values, Interpolation::PiecewiseConstant)
    }
}

/// Grid descriptor stored in ensemble manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub t0: f64,
    pub dt: f64,
    pub len: usize,
    pub dim: usize,
}

impl From<&Path> for GridInfo {
    fn from(p: &Path) -> Self {
        GridInfo { t0: p.t0, dt: p.dt, len: p.len(), dim: p.dim }
    }
}

/// Manifest written next to the member CSV files of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub config_digest: String,
    pub tool_version: String,
    pub seeds: Vec<u64>,
    pub grid: GridInfo,
    pub files: Vec<String>,
}

/// Paths sharing one grid, one distinct seed per member.
#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<Path>,
    seeds: Vec<u64>,
    config_digest: String,
}

impl Ensemble {
    pub fn new(members: Vec<Path>, seeds: Vec<u64>, config_digest: impl Into<String>) -> Result<Self> {
        if members.is_empty() || members.len() != seeds.len() {
            return Err(Error::argument("ensemble needs one seed per member and at least one member"));
        }
        for m in &members[1..] {
            members[0].ensure_same_grid(m)?;
        }
        let distinct: HashSet<u64> = seeds.iter().copied().collect();
        if distinct.len() != seeds.len() {
            return Err(Error::Invariant("ensemble seeds are not pairwise distinct".into()));
        }
        Ok(Ensemble { members, seeds, config_digest: config_digest.into() })
    }

    pub fn members(&self) -> &[Path] {
        &self.members
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    /// Write `<prefix>_<i>.csv` per member and `<prefix>_manifest.json`.
    pub fn write_dir(&self, dir: &FsPath, prefix: &str) -> Result<EnsembleManifest> {
        std::fs::create_dir_all(dir)?;
        let provenance = crate::harness::provenance_line(&self.config_digest);
        let mut files = Vec::with_capacity(self.members.len());
        for (i, m) in self.members.iter().enumerate() {
            let name = format!("{prefix}_{i:05}.csv");
            let file = std::io::BufWriter::new(std::fs::File::create(dir.join(&name))?);
            m.write_csv(file, Some(&provenance))?;
            files.push(name);
        }
        let manifest = EnsembleManifest {
            config_digest: self.config_digest.clone(),
            tool_version: crate::VERSION.to_string(),
            seeds: self.seeds.clone(),
            grid: GridInfo::from(&self.members[0]),
            files,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(dir.join(format!("{prefix}_manifest.json")), text + "\n")?;
        Ok(manifest)
    }
}
