use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::green_kubo::{green_kubo, suspension_covariance, CovarianceEntry, DEFAULT_K_TRUNC};
use super::psd::{clip_psd, sqrt_psd};
use crate::drivers::{DriverSpec, SuspensionSpec};
use crate::dynamics::Model;
use crate::error::{Error, Result};

/// How `A(x)` is obtained.
#[derive(Debug, Clone)]
pub enum CovarianceSource {
    /// `A(x) = Σ(x) ς Σ(x)ᵀ` for product systems with known `ς`.
    ClosedForm,
    /// Green–Kubo series over a discrete driver.
    Discrete { driver: DriverSpec },
    /// Green–Kubo series over the block variables of a suspension.
    Suspension { suspension: SuspensionSpec },
}

/// `x ↦ (A(x), σ(x))` with a cache keyed by the exact bits of `x`.
///
/// Every evaluation point reuses the same seed, so estimates at nearby
/// points share their driver samples.
#[derive(Debug, Clone)]
pub struct CovarianceField {
    model: Model,
    source: CovarianceSource,
    k_trunc: usize,
    n_samples: usize,
    seed: u64,
    cache: BTreeMap<Vec<u64>, CovarianceEntry>,
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

impl CovarianceField {
    pub fn closed_form(model: Model) -> Result<Self> {
        if model.product_diffusion(&vec![0.0; model.dim()]).is_none() {
            return Err(Error::config("system", "closed-form diffusion needs a product system and a driver with known ς"));
        }
        Ok(Self::build(model, CovarianceSource::ClosedForm, DEFAULT_K_TRUNC, 0, 0))
    }

    pub fn green_kubo(model: Model, driver: DriverSpec, k_trunc: usize, n_samples: usize, seed: u64) -> Self {
        Self::build(model, CovarianceSource::Discrete { driver }, k_trunc, n_samples, seed)
    }

    pub fn suspension(model: Model, suspension: SuspensionSpec, k_trunc: usize, n_samples: usize, seed: u64) -> Self {
        Self::build(model, CovarianceSource::Suspension { suspension }, k_trunc, n_samples, seed)
    }

    fn build(model: Model, source: CovarianceSource, k_trunc: usize, n_samples: usize, seed: u64) -> Self {
        CovarianceField { model, source, k_trunc, n_samples, seed, cache: BTreeMap::new() }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn k_trunc(&self) -> usize {
        self.k_trunc
    }

    fn compute(&self, x: &[f64]) -> Result<CovarianceEntry> {
        match &self.source {
            CovarianceSource::ClosedForm => {
                let exact = self.model.product_diffusion(x).expect("checked at construction");
                let (a, min_eigenvalue) = clip_psd(&exact)?;
                let d = a.nrows();
                let max_eig = a.symmetric_eigenvalues().iter().copied().fold(0.0, f64::max);
                let min_eig = a.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
                Ok(CovarianceEntry {
                    x: x.to_vec(),
                    sigma: sqrt_psd(&a)?,
                    raw: exact,
                    stderr: DMatrix::zeros(d, d),
                    k_trunc: 0,
                    samples: 0,
                    tail_estimate: 0.0,
                    decay_ratio: 0.0,
                    min_eigenvalue,
                    tail_warning: false,
                    degenerate: min_eig <= 1e-12 * max_eig,
                    a,
                })
            }
            CovarianceSource::Discrete { driver } => {
                green_kubo(&self.model, driver, x, self.k_trunc, self.n_samples, self.seed)
            }
            CovarianceSource::Suspension { suspension } => {
                suspension_covariance(&self.model, suspension, x, self.k_trunc, self.n_samples, self.seed)
            }
        }
    }

    /// Evaluate (or fetch) the entry at `x`.
    pub fn entry(&mut self, x: &[f64]) -> Result<&CovarianceEntry> {
        let k = key(x);
        if !self.cache.contains_key(&k) {
            let e = self.compute(x)?;
            self.cache.insert(k.clone(), e);
        }
        Ok(&self.cache[&k])
    }

    /// Evaluate every point of `xs` in parallel and cache the results.
    pub fn fill(&mut self, xs: &[Vec<f64>]) -> Result<()> {
        let missing: Vec<&Vec<f64>> = xs.iter().filter(|x| !self.cache.contains_key(&key(x))).collect();
        let this = &*self;
        let computed: Vec<Result<CovarianceEntry>> = missing.par_iter().map(|x| this.compute(x)).collect();
        for e in computed {
            let e = e?;
            self.cache.insert(key(&e.x), e);
        }
        Ok(())
    }

    pub fn a(&mut self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.entry(x)?.a.clone())
    }

    pub fn sigma(&mut self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.entry(x)?.sigma.clone())
    }

    /// End the single-writer phase; the frozen cache is shareable across threads.
    pub fn freeze(self) -> FrozenCovarianceField {
        FrozenCovarianceField { cache: self.cache, k_trunc: self.k_trunc }
    }
}

/// Read-only cache of a covariance field.
#[derive(Debug, Clone)]
pub struct FrozenCovarianceField {
    cache: BTreeMap<Vec<u64>, CovarianceEntry>,
    k_trunc: usize,
}

impl FrozenCovarianceField {
    pub fn get(&self, x: &[f64]) -> Option<&CovarianceEntry> {
        self.cache.get(&key(x))
    }

    pub fn entries(&self) -> impl Iterator<Item = &CovarianceEntry> {
        self.cache.values()
    }

    pub fn k_trunc(&self) -> usize {
        self.k_trunc
    }

    /// Rows `x..., i, j, A_ij, stderr, K_trunc, tail_estimate` for every
    /// cached point, in key order, after an optional `# ` provenance line.
    pub fn write_csv<W: Write>(&self, out: W, provenance: Option<&str>) -> Result<()> {
        write_entries_csv(self.cache.values(), out, provenance)
    }
}

pub fn write_entries_csv<'a, W: Write>(
    entries: impl IntoIterator<Item = &'a CovarianceEntry>,
    mut out: W,
    provenance: Option<&str>,
) -> Result<()> {
    if let Some(p) = provenance {
        writeln!(out, "# {p}")?;
    }
    let mut header_done = false;
    for e in entries {
        if !header_done {
            let xs: Vec<String> = (1..=e.x.len()).map(|i| format!("x{i}")).collect();
            writeln!(out, "{},i,j,A_ij,stderr,K_trunc,tail_estimate", xs.join(","))?;
            header_done = true;
        }
        let xs: Vec<String> = e.x.iter().map(|v| format!("{v}")).collect();
        for i in 0..e.a.nrows() {
            for j in 0..e.a.ncols() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    xs.join(","),
                    i + 1,
                    j + 1,
                    e.a[(i, j)],
                    e.stderr[(i, j)],
                    e.k_trunc,
                    e.tail_estimate
                )?;
            }
        }
    }
    Ok(())
}
