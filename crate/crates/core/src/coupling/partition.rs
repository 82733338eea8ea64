use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest `r` with `r⁴ ≤ v`.
fn floor_fourth_root(v: u128) -> u128 {
    let mut r = (v as f64).powf(0.25) as u128;
    while r.pow(4) > v {
        r -= 1;
    }
    while (r + 1).pow(4) <= v {
        r += 1;
    }
    r
}

/// Big blocks `[q_{k−1}, r_k)` of length `[N^{3/4}]` separated by gaps
/// `[r_k, q_k)` of length `[N^{1/4}]`, `k = 1..=ν`, followed by `[q_ν, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockPartition {
    pub n: u64,
    pub block: u64,
    pub gap: u64,
    pub nu: u64,
}

pub fn block_partition(n: u64) -> Result<BlockPartition> {
    if n < 16 {
        return Err(Error::argument(format!("block partition needs N ≥ 16, got {n}")));
    }
    let block = floor_fourth_root((n as u128).pow(3)) as u64;
    let gap = floor_fourth_root(n as u128) as u64;
    Ok(BlockPartition { n, block, gap, nu: n / (block + gap) })
}

impl BlockPartition {
    /// `q_k = k(block + gap)`.
    pub fn q(&self, k: u64) -> u64 {
        k * (self.block + self.gap)
    }

    /// `r_k = q_{k−1} + block`, for `k ≥ 1`.
    pub fn r(&self, k: u64) -> u64 {
        self.q(k - 1) + self.block
    }

    /// Step range of block `k ∈ 1..=ν`.
    pub fn block_range(&self, k: u64) -> Range<usize> {
        self.q(k - 1) as usize..self.r(k) as usize
    }

    pub fn gap_range(&self, k: u64) -> Range<usize> {
        self.r(k) as usize..self.q(k) as usize
    }

    pub fn remainder(&self) -> Range<usize> {
        self.q(self.nu) as usize..self.n as usize
    }

    /// Block index (1-based) containing step `j`, if any.
    pub fn block_of(&self, j: u64) -> Option<u64> {
        let k = j / (self.block + self.gap) + 1;
        (k <= self.nu && j < self.r(k)).then_some(k)
    }
}
