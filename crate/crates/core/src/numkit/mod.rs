//! Minimal dense linear algebra and seeded randomness.
//!
//! Everything here is plain `f64` with fixed, index-ascending reduction
//! order so that results are bit-reproducible across runs and thread
//! counts. No BLAS, no SIMD: the problem sizes in this crate are desk
//! scale and predictability beats throughput.

mod matrix;
mod rng;
mod svd;

pub use matrix::Matrix;
pub use rng::RngStream;
pub use svd::{project_rowspace, Svd};

use thiserror::Error;

/// Relative rank cutoff: singular values below `DEFAULT_RANK_TOL` times the
/// largest singular value are treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("dimension mismatch: {context} (left {left_rows}x{left_cols}, right {right_rows}x{right_cols})")]
    DimMismatch {
        context: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

/// Compensated (Neumaier) summation over a slice, left to right.
///
/// Deterministic and accurate enough that downstream exact-identity checks
/// (law of total variance, trace identities) hold to 1e-10 even on
/// million-term reductions.
pub fn neumaier_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean of a slice via compensated summation. Empty input yields 0.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    neumaier_sum(values) / values.len() as f64
}

/// Streaming compensated accumulator for reductions that cannot
/// materialize a slice.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanAcc {
    sum: f64,
    comp: f64,
    count: usize,
}

impl KahanAcc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.total() / self.count as f64
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_cancellation() {
        // 1 + 1e100 + 1 - 1e100 = 2 exactly under compensation.
        let vals = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(neumaier_sum(&vals), 2.0);
    }

    #[test]
    fn kahan_matches_slice_sum() {
        let vals: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let mut acc = KahanAcc::new();
        for &v in &vals {
            acc.add(v);
        }
        assert!((acc.total() - neumaier_sum(&vals)).abs() < 1e-12);
        assert_eq!(acc.count(), 1000);
    }

    #[test]
    fn mean_of_empty_is_zero() {
        assert_eq!(mean(&[]), 0.0);
    }
}
