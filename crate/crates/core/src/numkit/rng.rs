use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::NumError;

/// A named, reproducible random stream.
///
/// The generator is keyed by `(master_seed, label)`: the same pair always
/// replays the same sequence, and distinct labels behave as independent
/// streams. Labels are hierarchical by convention (`"data/s3"`,
/// `"init/o7"`); `derive` appends a path segment.
///
/// A stream is single-owner: sampling mutates internal state, so never
/// share one mid-sequence between tasks. Fork with `derive` instead.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    label: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, label: &str) -> Self {
        let rng = ChaCha8Rng::from_seed(stream_key(master_seed, label));
        Self {
            master_seed,
            label: label.to_string(),
            rng,
        }
    }

    /// Fresh stream whose label extends this one with `/suffix`.
    /// Independent of how much of `self` has been consumed.
    pub fn derive(&self, suffix: &str) -> Self {
        Self::new(self.master_seed, &format!("{}/{}", self.label, suffix))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `n` i.i.d. normal samples with the given mean and variance.
    /// Variance zero degenerates to a constant stream of `mean`.
    pub fn gaussian(&mut self, n: usize, mean: f64, variance: f64) -> Result<Vec<f64>, NumError> {
        if !variance.is_finite() || variance < 0.0 {
            return Err(NumError::InvalidArg(format!(
                "variance must be non-negative, got {variance}"
            )));
        }
        if variance == 0.0 {
            return Ok(vec![mean; n]);
        }
        let normal = Normal::new(mean, variance.sqrt())
            .map_err(|e| NumError::InvalidArg(format!("normal distribution: {e}")))?;
        Ok((0..n).map(|_| normal.sample(&mut self.rng)).collect())
    }

    /// `n` i.i.d. uniform samples on `[lo, hi)`.
    pub fn uniform(&mut self, n: usize, lo: f64, hi: f64) -> Result<Vec<f64>, NumError> {
        if !(lo < hi) {
            return Err(NumError::InvalidArg(format!(
                "uniform bounds must satisfy lo < hi, got [{lo}, {hi})"
            )));
        }
        Ok((0..n).map(|_| self.rng.random_range(lo..hi)).collect())
    }

    /// Uniform index in `0..bound`.
    pub fn next_index(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        self.rng.random_range(0..bound)
    }

    /// `amount` distinct indices drawn from `0..population`, in draw order.
    pub fn sample_indices(&mut self, population: usize, amount: usize) -> Vec<usize> {
        debug_assert!(amount <= population);
        rand::seq::index::sample(&mut self.rng, population, amount).into_vec()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}

/// Expand `(master_seed, label)` into a 256-bit ChaCha key. FNV-1a folds
/// the label into the seed, then splitmix64 fills the key words.
fn stream_key(master_seed: u64, label: &str) -> [u8; 32] {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut state = master_seed ^ h.rotate_left(17);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    key
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_is_identical() {
        let mut a = RngStream::new(42, "data/s3");
        let mut b = RngStream::new(42, "data/s3");
        assert_eq!(
            a.gaussian(64, 0.0, 1.0).unwrap(),
            b.gaussian(64, 0.0, 1.0).unwrap()
        );
        assert_eq!(
            a.uniform(64, -1.0, 1.0).unwrap(),
            b.uniform(64, -1.0, 1.0).unwrap()
        );
    }

    #[test]
    fn distinct_labels_are_uncorrelated() {
        let n = 10_000;
        let mut a = RngStream::new(7, "init/o1");
        let mut b = RngStream::new(7, "init/o2");
        let xs = a.gaussian(n, 0.0, 1.0).unwrap();
        let ys = b.gaussian(n, 0.0, 1.0).unwrap();
        let mx: f64 = xs.iter().sum::<f64>() / n as f64;
        let my: f64 = ys.iter().sum::<f64>() / n as f64;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for i in 0..n {
            cov += (xs[i] - mx) * (ys[i] - my);
            vx += (xs[i] - mx).powi(2);
            vy += (ys[i] - my).powi(2);
        }
        let corr = cov / (vx.sqrt() * vy.sqrt());
        assert!(corr.abs() < 0.05, "correlation {corr}");
    }

    #[test]
    fn gaussian_moments() {
        let n = 100_000;
        let mut stream = RngStream::new(1, "moments");
        let xs = stream.gaussian(n, 0.0, 1.0).unwrap();
        let mean: f64 = xs.iter().sum::<f64>() / n as f64;
        let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "sample mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "sample variance {var}");
    }

    #[test]
    fn zero_variance_is_constant() {
        let mut stream = RngStream::new(3, "degenerate");
        let xs = stream.gaussian(10, 2.5, 0.0).unwrap();
        assert!(xs.iter().all(|&x| x == 2.5));
    }

    #[test]
    fn negative_variance_is_rejected() {
        let mut stream = RngStream::new(3, "bad");
        assert!(stream.gaussian(1, 0.0, -1e-9).is_err());
    }

    #[test]
    fn derive_extends_label() {
        let root = RngStream::new(9, "sweep");
        let child = root.derive("w5");
        assert_eq!(child.label(), "sweep/w5");
        assert_eq!(child.master_seed(), 9);
        // Derived stream matches a directly constructed one.
        let mut direct = RngStream::new(9, "sweep/w5");
        let mut derived = root.derive("w5");
        assert_eq!(
            direct.gaussian(8, 0.0, 1.0).unwrap(),
            derived.gaussian(8, 0.0, 1.0).unwrap()
        );
    }

    #[test]
    fn sample_indices_are_distinct() {
        let mut stream = RngStream::new(5, "subsample");
        let idx = stream.sample_indices(100, 40);
        let mut seen = idx.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 40);
    }
}
