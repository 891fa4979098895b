//! Seeded, schedule-independent random streams for Monte Carlo estimators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Samples per independent stream; fixed so results do not depend on the thread count.
pub const CHUNK: usize = 1024;

pub type Rng = ChaCha8Rng;

/// Counter-based stream: same `(seed, stream)` always yields the same sequence.
pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Evaluates `f` for `n` samples in fixed-size chunks, each chunk on its own stream.
/// Output order is the sample order regardless of how rayon schedules the chunks.
pub fn mc_map<T, F>(n: usize, seed: u64, tag: u32, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut Rng, usize) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, ((tag as u64) << 32) | c as u64);
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            (lo..hi).map(|i| f(&mut rng, i)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MeanErr {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanErr {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: 0.0, stderr: 0.0, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self { mean, stderr: (var / n as f64).sqrt(), n }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self { mean: self.mean * c, stderr: self.stderr * c.abs(), n: self.n }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn mc_map_is_deterministic_and_ordered() {
        let a = mc_map(3000, 7, 1, |r, i| (i, r.gen::<f64>()));
        let b = mc_map(3000, 7, 1, |r, i| (i, r.gen::<f64>()));
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(k, (i, _))| k == *i));
        let c = mc_map(3000, 8, 1, |r, _| r.gen::<f64>());
        assert_ne!(a[0].1, c[0]);
    }

    #[test]
    fn mean_err_of_constant() {
        let m = MeanErr::of(&[2.0; 10]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.stderr, 0.0);
    }
}
