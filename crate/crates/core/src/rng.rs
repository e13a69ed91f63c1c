//! Seeded random streams.
//!
//! Every independent consumer (a Monte Carlo run, a probe seed) gets a ChaCha8
//! stream keyed by a master seed and selected by a stream index, so the data a
//! run sees never depends on how many runs exist or how they are scheduled.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic substream `index` of `master_seed`.
pub fn substream(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Standard normal variates by the polar Box–Muller method.
///
/// Each accepted pair yields two variates; the second is cached.
#[derive(Debug, Clone)]
pub struct GaussianStream<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> GaussianStream<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn next_std(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.rng.gen::<f64>() - 1.0;
            let v = 2.0 * self.rng.gen::<f64>() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let k = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * k);
                return u * k;
            }
        }
    }

    pub fn next_normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.next_std()
    }

    pub fn fill_std(&mut self, out: &mut [f64]) {
        for slot in out {
            *slot = self.next_std();
        }
    }

    pub fn inner_mut(&mut self) -> &mut R {
        &mut self.rng
    }
}

/// Gaussian stream on substream `index` of `master_seed`.
pub fn gaussian_substream(master_seed: u64, index: u64) -> GaussianStream<ChaCha8Rng> {
    GaussianStream::new(substream(master_seed, index))
}
