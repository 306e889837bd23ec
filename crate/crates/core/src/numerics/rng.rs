//! Named, seedable random streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is the SHA-256 digest
//! of `"fedmdcg-stream/v1"`, the stream name, the 64-bit seed and any extra
//! 64-bit keys (client id, round, ...), all integers little-endian. ChaCha8 is
//! a counter-based generator with a fixed, platform-independent output
//! sequence, so identical `(name, seed, keys)` triples replay identical draws.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use sha2::{Digest, Sha256};

use super::Tensor;

#[derive(Clone, Debug)]
pub struct RngStream {
    name: String,
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(name: &str, seed: u64) -> Self {
        Self::keyed(name, seed, &[])
    }

    pub fn keyed(name: &str, seed: u64, keys: &[u64]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"fedmdcg-stream/v1");
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update(seed.to_le_bytes());
        for k in keys {
            hasher.update(k.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        RngStream {
            name: name.to_string(),
            seed,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal_tensor(&mut self, shape: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = self.normal();
        }
        t
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = self.uniform_range(lo, hi);
        }
        t
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    /// Gamma(shape, 1) draw.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        Gamma::new(shape, 1.0)
            .expect("gamma shape must be positive")
            .sample(&mut self.rng)
    }

    /// Draw from a categorical distribution by inverse CDF.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
                acc += p;
                if u < acc {
                    return i;
                }
            }
        }
        last_positive
    }

    /// `k` indices from `0..n`: without replacement when `k <= n`, otherwise
    /// every index once plus `k - n` draws with replacement.
    pub fn batch_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        if k <= n {
            rand::seq::index::sample(&mut self.rng, n, k).into_vec()
        } else {
            let mut out: Vec<usize> = (0..n).collect();
            self.shuffle(&mut out);
            for _ in n..k {
                out.push(self.below(n));
            }
            out
        }
    }
}
