//! Counter-based random streams keyed by `(master_seed, scene_index, purpose)`.
//!
//! Each stream is a ChaCha8 generator whose 256-bit key is the SHA-256 digest of
//! its identity, so a stream's output depends only on its id and on how many
//! values it has produced itself. No state is shared between streams, which
//! makes scene generation independent of thread schedule.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// Identity of a random stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub master_seed: u64,
    pub scene_index: u64,
    pub purpose: String,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    id: StreamId,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, scene_index: u64, purpose: impl Into<String>) -> Self {
        let id = StreamId { master_seed, scene_index, purpose: purpose.into() };
        let mut hasher = Sha256::new();
        hasher.update(b"defectforge/stream/v1");
        hasher.update(id.master_seed.to_le_bytes());
        hasher.update(id.scene_index.to_le_bytes());
        hasher.update((id.purpose.len() as u64).to_le_bytes());
        hasher.update(id.purpose.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        Self { id, rng: ChaCha8Rng::from_seed(key) }
    }

    pub fn id(&self) -> &StreamId {
        &self.id
    }

    /// Child stream with a purpose nested under this one, e.g. `"parts"` → `"parts/3"`.
    pub fn child(&self, sub: impl std::fmt::Display) -> RngStream {
        RngStream::new(self.id.master_seed, self.id.scene_index, format!("{}/{}", self.id.purpose, sub))
    }

    /// Cheap sub-stream sharing this stream's key but using ChaCha stream number
    /// `index`, positioned at the start. Used for per-pixel sampling.
    pub fn lane(&self, index: u64) -> RngStream {
        let mut rng = self.rng.clone();
        rng.set_stream(index);
        rng.set_word_pos(0);
        RngStream { id: self.id.clone(), rng }
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in `[lo, hi]`; returns `lo` exactly when the range is degenerate.
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            // still consume a draw so downstream sequences do not depend on range width
            let _ = self.uniform();
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() on empty range");
        self.rng.random_range(0..n)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_in(&mut self, lo: i64, hi: i64) -> i64 {
        if hi <= lo {
            let _ = self.uniform();
            return lo;
        }
        self.rng.random_range(lo..=hi)
    }

    pub fn normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        mean + std_dev * z
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
