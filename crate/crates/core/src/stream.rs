//! Reproducible random streams.
//!
//! A [`RandomStream`] is a `(seed, stream-id)` pair backed by ChaCha8. Equal
//! pairs always reproduce the same draws; distinct stream ids select
//! independent ChaCha streams under the same key.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator behind every [`RandomStream`].
pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomStream {
    pub const fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Stream `stream + offset` under the same seed. Replicate `r` of an
    /// experiment uses `base.offset(r)`.
    pub fn offset(&self, offset: u64) -> Self {
        Self::new(self.seed, self.stream.wrapping_add(offset))
    }

    /// Hierarchical derivation: a new key mixed from `(seed, stream, tag)`.
    ///
    /// Unlike [`offset`](Self::offset), children of neighbouring streams never
    /// collide, so nested loops (replicate -> time step) can use
    /// `base.offset(r).child(k)` safely.
    pub fn child(&self, tag: u64) -> Self {
        let key = splitmix64(self.seed ^ splitmix64(self.stream ^ splitmix64(tag)));
        Self::new(key, 0)
    }

    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// One uniform on `(0, 1]`, obtained as `1 - u` for `u` on `[0, 1)`.
#[inline]
pub fn open_closed_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// `count` i.i.d. uniforms on `(0, 1]`. Never returns exactly zero.
pub fn uniform_draws(stream: &RandomStream, count: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..count).map(|_| open_closed_uniform(&mut rng)).collect()
}
