//! Seeded random streams.
//!
//! A [`SimRng`] is ChaCha8 keyed by a 64-bit seed with a 64-bit stream id,
//! so the same `(seed, stream)` pair draws the same sequence everywhere.
//! Parallel work never shares an `SimRng`; it derives a child stream instead.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct SimRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent stream for sub-task `index` (trial number, curve point, ...).
    pub fn child(&self, index: u64) -> Self {
        Self::new(self.seed, derive_stream(self.stream, index))
    }
}

/// SplitMix64 finalizer over `(parent, index)`; used to spread stream ids.
pub fn derive_stream(parent: u64, index: u64) -> u64 {
    let mut z = parent
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index)
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngCore for SimRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_and_stream_repeat() {
        let mut a = SimRng::new(7, 3);
        let mut b = SimRng::new(7, 3);
        let xs: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn streams_differ() {
        let mut a = SimRng::new(7, 3);
        let mut b = SimRng::new(7, 4);
        assert_ne!(a.next_u64(), b.next_u64());
        let (c, d) = (a.child(0), a.child(1));
        assert_ne!(c.stream(), d.stream());
    }

    #[test]
    fn pinned_first_draw() {
        // Frozen so a dependency upgrade that changes the stream is caught.
        let mut r = SimRng::new(42, 0);
        let first = r.next_u64();
        let again = SimRng::new(42, 0).random::<u64>();
        assert_eq!(first, again);
        assert_eq!(first, PINNED_42_0);
    }

    const PINNED_42_0: u64 = 12578764544318200737;
}
