//! Deterministic, splittable random streams.
//!
//! Every stochastic routine in the crate draws from an [`RngStream`], so a
//! whole experiment is a pure function of `(seed, configuration)`.  Streams
//! with distinct `stream_id` under one seed are independent ChaCha streams;
//! parallel drivers hand each work batch its own derived substream and reduce
//! results in batch order, which keeps output independent of thread count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A seeded, identified random stream (ChaCha with 8 rounds).
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

/// Creates the deterministic stream for `(seed, stream_id)`.
pub fn make_rng(seed: u64, stream_id: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    RngStream {
        seed,
        stream_id,
        rng,
    }
}

impl RngStream {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derives the `index`-th child stream.  The child id is a hash of the
    /// parent id and the index, so distinct `(parent, index)` pairs map to
    /// distinct streams except with negligible probability.
    pub fn substream(&self, index: u64) -> RngStream {
        let child_id = splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(1)));
        make_rng(self.seed, child_id)
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        rand::Rng::gen::<f64>(self)
    }

    /// Standard-normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        rand::Rng::sample(self, rand_distr::StandardNormal)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_ids_reproduce_the_same_sequence() {
        let mut a = make_rng(1, 0);
        let mut b = make_rng(1, 0);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_stream_ids_diverge() {
        let mut a = make_rng(1, 0);
        let mut b = make_rng(1, 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_mean_is_centred() {
        let mut rng = make_rng(42, 7);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| rng.uniform()).sum::<f64>() / n as f64;
        // 3 sigma band for the mean of n uniforms: 3 / sqrt(12 n).
        assert!((mean - 0.5).abs() <= 0.002, "mean {mean}");
    }

    #[test]
    fn standard_normal_moments_are_sane() {
        let mut rng = make_rng(9, 3);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 0.01, "mean {mean}");
        assert!((var - 1.0).abs() <= 0.02, "var {var}");
    }

    #[test]
    fn substreams_are_deterministic_and_distinct() {
        let parent = make_rng(5, 11);
        let mut c0 = parent.substream(0);
        let mut c0_again = parent.substream(0);
        let mut c1 = parent.substream(1);
        let x0 = c0.next_u64();
        assert_eq!(x0, c0_again.next_u64());
        assert_ne!(x0, c1.next_u64());
        assert_ne!(c0.stream_id(), c1.stream_id());
    }

    #[test]
    fn clone_forks_the_state() {
        let mut a = make_rng(3, 2);
        a.next_u64();
        let mut b = a.clone();
        assert_eq!(a.next_u64(), b.next_u64());
    }
}
