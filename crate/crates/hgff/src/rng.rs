//! Counter-based Gaussian noise.
//!
//! A stream is a ChaCha8 keystream selected by `(seed, stream)`; the n-th
//! standard normal of a stream is a pure function of `(seed, stream, n)`
//! because it always consumes keystream words `4n..4n+4` (two u64 draws fed
//! to the cosine branch of Box–Muller). Fields can therefore be generated in
//! any chunking or thread order and remain bit-identical.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CHUNK: usize = 4096;

/// Identifies one reproducible stream of standard normals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseKey {
    pub seed: u64,
    pub stream: u64,
}

impl NoiseKey {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Derives a sub-stream from a tuple of labels, e.g. `(environment, node, replica)`.
    pub fn derive(seed: u64, labels: &[u64]) -> Self {
        let mut h = 0x6a09_e667_f3bc_c909u64;
        for &l in labels {
            h = splitmix(h ^ splitmix(l.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        Self { seed, stream: h }
    }

    /// Writes normals `offset .. offset + out.len()` of this stream.
    pub fn fill_normals(&self, offset: u64, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(4 * offset as u128);
        for z in out.iter_mut() {
            *z = box_muller(rng.next_u64(), rng.next_u64());
        }
    }

    /// Fills `out` in independent chunks, in parallel when enabled.
    pub fn fill_normals_par(&self, out: &mut [f64]) {
        use crate::par::*;
        out.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| self.fill_normals((c * CHUNK) as u64, chunk));
    }

    pub fn normals(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        self.fill_normals_par(&mut v);
        v
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn box_muller(a: u64, b: u64) -> f64 {
    // u1 in (0, 1] keeps the logarithm finite; u2 in [0, 1).
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
