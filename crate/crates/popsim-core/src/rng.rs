//! Deterministic scheduling randomness.
//!
//! The scheduler draws from ChaCha8 (a published, seedable generator with a
//! version-stable raw stream) seeded from a single `u64` that we expand with
//! splitmix64 ourselves, so replay never depends on a library seeding helper.
//! Bounded sampling uses bitmask rejection, which is exactly uniform, and
//! pair sampling rejects equal indices, so every ordered pair of distinct
//! agents has probability `1 / (n (n - 1))`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// One splitmix64 step: advances `state` and returns the mixed output.
/// Also used to derive per-trial seeds in sweeps.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded source of interaction pairs. Identical seed and population size
/// yield a bit-identical pair sequence.
#[derive(Debug, Clone)]
pub struct Scheduler {
    seed: u64,
    rng: ChaCha8Rng,
}

impl Scheduler {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Scheduler {
            seed,
            rng: ChaCha8Rng::from_seed(bytes),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `0..bound` via bitmask rejection; no modulo bias.
    pub fn sample_index(&mut self, bound: usize) -> usize {
        debug_assert!(bound >= 1);
        let bound = bound as u64;
        let mask = bound.next_power_of_two() - 1;
        loop {
            let v = self.rng.next_u64() & mask;
            if v < bound {
                return v as usize;
            }
        }
    }

    /// Uniform ordered pair of distinct agent indices in `0..n` (no
    /// self-loops): both indices are drawn uniformly and equal draws are
    /// rejected wholesale.
    pub fn sample_pair(&mut self, n: usize) -> (usize, usize) {
        debug_assert!(n >= 2);
        loop {
            let initiator = self.sample_index(n);
            let responder = self.sample_index(n);
            if initiator != responder {
                return (initiator, responder);
            }
        }
    }
}
