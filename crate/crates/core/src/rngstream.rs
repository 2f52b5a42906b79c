//! Deterministic random streams keyed by a path of integers.
//!
//! Every random draw in an experiment comes from a stream identified by
//! `(master_seed, role, ...indices)`, so a result never depends on how work
//! is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream roles. Distinct roles never share a stream for the same indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    Measurement = 1,
    Probe = 2,
    PatternNoise = 3,
    Trial = 4,
    Selftest = 5,
    Homodyne = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the rng for `(seed, role, path...)`.
pub fn stream(seed: u64, role: Role, path: &[u64]) -> StreamRng {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed ^ 0x746f_6d6f_6c69_6e00);
    state = splitmix64(state ^ role as u64);
    for &p in path {
        state = splitmix64(state ^ p.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    // length is mixed in so that (a) and (a, 0) differ
    state = splitmix64(state ^ path.len() as u64);
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
