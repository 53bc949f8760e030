//! Deterministic random-number plumbing.
//!
//! Every stochastic component draws from a ChaCha8 stream derived from the
//! run seed plus a path of integer tags (domain, member, lead, ...). Streams
//! with different paths are statistically independent, and a given path
//! always yields the same stream regardless of evaluation order or thread
//! count. Parallel sections must derive their streams up front from keys,
//! never share a stream across tasks.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tag namespaces for the first element of a stream path. Keeping the
/// domains disjoint guarantees, e.g., that training noise never overlaps
/// sampler noise even under identical seeds.
pub mod domain {
    pub const SYNTH_TRUTH: u64 = 0x01;
    pub const FORECAST: u64 = 0x02;
    pub const NET_INIT: u64 = 0x03;
    pub const TRAIN: u64 = 0x04;
    pub const SAMPLER: u64 = 0x05;
    pub const BOOTSTRAP: u64 = 0x06;
}

/// splitmix64 finalizer; bijective on u64.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn absorb(state: u64, tag: u64) -> u64 {
    mix(state ^ tag.wrapping_mul(GAMMA).wrapping_add(0x632B_E59B_D9B4_E019))
}

/// Collapses `(seed, path)` into a single 64-bit key.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    let mut state = mix(seed ^ GAMMA);
    for (i, &tag) in path.iter().enumerate() {
        state = absorb(state, tag ^ (i as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    state
}

/// Independent ChaCha8 stream for `(seed, path)`. The 256-bit key is
/// expanded from the derived key by a splitmix64 walk.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = derive_key(seed, path);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(GAMMA);
        chunk.copy_from_slice(&mix(state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
