//! Deterministic stream fan-out for parallel replicas.
//!
//! Each (master seed, replica, purpose) triple gets its own counter-based
//! generator, so workers never share state and the fan-out does not depend
//! on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix_next(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in tag.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// ChaCha stream keyed by hashing (master seed, replica index, purpose tag).
pub fn stream(master_seed: u64, replica: u64, purpose: &str) -> ChaCha8Rng {
    let mut state = master_seed
        ^ fnv1a(purpose).rotate_left(17)
        ^ replica.wrapping_mul(0x6a09_e667_f3bc_c909);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix_next(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
