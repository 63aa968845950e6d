//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random generator used throughout the simulator.
pub type SimRng = ChaCha8Rng;

/// Mixes a master seed with stream labels into a fresh 64-bit seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    let mut state = master ^ 0x9E37_79B9_7F4A_7C15;
    for &label in labels {
        state = mix(state.wrapping_add(label.wrapping_mul(0xBF58_476D_1CE4_E5B9)));
    }
    mix(state)
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(master: u64, labels: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, labels))
}
