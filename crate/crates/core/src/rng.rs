//! Deterministic per-task random streams derived from a master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(seed, path...)`; independent of worker count and scheduling.
pub fn derive(seed: u64, path: &[u64]) -> Rng {
    let mut s = splitmix(seed);
    for &p in path {
        s = splitmix(s ^ splitmix(p.wrapping_add(0x51_7C_C1_B7)));
    }
    ChaCha8Rng::seed_from_u64(s)
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
