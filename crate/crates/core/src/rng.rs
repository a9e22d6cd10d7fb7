//! Seeded, portable random source.
//!
//! Every stochastic step (masks, matrices, phantoms, noise) draws from
//! xoshiro256++ seeded through SplitMix64, so streams are reproducible across
//! platforms and can be re-implemented from the algorithm name alone.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// Written into run manifests.
pub const RNG_ALGORITHM: &str = "xoshiro256++ (seeded via splitmix64)";

pub fn seeded(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stream seed for one (scene, measurement stream) pair under a master seed.
pub fn derive_seed(master: u64, scene_id: &str, stream: &str) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ fnv1a(scene_id.as_bytes()));
    splitmix64(h ^ fnv1a(stream.as_bytes()))
}
