//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed from an explicit root seed plus stream coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with stream coordinates into a new 64-bit seed.
pub fn derive(root: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix(root), |acc, &c| {
        splitmix(acc ^ splitmix(c.wrapping_add(0xA5A5_A5A5)))
    })
}

pub fn rng(root: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, coords))
}
