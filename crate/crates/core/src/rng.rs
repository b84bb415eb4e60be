//! Seeded random streams.
//!
//! Every stochastic quantity in the crate is drawn from a ChaCha8 stream
//! addressed by `(seed, domain, index)`, so results do not depend on the
//! order in which images, chains or bootstrap replicates are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named stream domains. Distinct domains never share a key stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Background = 1,
    Noise = 2,
    Chain = 3,
    Bootstrap = 4,
    Synthetic = 5,
}

/// Returns the stream for item `index` of `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> StreamRng {
    let key = splitmix64(seed ^ splitmix64(domain as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Derives a child seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = splitmix64(seed);
    for b in label.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
