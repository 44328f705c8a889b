//! Named, deterministic random streams derived from one master seed.
//!
//! Every consumer of randomness asks for `stream(master, domain, index)`;
//! the domain label separates unrelated uses (sampling, bootstrap, trials)
//! and the index separates parallel jobs within one use.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for job `index` of the stream family `domain`.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    splitmix(splitmix(master ^ fnv1a(domain)) ^ index)
}

pub fn stream(master: u64, domain: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, domain, index))
}
