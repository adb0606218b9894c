use std::sync::OnceLock;

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;

use crate::crypto::SigningIdentity;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// RSA key generation is slow; each test binary generates its keys once.
pub fn identity(i: usize) -> SigningIdentity {
    static KEYS: OnceLock<std::vec::Vec<SigningIdentity>> = OnceLock::new();
    KEYS.get_or_init(|| {
        (0..8)
            .map(|k| SigningIdentity::generate(&mut rng(0x5a1e + k)).unwrap())
            .collect()
    })[i]
        .clone()
}
