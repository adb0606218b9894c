use core::fmt;

use rand_core::CryptoRngCore;
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

use super::CryptoError;

/// Named-group codepoint for X25519, as used in hello messages.
pub const X25519_GROUP: u16 = 0x001d;

/// One side's ephemeral key pair. Generated fresh for every handshake.
pub struct EphemeralKeyShare {
    group: u16,
    public: [u8; 32],
    private: StaticSecret,
}

impl EphemeralKeyShare {
    pub fn group(&self) -> u16 {
        self.group
    }

    pub fn public(&self) -> &[u8; 32] {
        &self.public
    }
}

impl fmt::Debug for EphemeralKeyShare {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EphemeralKeyShare")
            .field("group", &self.group)
            .field("public", &super::to_hex(&self.public))
            .finish_non_exhaustive()
    }
}

/// Raw output of the key exchange; only ever fed into
/// [`derive_master_secret`](super::derive_master_secret).
#[derive(Clone, PartialEq, Eq)]
pub struct SharedSecret(pub(crate) [u8; 32]);

impl SharedSecret {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SharedSecret(..)")
    }
}

pub fn dh_generate(rng: &mut impl CryptoRngCore) -> EphemeralKeyShare {
    let private = StaticSecret::random_from_rng(rng);
    let public = XPublic::from(&private).to_bytes();
    EphemeralKeyShare {
        group: X25519_GROUP,
        public,
        private,
    }
}

/// Rejects peer shares of the wrong length and low-order points (which
/// would force an all-zero secret).
pub fn dh_combine(local: &EphemeralKeyShare, peer_public: &[u8]) -> Result<SharedSecret, CryptoError> {
    let peer: [u8; 32] = peer_public.try_into().map_err(|_| CryptoError::InvalidPoint)?;
    let shared = local.private.diffie_hellman(&XPublic::from(peer));
    if !shared.was_contributory() {
        return Err(CryptoError::InvalidPoint);
    }
    Ok(SharedSecret(shared.to_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rng;
    use alloc::collections::BTreeSet;

    #[test]
    fn both_directions_agree() {
        let mut r = rng(7);
        for _ in 0..1000 {
            let a = dh_generate(&mut r);
            let b = dh_generate(&mut r);
            assert_eq!(
                dh_combine(&a, b.public()).unwrap(),
                dh_combine(&b, a.public()).unwrap()
            );
        }
    }

    #[test]
    fn degenerate_peer_rejected() {
        let a = dh_generate(&mut rng(1));
        assert_eq!(dh_combine(&a, &[0u8; 32]), Err(CryptoError::InvalidPoint));
        assert_eq!(dh_combine(&a, &[9u8; 31]), Err(CryptoError::InvalidPoint));
        let mut one = [0u8; 32];
        one[0] = 1;
        assert_eq!(dh_combine(&a, &one), Err(CryptoError::InvalidPoint));
    }

    #[test]
    fn fresh_shares_are_distinct() {
        let mut r = rng(3);
        let publics: BTreeSet<[u8; 32]> = (0..100).map(|_| *dh_generate(&mut r).public()).collect();
        assert_eq!(publics.len(), 100);
    }
}
