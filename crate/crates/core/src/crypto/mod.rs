//! Cryptographic building blocks shared by every party.
//!
//! SHA-256 is the only hash; RSA-2048 PKCS#1 v1.5 signs location statements,
//! certificates and zone data; X25519 provides the ephemeral key exchange.

use alloc::string::String;
use core::fmt;

use sha2::{Digest as _, Sha256};

mod dh;
mod kdf;
pub mod merkle;
mod sign;

pub use dh::{dh_combine, dh_generate, EphemeralKeyShare, SharedSecret, X25519_GROUP};
pub use kdf::{derive_master_secret, hmac_sha256, session_digest, MasterSecret, MASTER_SECRET_LEN};
pub use merkle::{merkle_build, merkle_prove, merkle_root, merkle_verify, MerkleProof, MerkleTree, Side};
pub use sign::{verify, PublicKey, Signature, SigningIdentity, RSA_KEY_BITS, RSA_SHA256};

pub const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CryptoError {
    /// Key material could not be parsed or generated.
    Key,
    /// Signing requires a private key.
    MissingPrivateKey,
    /// Peer key share is not a usable curve point.
    InvalidPoint,
    /// Merkle trees need at least one leaf.
    EmptyTree,
    /// Leaf index outside the tree.
    IndexOutOfRange,
    /// Malformed encoding.
    Decode,
}

impl fmt::Display for CryptoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CryptoError::Key => f.write_str("invalid key material"),
            CryptoError::MissingPrivateKey => f.write_str("signing identity has no private key"),
            CryptoError::InvalidPoint => f.write_str("invalid peer key share"),
            CryptoError::EmptyTree => f.write_str("merkle tree needs at least one leaf"),
            CryptoError::IndexOutOfRange => f.write_str("leaf index out of range"),
            CryptoError::Decode => f.write_str("malformed encoding"),
        }
    }
}

impl core::error::Error for CryptoError {}

/// A SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn from_slice(bytes: &[u8]) -> Option<Digest> {
        <[u8; DIGEST_LEN]>::try_from(bytes).ok().map(Digest)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        to_hex(&self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let mut out = [0u8; DIGEST_LEN];
        from_hex_into(s, &mut out)?;
        Some(Digest(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of the concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

pub fn to_hex(bytes: &[u8]) -> String {
    const HEX: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(HEX[(b >> 4) as usize] as char);
        s.push(HEX[(b & 0xf) as usize] as char);
    }
    s
}

pub fn from_hex(s: &str) -> Option<alloc::vec::Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    let mut out = alloc::vec![0u8; s.len() / 2];
    from_hex_into(s, &mut out)?;
    Some(out)
}

fn from_hex_into(s: &str, out: &mut [u8]) -> Option<()> {
    let s = s.as_bytes();
    if s.len() != out.len() * 2 {
        return None;
    }
    fn nibble(c: u8) -> Option<u8> {
        match c {
            b'0'..=b'9' => Some(c - b'0'),
            b'a'..=b'f' => Some(c - b'a' + 10),
            b'A'..=b'F' => Some(c - b'A' + 10),
            _ => None,
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = nibble(s[2 * i])? << 4 | nibble(s[2 * i + 1])?;
    }
    Some(())
}
