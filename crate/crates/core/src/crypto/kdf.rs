use core::fmt;

use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::{hash, Digest};

pub const MASTER_SECRET_LEN: usize = 48;

const MASTER_LABEL: &[u8] = b"salve extended master secret";

/// The per-handshake secret `k`. Only its digest ever leaves an endpoint.
#[derive(Clone, PartialEq, Eq)]
pub struct MasterSecret(pub(crate) [u8; MASTER_SECRET_LEN]);

impl MasterSecret {
    pub fn as_bytes(&self) -> &[u8; MASTER_SECRET_LEN] {
        &self.0
    }

    pub fn from_bytes(bytes: [u8; MASTER_SECRET_LEN]) -> MasterSecret {
        MasterSecret(bytes)
    }
}

impl fmt::Debug for MasterSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MasterSecret(..)")
    }
}

/// HKDF-SHA256: extract over the key-exchange output, expand with the
/// transcript hash as context. `shared` is the DH output, or the
/// client-chosen premaster in static-RSA mode.
pub fn derive_master_secret(shared: &[u8], transcript_hash: &Digest) -> MasterSecret {
    let hk = Hkdf::<Sha256>::new(None, shared);
    let mut out = [0u8; MASTER_SECRET_LEN];
    hk.expand_multi_info(&[MASTER_LABEL, transcript_hash.as_bytes()], &mut out)
        .expect("48 bytes is a valid HKDF-SHA256 output length");
    MasterSecret(out)
}

/// `h(k)`: the value sent to the GMLC and embedded in location statements.
pub fn session_digest(k: &MasterSecret) -> Digest {
    hash(&k.0)
}

pub fn hmac_sha256(key: &[u8], parts: &[&[u8]]) -> Digest {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    for p in parts {
        mac.update(p);
    }
    Digest(mac.finalize().into_bytes().into())
}
