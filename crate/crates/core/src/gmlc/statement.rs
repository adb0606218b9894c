use alloc::string::String;
use alloc::vec::Vec;

use super::GmlcError;
use crate::bytes::{PutExt, Reader};
use crate::crypto::{Digest, PublicKey, Signature, SigningIdentity};
use crate::geo::{decode_loc, encode_loc, GeoLocation, LocWire};

pub const STATEMENT_VERSION: u8 = 1;

/// One localized SIM. The location is held in LOC wire form so the signed
/// bytes are exactly what the client decodes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct StatementEntry {
    pub sim_id: String,
    pub loc: LocWire,
    /// Time of localization, seconds since the Unix epoch.
    pub localized_at: u64,
}

impl StatementEntry {
    pub fn new(sim_id: &str, location: &GeoLocation, localized_at: u64) -> Result<Self, GmlcError> {
        check_sim_id(sim_id)?;
        let loc = encode_loc(location).map_err(|_| GmlcError::Malformed("location out of range"))?;
        Ok(StatementEntry { sim_id: String::from(sim_id), loc, localized_at })
    }

    pub fn location(&self) -> GeoLocation {
        decode_loc(&self.loc).expect("entries are built from valid LOC data")
    }
}

pub(crate) fn check_sim_id(sim_id: &str) -> Result<(), GmlcError> {
    if sim_id.is_empty() || sim_id.len() > 255 {
        return Err(GmlcError::Malformed("sim id must be 1..=255 bytes"));
    }
    Ok(())
}

/// `[h(k), entries, t]` signed by the GMLC. In batched issuance the digest
/// is a Merkle root over several sessions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocationStatement {
    pub session_digest: Digest,
    pub entries: Vec<StatementEntry>,
    pub signature: Signature,
}

/// `version ‖ digest ‖ u16 count ‖ (u8-len sim id ‖ LOC ‖ u64 t)*`.
pub fn canonical_statement_bytes(digest: &Digest, entries: &[StatementEntry]) -> Vec<u8> {
    let mut out = Vec::with_capacity(35 + entries.len() * 40);
    out.push(STATEMENT_VERSION);
    out.extend_from_slice(digest.as_bytes());
    out.put_u16(entries.len() as u16);
    for e in entries {
        out.put_vec_u8(e.sim_id.as_bytes());
        out.extend_from_slice(&e.loc);
        out.put_u64(e.localized_at);
    }
    out
}

impl LocationStatement {
    pub fn sign(session_digest: Digest, entries: Vec<StatementEntry>, key: &SigningIdentity) -> Result<Self, GmlcError> {
        if entries.is_empty() || entries.len() > u16::MAX as usize {
            return Err(GmlcError::Malformed("statement needs 1..=65535 entries"));
        }
        let signature = key
            .sign(&canonical_statement_bytes(&session_digest, &entries))
            .map_err(|_| GmlcError::Signing)?;
        Ok(LocationStatement { session_digest, entries, signature })
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_statement_bytes(&self.session_digest, &self.entries)
    }

    pub fn verify(&self, gmlc_key: &PublicKey) -> bool {
        !self.entries.is_empty() && gmlc_key.verify(&self.canonical_bytes(), &self.signature.0)
    }

    /// Canonical bytes followed by the raw signature.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.canonical_bytes();
        out.extend_from_slice(&self.signature.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GmlcError> {
        let mut r = Reader::new(bytes);
        let t = |_| GmlcError::Malformed("truncated statement");
        let version = r.u8().map_err(t)?;
        if version != STATEMENT_VERSION {
            return Err(GmlcError::Version(version));
        }
        let session_digest = Digest(r.array().map_err(t)?);
        let count = r.u16().map_err(t)? as usize;
        if count == 0 {
            return Err(GmlcError::Malformed("statement without entries"));
        }
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let id = r.vec_u8().map_err(t)?;
            let sim_id = core::str::from_utf8(id).map_err(|_| GmlcError::Malformed("sim id not UTF-8"))?;
            check_sim_id(sim_id)?;
            let loc: LocWire = r.array().map_err(t)?;
            decode_loc(&loc).map_err(|_| GmlcError::Malformed("bad LOC in statement"))?;
            let localized_at = r.u64().map_err(t)?;
            entries.push(StatementEntry { sim_id: String::from(sim_id), loc, localized_at });
        }
        let signature = r.rest();
        if signature.is_empty() {
            return Err(GmlcError::Malformed("missing signature"));
        }
        Ok(LocationStatement { session_digest, entries, signature: Signature(signature.to_vec()) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;
    use crate::testutil::{identity, rng};
    use alloc::collections::BTreeMap;
    use alloc::vec;
    use rand_core::RngCore;

    fn entry(id: &str, lat: f64, t: u64) -> StatementEntry {
        StatementEntry::new(id, &GeoLocation::new(lat, 8.0, 400.0), t).unwrap()
    }

    #[test]
    fn deterministic_bytes() {
        let e = vec![entry("228011234567890", 47.0, 100)];
        let d = hash(b"k");
        assert_eq!(canonical_statement_bytes(&d, &e), canonical_statement_bytes(&d, &e));
        // version + digest + count + (len + 15 + 16 + 8)
        assert_eq!(canonical_statement_bytes(&d, &e).len(), 1 + 32 + 2 + 1 + 15 + 16 + 8);
    }

    #[test]
    fn order_is_significant() {
        let d = hash(b"k");
        let a = vec![entry("a", 1.0, 1), entry("b", 2.0, 2)];
        let b = vec![entry("b", 2.0, 2), entry("a", 1.0, 1)];
        assert_ne!(canonical_statement_bytes(&d, &a), canonical_statement_bytes(&d, &b));
    }

    #[test]
    fn sign_verify_round_trip() {
        let key = identity(3);
        let s = LocationStatement::sign(hash(b"k"), vec![entry("sim-1", 47.0, 10)], &key).unwrap();
        assert!(s.verify(key.public()));
        assert!(!s.verify(identity(4).public()));
        let back = LocationStatement::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
        assert!(LocationStatement::sign(hash(b"k"), vec![], &key).is_err());
    }

    /// Mutating any byte of the serialized statement either breaks parsing
    /// or breaks the signature.
    #[test]
    fn every_byte_mutation_detected() {
        let key = identity(3);
        let s = LocationStatement::sign(hash(b"k"), vec![entry("sim-1", 47.0, 10), entry("sim-2", -3.0, 11)], &key)
            .unwrap();
        let bytes = s.to_bytes();
        for i in 0..bytes.len() {
            let mut m = bytes.clone();
            m[i] ^= 0x10;
            if let Ok(parsed) = LocationStatement::from_bytes(&m) {
                assert!(!parsed.verify(key.public()), "byte {i}");
            }
        }
    }

    #[test]
    fn rejects_malformed() {
        let key = identity(3);
        let s = LocationStatement::sign(hash(b"k"), vec![entry("x", 1.0, 1)], &key).unwrap();
        let bytes = s.to_bytes();
        let mut v = bytes.clone();
        v[0] = 2;
        assert_eq!(LocationStatement::from_bytes(&v), Err(GmlcError::Version(2)));
        assert!(LocationStatement::from_bytes(&bytes[..60]).is_err());
        assert!(LocationStatement::from_bytes(&bytes[..s.canonical_bytes().len()]).is_err());
        assert!(LocationStatement::from_bytes(&[]).is_err());
    }

    /// Brute-force injectivity: over 10^4 random pairs drawn from a small
    /// space (so equal pairs occur), bytes agree exactly when statements do.
    #[test]
    fn canonical_bytes_injective() {
        let mut r = rng(21);
        let mut pick = |n: u32| r.next_u32() % n;
        let mut random = || {
            let d = hash(&[pick(3) as u8]);
            let n = 1 + pick(2) as usize;
            let entries: Vec<_> = (0..n)
                .map(|_| {
                    let id = ["1", "12", "121", "2"][pick(4) as usize];
                    entry(id, pick(2) as f64, pick(2) as u64)
                })
                .collect();
            (d, entries)
        };
        let mut seen: BTreeMap<Vec<u8>, (Digest, Vec<StatementEntry>)> = BTreeMap::new();
        let mut equal_pairs = 0;
        for _ in 0..10_000 {
            let (a, b) = (random(), random());
            let (ba, bb) = (canonical_statement_bytes(&a.0, &a.1), canonical_statement_bytes(&b.0, &b.1));
            assert_eq!(ba == bb, a == b, "{a:?} vs {b:?}");
            equal_pairs += (a == b) as u32;
            for (bytes, s) in [(ba, a), (bb, b)] {
                if let Some(prev) = seen.insert(bytes, s.clone()) {
                    assert_eq!(prev, s);
                }
            }
        }
        assert!(equal_pairs > 0);
    }
}
