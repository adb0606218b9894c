//! The location center: SIM registry with owner credentials, MLP-style
//! request handling and signed location statements.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use subtle::ConstantTimeEq;

use crate::crypto::{hash, Digest, SigningIdentity};
use crate::geo::GeoLocation;

mod statement;

pub use statement::{canonical_statement_bytes, LocationStatement, StatementEntry, STATEMENT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmlcError {
    UnknownSim,
    /// An update carried a localization time older than the stored one.
    NonMonotonic { stored: u64, offered: u64 },
    DuplicateSim,
    Malformed(&'static str),
    Version(u8),
    Signing,
}

impl fmt::Display for GmlcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GmlcError::UnknownSim => f.write_str("unknown SIM"),
            GmlcError::NonMonotonic { stored, offered } => {
                write!(f, "localization time {offered} is older than stored {stored}")
            }
            GmlcError::DuplicateSim => f.write_str("SIM already registered"),
            GmlcError::Malformed(why) => write!(f, "malformed: {why}"),
            GmlcError::Version(v) => write!(f, "unsupported statement version {v}"),
            GmlcError::Signing => f.write_str("signing failed"),
        }
    }
}

impl core::error::Error for GmlcError {}

#[derive(Clone, PartialEq)]
pub struct SimRecord {
    pub sim_id: String,
    credential: String,
    pub location: GeoLocation,
    pub localized_at: u64,
}

impl SimRecord {
    pub fn new(sim_id: &str, credential: &str, location: GeoLocation, localized_at: u64) -> Result<Self, GmlcError> {
        statement::check_sim_id(sim_id)?;
        location.validate().map_err(|_| GmlcError::Malformed("location out of range"))?;
        Ok(SimRecord { sim_id: String::from(sim_id), credential: String::from(credential), location, localized_at })
    }

    pub fn credential(&self) -> &str {
        &self.credential
    }

    /// Compares digests so the time taken depends on neither the length
    /// nor the content of the secret.
    fn owned_by(&self, credential: &str) -> bool {
        let a = hash(self.credential.as_bytes());
        let b = hash(credential.as_bytes());
        a.0.ct_eq(&b.0).into()
    }
}

impl fmt::Debug for SimRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimRecord")
            .field("sim_id", &self.sim_id)
            .field("location", &self.location)
            .field("localized_at", &self.localized_at)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimRegistry {
    sims: BTreeMap<String, SimRecord>,
}

impl SimRegistry {
    pub fn new() -> SimRegistry {
        SimRegistry::default()
    }

    pub fn register(&mut self, rec: SimRecord) -> Result<(), GmlcError> {
        if self.sims.contains_key(&rec.sim_id) {
            return Err(GmlcError::DuplicateSim);
        }
        self.sims.insert(rec.sim_id.clone(), rec);
        Ok(())
    }

    pub fn get(&self, sim_id: &str) -> Option<&SimRecord> {
        self.sims.get(sim_id)
    }

    pub fn len(&self) -> usize {
        self.sims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sims.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SimRecord> {
        self.sims.values()
    }

    /// Records a new localization. `t` may equal the stored time but never
    /// precede it.
    pub fn update_location(&mut self, sim_id: &str, location: GeoLocation, t: u64) -> Result<(), GmlcError> {
        let rec = self.sims.get_mut(sim_id).ok_or(GmlcError::UnknownSim)?;
        if t < rec.localized_at {
            return Err(GmlcError::NonMonotonic { stored: rec.localized_at, offered: t });
        }
        location.validate().map_err(|_| GmlcError::Malformed("location out of range"))?;
        rec.location = location;
        rec.localized_at = t;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpRequest {
    /// Correlates responses on a multiplexed channel.
    pub id: u64,
    pub credential: String,
    pub sim_ids: Vec<String>,
    pub session_digest: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlpStatus {
    Ok,
    Unauthorized,
    UnknownSim,
}

impl MlpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            MlpStatus::Ok => "OK",
            MlpStatus::Unauthorized => "UNAUTHORIZED",
            MlpStatus::UnknownSim => "UNKNOWN_SIM",
        }
    }

    pub fn parse(s: &str) -> Option<MlpStatus> {
        Some(match s {
            "OK" => MlpStatus::Ok,
            "UNAUTHORIZED" => MlpStatus::Unauthorized,
            "UNKNOWN_SIM" => MlpStatus::UnknownSim,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpResponse {
    pub id: u64,
    pub status: MlpStatus,
    /// Present exactly when `status` is `Ok`.
    pub statement: Option<LocationStatement>,
}

impl MlpResponse {
    fn refuse(id: u64, status: MlpStatus) -> MlpResponse {
        MlpResponse { id, status, statement: None }
    }
}

/// Answers a statement request. Every requested SIM must exist and belong
/// to the presented credential; the digest is echoed untouched and each
/// entry carries the SIM's last localization time.
pub fn issue_statement(registry: &SimRegistry, identity: &SigningIdentity, req: &MlpRequest) -> MlpResponse {
    let mut ids: Vec<&str> = req.sim_ids.iter().map(String::as_str).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        return MlpResponse::refuse(req.id, MlpStatus::UnknownSim);
    }
    let mut recs = Vec::with_capacity(ids.len());
    for id in &ids {
        match registry.get(id) {
            Some(r) => recs.push(r),
            None => return MlpResponse::refuse(req.id, MlpStatus::UnknownSim),
        }
    }
    // Check every SIM before answering so the response does not reveal
    // which of several SIMs failed.
    let authorized = recs.iter().fold(true, |ok, r| ok & r.owned_by(&req.credential));
    if !authorized {
        return MlpResponse::refuse(req.id, MlpStatus::Unauthorized);
    }
    let entries: Result<Vec<_>, _> = recs
        .iter()
        .map(|r| StatementEntry::new(&r.sim_id, &r.location, r.localized_at))
        .collect();
    match entries.and_then(|e| LocationStatement::sign(req.session_digest, e, identity)) {
        Ok(s) => MlpResponse { id: req.id, status: MlpStatus::Ok, statement: Some(s) },
        Err(_) => MlpResponse::refuse(req.id, MlpStatus::UnknownSim),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::identity;
    use alloc::format;

    fn loc(lat: f64) -> GeoLocation {
        GeoLocation::new(lat, 8.5, 400.0)
    }

    fn registry(n: usize) -> SimRegistry {
        let mut reg = SimRegistry::new();
        for i in 0..n {
            reg.register(SimRecord::new(&format!("sim-{i}"), &format!("cred-{i}"), loc(40.0 + i as f64), 100).unwrap())
                .unwrap();
        }
        reg
    }

    fn request(cred: &str, sims: &[&str]) -> MlpRequest {
        MlpRequest {
            id: 7,
            credential: cred.into(),
            sim_ids: sims.iter().map(|s| String::from(*s)).collect(),
            session_digest: hash(b"h(k)"),
        }
    }

    #[test]
    fn update_then_read() {
        let mut reg = registry(1);
        reg.update_location("sim-0", loc(1.0), 200).unwrap();
        assert_eq!(reg.get("sim-0").unwrap().location, loc(1.0));
        assert_eq!(reg.get("sim-0").unwrap().localized_at, 200);
        assert_eq!(reg.update_location("nope", loc(1.0), 300), Err(GmlcError::UnknownSim));
    }

    #[test]
    fn earlier_update_rejected_without_change() {
        let mut reg = registry(1);
        reg.update_location("sim-0", loc(1.0), 200).unwrap();
        let err = reg.update_location("sim-0", loc(2.0), 199).unwrap_err();
        assert_eq!(err, GmlcError::NonMonotonic { stored: 200, offered: 199 });
        assert_eq!(reg.get("sim-0").unwrap().location, loc(1.0));
        assert_eq!(reg.get("sim-0").unwrap().localized_at, 200);
    }

    #[test]
    fn both_update_orders_end_at_later_time() {
        let updates = [(loc(1.0), 150u64), (loc(2.0), 250u64)];
        for order in [[0, 1], [1, 0]] {
            let mut reg = registry(1);
            for i in order {
                let _ = reg.update_location("sim-0", updates[i].0, updates[i].1);
            }
            let rec = reg.get("sim-0").unwrap();
            assert_eq!((rec.location, rec.localized_at), updates[1]);
        }
    }

    #[test]
    fn ok_statement_echoes_digest_and_time() {
        let reg = registry(1);
        let key = identity(3);
        let req = request("cred-0", &["sim-0"]);
        let resp = issue_statement(&reg, &key, &req);
        assert_eq!(resp.status, MlpStatus::Ok);
        assert_eq!(resp.id, 7);
        let s = resp.statement.unwrap();
        assert_eq!(s.session_digest, req.session_digest);
        assert_eq!(s.entries.len(), 1);
        assert_eq!(s.entries[0].localized_at, 100);
        assert_eq!(s.entries[0].location(), loc(40.0).quantized().unwrap());
        assert!(s.verify(key.public()));
    }

    #[test]
    fn wrong_credential_leaks_nothing() {
        let reg = registry(2);
        let resp = issue_statement(&reg, &identity(3), &request("cred-1", &["sim-0"]));
        assert_eq!(resp, MlpResponse { id: 7, status: MlpStatus::Unauthorized, statement: None });
        let resp = issue_statement(&reg, &identity(3), &request("cred-0", &["sim-0", "sim-1"]));
        assert_eq!(resp.status, MlpStatus::Unauthorized);
        assert!(resp.statement.is_none());
    }

    #[test]
    fn unknown_sim() {
        let reg = registry(1);
        let resp = issue_statement(&reg, &identity(3), &request("cred-0", &["sim-9"]));
        assert_eq!(resp.status, MlpStatus::UnknownSim);
        let resp = issue_statement(&reg, &identity(3), &request("cred-0", &[]));
        assert_eq!(resp.status, MlpStatus::UnknownSim);
    }

    #[test]
    fn multi_sim_statement_sorted() {
        let mut reg = SimRegistry::new();
        for (id, lat) in [("sim-c", 3.0), ("sim-a", 1.0), ("sim-b", 2.0)] {
            reg.register(SimRecord::new(id, "shared", loc(lat), 50).unwrap()).unwrap();
        }
        let resp = issue_statement(&reg, &identity(3), &request("shared", &["sim-c", "sim-a", "sim-b", "sim-a"]));
        let s = resp.statement.unwrap();
        let ids: Vec<_> = s.entries.iter().map(|e| e.sim_id.as_str()).collect();
        assert_eq!(ids, ["sim-a", "sim-b", "sim-c"]);
    }

    /// Every (credential, SIM) pair on a 5x5 registry: only the owner gets
    /// a statement.
    #[test]
    fn authorization_is_total() {
        let reg = registry(5);
        let key = identity(3);
        for c in 0..5 {
            for s in 0..5 {
                let resp = issue_statement(&reg, &key, &request(&format!("cred-{c}"), &[&format!("sim-{s}")]));
                let want = if c == s { MlpStatus::Ok } else { MlpStatus::Unauthorized };
                assert_eq!(resp.status, want, "cred-{c} sim-{s}");
                assert_eq!(resp.statement.is_some(), c == s);
            }
        }
        let resp = issue_statement(&reg, &key, &request("", &["sim-0"]));
        assert_eq!(resp.status, MlpStatus::Unauthorized);
    }

    #[test]
    fn debug_hides_credential() {
        let reg = registry(1);
        assert!(!format!("{:?}", reg.get("sim-0").unwrap()).contains("cred-0"));
    }

    #[test]
    fn duplicate_registration() {
        let mut reg = registry(1);
        let dup = SimRecord::new("sim-0", "x", loc(0.0), 0).unwrap();
        assert_eq!(reg.register(dup), Err(GmlcError::DuplicateSim));
    }
}
