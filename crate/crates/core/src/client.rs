//! The client side: the statement verification policy and a connection
//! driver that ties a validated DNS answer to the handshake.

use alloc::vec::Vec;
use core::fmt;

use rand_core::CryptoRngCore;

use crate::crypto::{merkle_verify, Digest, MerkleProof, PublicKey};
use crate::dns::ValidatedRecordSet;
use crate::geo::{great_circle_distance, GeoLocation};
use crate::gmlc::LocationStatement;
use crate::tls::{
    AbortInfo, AlertCode, ClientConfig, ClientEvent, ClientSession, HandshakeMessage, KeyExchangeMode, Phase,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequireSalve {
    Always,
    /// Only when the DNS answer carries SLVREQ = 1.
    PerDnsFlag,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchMode {
    /// Some statement entry lies near some legitimate location.
    AnyOfL,
    /// Every legitimate location is covered by an entry and every entry
    /// lies near a legitimate location.
    AllOfL,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientPolicy {
    /// Maximum age of a localization, in seconds.
    pub freshness_threshold: u64,
    /// Maximum great-circle distance between a statement entry and a
    /// legitimate location, in meters. Zero demands equality at codec
    /// resolution.
    pub distance_threshold: f64,
    pub require_salve: RequireSalve,
    pub match_mode: MatchMode,
}

impl Default for ClientPolicy {
    fn default() -> Self {
        ClientPolicy {
            freshness_threshold: 300,
            distance_threshold: 250.0,
            require_salve: RequireSalve::PerDnsFlag,
            match_mode: MatchMode::AnyOfL,
        }
    }
}

impl ClientPolicy {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.freshness_threshold == 0 {
            return Err("freshness threshold must be positive");
        }
        if !(self.distance_threshold.is_finite() && self.distance_threshold >= 0.0) {
            return Err("distance threshold must be a non-negative number");
        }
        Ok(())
    }

    /// Whether a handshake to a domain with this DNS answer must carry a
    /// location statement.
    pub fn requires_salve(&self, records: &ValidatedRecordSet) -> bool {
        match self.require_salve {
            RequireSalve::Always => true,
            RequireSalve::PerDnsFlag => records.salve_required,
            RequireSalve::Never => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reason {
    Ok,
    BadSignature,
    DigestMismatch,
    LocationMismatch,
    Stale,
    MerkleProofInvalid,
    Downgrade,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::Ok => "ok",
            Reason::BadSignature => "bad-signature",
            Reason::DigestMismatch => "digest-mismatch",
            Reason::LocationMismatch => "location-mismatch",
            Reason::Stale => "stale",
            Reason::MerkleProofInvalid => "merkle-proof-invalid",
            Reason::Downgrade => "downgrade",
        }
    }

    /// Alert sent to the server when a statement is rejected.
    pub fn alert(self) -> Option<AlertCode> {
        match self {
            Reason::Ok => None,
            Reason::BadSignature | Reason::DigestMismatch | Reason::MerkleProofInvalid => {
                Some(AlertCode::BadLocationStatement)
            }
            Reason::LocationMismatch => Some(AlertCode::LocationMismatch),
            Reason::Stale => Some(AlertCode::StaleStatement),
            Reason::Downgrade => Some(AlertCode::DowngradeDetected),
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerificationVerdict {
    pub accepted: bool,
    pub reason: Reason,
}

impl VerificationVerdict {
    fn from(reason: Reason) -> Self {
        VerificationVerdict { accepted: reason == Reason::Ok, reason }
    }
}

fn near(a: &GeoLocation, b: &GeoLocation, threshold: f64) -> bool {
    great_circle_distance(a, b) <= threshold
}

/// Checks, in order: the GMLC signature, the binding to this session
/// (directly or through a Merkle proof), the location match against `l`
/// and the age of every matched entry. The first failure decides.
pub fn verify_statement(
    stmt: &LocationStatement,
    expected: &Digest,
    l: &[GeoLocation],
    policy: &ClientPolicy,
    gmlc_key: &PublicKey,
    now: u64,
    proof: Option<&MerkleProof>,
) -> VerificationVerdict {
    if !stmt.verify(gmlc_key) {
        return VerificationVerdict::from(Reason::BadSignature);
    }
    match proof {
        None if stmt.session_digest != *expected => return VerificationVerdict::from(Reason::DigestMismatch),
        Some(p) if !merkle_verify(expected, p, &stmt.session_digest) => {
            return VerificationVerdict::from(Reason::MerkleProofInvalid)
        }
        _ => {}
    }
    let d = policy.distance_threshold;
    let entries: Vec<(GeoLocation, u64)> = stmt.entries.iter().map(|e| (e.location(), e.localized_at)).collect();
    let matched: Vec<u64> = match policy.match_mode {
        MatchMode::AnyOfL => entries
            .iter()
            .filter(|(g, _)| l.iter().any(|x| near(g, x, d)))
            .map(|(_, t)| *t)
            .collect(),
        MatchMode::AllOfL => {
            let covered = l.iter().all(|x| entries.iter().any(|(g, _)| near(g, x, d)));
            let inside = entries.iter().all(|(g, _)| l.iter().any(|x| near(g, x, d)));
            if covered && inside {
                entries.iter().map(|(_, t)| *t).collect()
            } else {
                Vec::new()
            }
        }
    };
    if matched.is_empty() {
        return VerificationVerdict::from(Reason::LocationMismatch);
    }
    if matched.iter().any(|t| now.saturating_sub(*t) > policy.freshness_threshold) {
        return VerificationVerdict::from(Reason::Stale);
    }
    VerificationVerdict::from(Reason::Ok)
}

/// [`verify_statement`] over serialized statement bytes; anything that
/// does not parse counts as a bad signature.
pub fn verify_statement_bytes(
    bytes: &[u8],
    expected: &Digest,
    l: &[GeoLocation],
    policy: &ClientPolicy,
    gmlc_key: &PublicKey,
    now: u64,
    proof: Option<&MerkleProof>,
) -> VerificationVerdict {
    match LocationStatement::from_bytes(bytes) {
        Ok(s) => verify_statement(&s, expected, l, policy, gmlc_key, now, proof),
        Err(_) => VerificationVerdict::from(Reason::BadSignature),
    }
}

/// Keys and policy a client is provisioned with.
#[derive(Debug, Clone)]
pub struct ClientContext {
    pub ca_key: PublicKey,
    pub gmlc_key: PublicKey,
    pub policy: ClientPolicy,
    pub modes: Vec<KeyExchangeMode>,
    /// False for a legacy client that neither offers nor demands SALVE.
    pub salve: bool,
}

impl ClientContext {
    pub fn new(ca_key: PublicKey, gmlc_key: PublicKey, policy: ClientPolicy) -> ClientContext {
        ClientContext { ca_key, gmlc_key, policy, modes: alloc::vec![KeyExchangeMode::Dhe], salve: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    /// The statement was rejected for this reason.
    Verdict(Reason),
    /// The handshake aborted with an alert.
    Alert(AbortInfo),
}

impl Failure {
    /// The verification reason this failure corresponds to, if any.
    pub fn reason(&self) -> Option<Reason> {
        match self {
            Failure::Verdict(r) => Some(*r),
            Failure::Alert(a) if a.code == AlertCode::DowngradeDetected && !a.remote => Some(Reason::Downgrade),
            Failure::Alert(_) => None,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Verdict(r) => write!(f, "statement rejected: {r}"),
            Failure::Alert(a) if a.remote => write!(f, "server sent alert {}", a.code),
            Failure::Alert(a) => write!(f, "aborted with alert {}", a.code),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionStatus {
    Handshaking,
    /// Usable; `verified` tells whether a location statement was checked.
    Established { verified: bool },
    Failed(Failure),
}

/// One client connection: the handshake plus the location checks fed by a
/// validated DNS answer.
pub struct Connection<R: CryptoRngCore> {
    session: ClientSession<R>,
    records: ValidatedRecordSet,
    policy: ClientPolicy,
    gmlc_key: PublicKey,
    status: ConnectionStatus,
    verdict: Option<VerificationVerdict>,
    received: Vec<Vec<u8>>,
}

impl<R: CryptoRngCore> Connection<R> {
    /// Starts a handshake. SALVE is offered when DNS lists locations and
    /// required when the policy or the SLVREQ flag demands it.
    pub fn start(ctx: &ClientContext, records: ValidatedRecordSet, rng: R) -> (Self, HandshakeMessage) {
        let require = ctx.salve && ctx.policy.requires_salve(&records);
        let config = ClientConfig {
            ca_key: ctx.ca_key.clone(),
            server_name: alloc::string::String::from(records.domain.as_str().trim_end_matches('.')),
            modes: ctx.modes.clone(),
            offer_salve: require || (ctx.salve && !records.locations.is_empty()),
            require_salve: require,
        };
        let (session, hello) = ClientSession::start(config, rng);
        let c = Connection {
            session,
            records,
            policy: ctx.policy,
            gmlc_key: ctx.gmlc_key.clone(),
            status: ConnectionStatus::Handshaking,
            verdict: None,
            received: Vec::new(),
        };
        (c, hello)
    }

    pub fn status(&self) -> ConnectionStatus {
        self.status
    }

    pub fn verdict(&self) -> Option<VerificationVerdict> {
        self.verdict
    }

    pub fn session(&self) -> &ClientSession<R> {
        &self.session
    }

    pub fn session_mut(&mut self) -> &mut ClientSession<R> {
        &mut self.session
    }

    /// Application data received since the last call.
    pub fn take_application_data(&mut self) -> Vec<Vec<u8>> {
        core::mem::take(&mut self.received)
    }

    /// Like [`Connection::handle`] for a raw frame; undecodable frames
    /// abort with `unexpected_message`.
    pub fn handle_bytes(&mut self, bytes: &[u8], now: u64) -> Vec<HandshakeMessage> {
        match HandshakeMessage::decode(bytes) {
            Ok(m) => self.handle(m, now),
            Err(_) => {
                let out = self.session.abort(AlertCode::UnexpectedMessage);
                if let Some(info) = self.session.abort_info() {
                    self.status = ConnectionStatus::Failed(Failure::Alert(info));
                }
                out
            }
        }
    }

    /// Processes one server message; `now` is the client's clock in
    /// seconds. Returns the messages to send back.
    pub fn handle(&mut self, msg: HandshakeMessage, now: u64) -> Vec<HandshakeMessage> {
        let out = self.session.handle(msg);
        let mut messages = out.messages;
        match out.event {
            Some(ClientEvent::Established) => {
                self.status = ConnectionStatus::Established { verified: false };
            }
            Some(ClientEvent::Aborted(info)) => self.status = ConnectionStatus::Failed(Failure::Alert(info)),
            Some(ClientEvent::StatementReceived(payload)) => {
                let expected = self.session.session_digest().expect("digest known after Finished");
                let v = verify_statement_bytes(
                    &payload.statement,
                    &expected,
                    &self.records.locations,
                    &self.policy,
                    &self.gmlc_key,
                    now,
                    payload.proof.as_ref(),
                );
                self.verdict = Some(v);
                match v.reason.alert() {
                    None => {
                        self.session.accept_statement().expect("session waits for the statement");
                        self.status = ConnectionStatus::Established { verified: true };
                    }
                    Some(code) => {
                        messages.extend(self.session.abort(code));
                        self.status = ConnectionStatus::Failed(Failure::Verdict(v.reason));
                    }
                }
            }
            Some(ClientEvent::ApplicationData(data)) => self.received.push(data),
            None => {}
        }
        if self.session.phase() == Phase::Aborted && !matches!(self.status, ConnectionStatus::Failed(_)) {
            let info = self.session.abort_info().expect("aborted sessions record why");
            self.status = ConnectionStatus::Failed(Failure::Alert(info));
        }
        messages
    }
}
