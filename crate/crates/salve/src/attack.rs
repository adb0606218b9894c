//! Attack scenarios against a simulated deployment. Each scenario wires an
//! adversary onto the victim's link (the first client), runs the world and
//! reports what the victim concluded.
//!
//! The adversary may hold a certificate for the victim's domain issued by
//! the trusted CA, the server's private key, a SIM of its own, or control
//! over unsigned DNS traffic, depending on the scenario.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;

use salve_core::client::{ClientPolicy, ConnectionStatus, Failure, Reason};
use salve_core::crypto::{derive_master_secret, session_digest, Digest};
use salve_core::dns::{DnsError, Name, ResourceRecord, RrType, ZoneAnswer};
use salve_core::gmlc::MlpRequest;
use salve_core::server::{Batching, ConnId};
use salve_core::tls::{
    AlertCode, ClientConfig, ClientEvent, ClientSession, Extension, HandshakeMessage, HandshakeTranscript,
    KeyExchangeMode, MessageType, RecordKeys, ServerEvent, ServerSession, StatementPayload, SALVE_EXTENSION,
    PREMASTER_LEN,
};

use crate::mlp;
use crate::sim::Envelope;
use crate::world::{
    Adversary, AdversaryCtx, AdversaryReport, Deployment, Keys, Outcome, Topology, Wire, World, WorldConfig,
    WorldReport, ADVERSARY_CONN_BASE, ADVERSARY_CREDENTIAL, ADVERSARY_SIM, FIRST_CLIENT, GMLC, SERVER,
};
use crate::Error;

/// Application data the hijacking adversary injects into the victim's
/// session.
pub const FORGED_RESPONSE: &[u8] = b"HTTP/1.1 200 OK\r\n\r\nbalance: 0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// No adversary; the victim must accept.
    Honest,
    /// Man in the middle with a mis-issued certificate forwards the
    /// statement the real server obtained for the adversary's own session.
    RelayStatement,
    /// Man in the middle asks the GMLC for a statement about its own SIM,
    /// correctly bound to the victim's session.
    OwnSimStatement,
    /// A passive tap that holds the server's private key tries to recover
    /// the master secret and hijack the session.
    PassiveHijack(KeyExchangeMode),
    /// The SALVE extension is removed from both hellos.
    DowngradeStrip,
    /// The LOC records are rewritten to the adversary's location.
    DnsTamper,
    /// The genuine statement is held back past the freshness threshold.
    StaleReplay,
    /// Under Merkle batching, the man in the middle relays a statement and
    /// inclusion proof issued for a different session of the same batch.
    MerkleCrossSession,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::Honest,
        Scenario::RelayStatement,
        Scenario::OwnSimStatement,
        Scenario::PassiveHijack(KeyExchangeMode::StaticRsa),
        Scenario::PassiveHijack(KeyExchangeMode::Dhe),
        Scenario::DowngradeStrip,
        Scenario::DnsTamper,
        Scenario::StaleReplay,
        Scenario::MerkleCrossSession,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Honest => "honest",
            Scenario::RelayStatement => "relay-statement",
            Scenario::OwnSimStatement => "own-sim-statement",
            Scenario::PassiveHijack(KeyExchangeMode::StaticRsa) => "passive-rsa-hijack",
            Scenario::PassiveHijack(KeyExchangeMode::Dhe) => "passive-dhe-hijack",
            Scenario::DowngradeStrip => "downgrade-strip",
            Scenario::DnsTamper => "dns-tamper",
            Scenario::StaleReplay => "stale-replay",
            Scenario::MerkleCrossSession => "merkle-cross-session",
        }
    }

    /// The outcome a sound deployment produces.
    pub fn expected(self) -> Expected {
        match self {
            Scenario::Honest => Expected::Accepted,
            Scenario::RelayStatement => Expected::Rejected(Reason::DigestMismatch),
            Scenario::OwnSimStatement => Expected::Rejected(Reason::LocationMismatch),
            Scenario::PassiveHijack(KeyExchangeMode::StaticRsa) => Expected::HijackSucceeded,
            Scenario::PassiveHijack(KeyExchangeMode::Dhe) => Expected::HijackFailed,
            Scenario::DowngradeStrip => Expected::Rejected(Reason::Downgrade),
            Scenario::DnsTamper => Expected::DnsValidationFailure,
            Scenario::StaleReplay => Expected::Rejected(Reason::Stale),
            Scenario::MerkleCrossSession => Expected::Rejected(Reason::MerkleProofInvalid),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
            Error::Parse(format!("unknown scenario `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expected {
    Accepted,
    Rejected(Reason),
    DnsValidationFailure,
    HijackSucceeded,
    HijackFailed,
}

impl fmt::Display for Expected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expected::Accepted => f.write_str("client-accepted"),
            Expected::Rejected(r) => write!(f, "client-rejected({r})"),
            Expected::DnsValidationFailure => f.write_str("client-rejected(dns-validation)"),
            Expected::HijackSucceeded => f.write_str("hijack-succeeded"),
            Expected::HijackFailed => f.write_str("hijack-failed"),
        }
    }
}

/// Why the victim refused to proceed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    Verdict(Reason),
    Dns(DnsError),
    Alert { code: AlertCode, remote: bool },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Verdict(r) => write!(f, "{r}"),
            Rejection::Dns(e) => write!(f, "dns: {e}"),
            Rejection::Alert { code, remote: true } => write!(f, "received alert {code}"),
            Rejection::Alert { code, remote: false } => write!(f, "alert {code}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackOutcome {
    /// The victim established a verified session; a breach unless the
    /// run was honest.
    Accepted,
    Rejected(Rejection),
    HijackSucceeded,
    HijackFailed,
    /// The victim never finished.
    Incomplete,
    SetupError(String),
}

impl AttackOutcome {
    pub fn matches(&self, expected: Expected) -> bool {
        match (self, expected) {
            (AttackOutcome::Accepted, Expected::Accepted)
            | (AttackOutcome::HijackSucceeded, Expected::HijackSucceeded)
            | (AttackOutcome::HijackFailed, Expected::HijackFailed) => true,
            (AttackOutcome::Rejected(Rejection::Verdict(r)), Expected::Rejected(want)) => *r == want,
            (AttackOutcome::Rejected(Rejection::Dns(e)), Expected::DnsValidationFailure) => e.is_validation(),
            _ => false,
        }
    }
}

impl fmt::Display for AttackOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackOutcome::Accepted => f.write_str("client-accepted"),
            AttackOutcome::Rejected(r) => write!(f, "client-rejected({r})"),
            AttackOutcome::HijackSucceeded => f.write_str("hijack-succeeded"),
            AttackOutcome::HijackFailed => f.write_str("hijack-failed"),
            AttackOutcome::Incomplete => f.write_str("incomplete"),
            AttackOutcome::SetupError(e) => write!(f, "setup-error({e})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackReport {
    pub scenario: Scenario,
    pub expected: Expected,
    pub outcome: AttackOutcome,
    /// The victim reached an established session whose keys the adversary
    /// holds, or accepted a statement issued for another session.
    pub breach: bool,
    /// How many other clients in the run established verified sessions.
    pub bystanders_verified: usize,
    pub bystanders: usize,
    pub notes: Vec<String>,
}

impl AttackReport {
    pub fn passed(&self) -> bool {
        self.outcome.matches(self.expected) && self.bystanders_verified == self.bystanders
    }
}

impl fmt::Display for AttackReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} (expected {}){}",
            self.scenario,
            self.outcome,
            self.expected,
            if self.passed() { "" } else { " UNEXPECTED" }
        )
    }
}

/// Runs `scenario` on a deployment built from `topology`. The tap and the
/// per-scenario settings are applied on top of it.
pub fn run_attack(scenario: Scenario, topology: &Topology) -> Result<AttackReport, Error> {
    let keys = Keys::cached(topology.seed)?;
    run_attack_with(scenario, keys, topology)
}

pub fn run_attack_with(scenario: Scenario, keys: Arc<Keys>, topology: &Topology) -> Result<AttackReport, Error> {
    let mut topology = topology.clone();
    topology.tap = scenario != Scenario::Honest;
    let mut config = WorldConfig { policy: ClientPolicy::default(), ..WorldConfig::default() };
    let adversary: Option<Box<dyn Adversary>> = match scenario {
        Scenario::Honest => None,
        Scenario::RelayStatement => Some(Box::new(Mitm::new(Supply::Relay))),
        Scenario::OwnSimStatement => Some(Box::new(Mitm::new(Supply::OwnSim))),
        Scenario::PassiveHijack(mode) => {
            config.server_modes = vec![mode];
            config.client_modes = vec![mode];
            config.linger_ms = Some(200.0);
            Some(Box::new(PassiveHijacker::new(keys.clone())))
        }
        Scenario::DowngradeStrip => Some(Box::new(Forwarder::new(Meddle::StripSalve))),
        Scenario::DnsTamper => Some(Box::new(Forwarder::new(Meddle::RewriteLoc))),
        Scenario::StaleReplay => {
            let hold_ms = (config.policy.freshness_threshold + 1) as f64 * 1_000.0;
            Some(Box::new(Forwarder::new(Meddle::HoldStatement { hold_ms })))
        }
        Scenario::MerkleCrossSession => {
            config.batching = Batching::Merkle { window_ms: 50, max_batch: 8 };
            config.clients = 3;
            Some(Box::new(Mitm::new(Supply::Relay)))
        }
    };
    let deployment = match Deployment::new(keys, topology) {
        Ok(d) => Arc::new(d),
        Err(e) => return Ok(setup_error(scenario, e)),
    };
    let world = match World::new(deployment, config, adversary) {
        Ok(w) => w,
        Err(e) => return Ok(setup_error(scenario, e)),
    };
    Ok(judge(scenario, world.run()))
}

fn setup_error(scenario: Scenario, e: Error) -> AttackReport {
    AttackReport {
        scenario,
        expected: scenario.expected(),
        outcome: AttackOutcome::SetupError(e.to_string()),
        breach: false,
        bystanders_verified: 0,
        bystanders: 0,
        notes: Vec::new(),
    }
}

fn judge(scenario: Scenario, report: WorldReport) -> AttackReport {
    let adv = report.adversary.clone().unwrap_or_default();
    let victim = report.outcomes.iter().find(|o| o.client == 0);
    let bystanders: Vec<_> = report.outcomes.iter().filter(|o| o.client != 0).collect();
    let bystanders_verified = bystanders
        .iter()
        .filter(|o| o.outcome == Outcome::Finished(ConnectionStatus::Established { verified: true }))
        .count();
    let mut outcome = match victim.map(|v| &v.outcome) {
        None => AttackOutcome::SetupError("the victim never ran".into()),
        Some(Outcome::DnsFailure(e)) => AttackOutcome::Rejected(Rejection::Dns(*e)),
        Some(Outcome::Incomplete) => AttackOutcome::Incomplete,
        Some(Outcome::Finished(ConnectionStatus::Established { .. })) => AttackOutcome::Accepted,
        Some(Outcome::Finished(ConnectionStatus::Failed(f))) => AttackOutcome::Rejected(match f.reason() {
            Some(r) => Rejection::Verdict(r),
            None => match f {
                Failure::Alert(a) => Rejection::Alert { code: a.code, remote: a.remote },
                Failure::Verdict(r) => Rejection::Verdict(*r),
            },
        }),
        Some(Outcome::Finished(ConnectionStatus::Handshaking)) => AttackOutcome::Incomplete,
    };
    let victim_digest = victim.and_then(|v| v.session_digest);
    let keys_known = victim_digest.is_some_and(|d| adv.known_sessions.contains(&d));
    if let Scenario::PassiveHijack(_) = scenario {
        let forged = victim.is_some_and(|v| v.received.iter().any(|d| d == FORGED_RESPONSE));
        outcome = if outcome == AttackOutcome::Accepted && keys_known && adv.hijack == Some(true) && forged {
            AttackOutcome::HijackSucceeded
        } else {
            AttackOutcome::HijackFailed
        };
    }
    let breach = match outcome {
        AttackOutcome::HijackSucceeded => true,
        AttackOutcome::Accepted => scenario != Scenario::Honest || keys_known,
        _ => false,
    };
    AttackReport {
        scenario,
        expected: scenario.expected(),
        outcome,
        breach,
        bystanders_verified,
        bystanders: bystanders.len(),
        notes: adv.notes,
    }
}

fn encode(messages: Vec<HandshakeMessage>) -> impl Iterator<Item = Vec<u8>> {
    messages.into_iter().map(|m| m.encode())
}

/// Where a man in the middle gets a statement for the victim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Supply {
    /// From the real server, over the adversary's own connection.
    Relay,
    /// From the GMLC, for the adversary's own SIM.
    OwnSim,
}

/// Terminates the victim's handshake with the mis-issued certificate.
struct Mitm {
    supply: Supply,
    victim: Option<(usize, ConnId, ServerSession<ChaCha20Rng>)>,
    /// Digest the victim's session is waiting for a statement on.
    waiting: Option<Digest>,
    relay: Option<ClientSession<ChaCha20Rng>>,
    stock: Option<StatementPayload>,
    known: Vec<Digest>,
    notes: Vec<String>,
}

const RELAY_CONN: ConnId = ADVERSARY_CONN_BASE;

impl Mitm {
    fn new(supply: Supply) -> Mitm {
        Mitm { supply, victim: None, waiting: None, relay: None, stock: None, known: Vec::new(), notes: Vec::new() }
    }

    fn send_to_victim(&mut self, ctx: &mut AdversaryCtx<'_>, messages: Vec<HandshakeMessage>) {
        let Some((node, conn, _)) = &self.victim else { return };
        for bytes in encode(messages) {
            ctx.inject(SERVER, *node, Wire::Tls { conn: *conn, bytes });
        }
    }

    fn try_deliver(&mut self, ctx: &mut AdversaryCtx<'_>) {
        let (Some(_), Some(payload)) = (self.waiting, self.stock.as_ref()) else { return };
        let Some((_, _, session)) = self.victim.as_mut() else { return };
        match session.deliver_statement(payload) {
            Ok(m) => {
                self.waiting = None;
                self.send_to_victim(ctx, vec![m]);
            }
            Err(e) => self.notes.push(format!("could not deliver: {e}")),
        }
    }

    fn start_relay(&mut self, ctx: &mut AdversaryCtx<'_>) {
        let d = ctx.deployment;
        let config = ClientConfig::new(d.keys.ca.public().clone(), d.topology.domain.trim_end_matches('.'));
        let (session, hello) = ClientSession::start(config, ChaCha20Rng::seed_from_u64(0xad));
        self.relay = Some(session);
        ctx.send(SERVER, Wire::Tls { conn: RELAY_CONN, bytes: hello.encode() });
    }

    fn request_own_sim(&mut self, ctx: &mut AdversaryCtx<'_>, digest: Digest) {
        let req = MlpRequest {
            id: 1,
            credential: ADVERSARY_CREDENTIAL.into(),
            sim_ids: vec![ADVERSARY_SIM.into()],
            session_digest: digest,
        };
        ctx.send(GMLC, Wire::Mlp(mlp::encode_request(&req)));
    }

    fn on_victim_bytes(&mut self, ctx: &mut AdversaryCtx<'_>, node: usize, conn: ConnId, bytes: &[u8]) {
        if self.victim.is_none() {
            let tls = ctx.deployment.adversary_tls(vec![KeyExchangeMode::Dhe]);
            self.victim = Some((node, conn, ServerSession::new(tls, ChaCha20Rng::seed_from_u64(0xbad))));
            if self.supply == Supply::Relay {
                self.start_relay(ctx);
            }
        }
        let Some((_, _, session)) = self.victim.as_mut().filter(|v| v.1 == conn) else { return };
        let out = session.handle_bytes(bytes);
        if let Some(k) = session.session_digest() {
            if !self.known.contains(&k) {
                self.known.push(k);
            }
        }
        self.send_to_victim(ctx, out.messages);
        if let Some(ServerEvent::StatementNeeded(digest)) = out.event {
            self.waiting = Some(digest);
            match self.supply {
                Supply::Relay => self.try_deliver(ctx),
                Supply::OwnSim => self.request_own_sim(ctx, digest),
            }
        }
    }

    fn on_server_bytes(&mut self, ctx: &mut AdversaryCtx<'_>, bytes: &[u8]) {
        let Some(relay) = self.relay.as_mut() else { return };
        let out = relay.handle_bytes(bytes);
        for bytes in encode(out.messages) {
            ctx.send(SERVER, Wire::Tls { conn: RELAY_CONN, bytes });
        }
        match out.event {
            Some(ClientEvent::StatementReceived(payload)) => {
                let _ = relay.accept_statement();
                self.stock = Some(payload);
                self.try_deliver(ctx);
            }
            Some(ClientEvent::Aborted(a)) => self.notes.push(format!("relay connection aborted: {}", a.code)),
            _ => {}
        }
    }
}

impl Adversary for Mitm {
    fn on_wire(&mut self, ctx: &mut AdversaryCtx<'_>, env: Envelope<Wire>) {
        match env.msg {
            Wire::Tls { conn, bytes } if env.from >= FIRST_CLIENT => self.on_victim_bytes(ctx, env.from, conn, &bytes),
            Wire::Tls { conn: RELAY_CONN, bytes } if env.from == SERVER => self.on_server_bytes(ctx, &bytes),
            Wire::Mlp(xml) if env.from == GMLC => match mlp::decode_response(&xml) {
                Ok(resp) => match resp.statement {
                    Some(s) => {
                        self.stock = Some(StatementPayload { statement: s.to_bytes(), proof: None });
                        self.try_deliver(ctx);
                    }
                    None => self.notes.push(format!("GMLC refused: {}", resp.status.as_str())),
                },
                Err(e) => self.notes.push(format!("bad GMLC answer: {e}")),
            },
            _ => {}
        }
    }

    fn report(&self) -> AdversaryReport {
        AdversaryReport { known_sessions: self.known.clone(), hijack: None, notes: self.notes.clone() }
    }
}

/// A tap that forwards everything, possibly altered or delayed.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Meddle {
    StripSalve,
    RewriteLoc,
    HoldStatement { hold_ms: f64 },
}

struct Forwarder {
    meddle: Meddle,
    held: VecDeque<Envelope<Wire>>,
    notes: Vec<String>,
}

impl Forwarder {
    fn new(meddle: Meddle) -> Forwarder {
        Forwarder { meddle, held: VecDeque::new(), notes: Vec::new() }
    }
}

fn strip_salve(extensions: &mut Vec<Extension>) -> bool {
    let before = extensions.len();
    extensions.retain(|e| e.kind != SALVE_EXTENSION);
    extensions.len() != before
}

impl Adversary for Forwarder {
    fn on_wire(&mut self, ctx: &mut AdversaryCtx<'_>, mut env: Envelope<Wire>) {
        match (&self.meddle, &mut env.msg) {
            (Meddle::StripSalve, Wire::Tls { bytes, .. }) => {
                if let Ok(mut m) = HandshakeMessage::decode(bytes) {
                    let stripped = match &mut m {
                        HandshakeMessage::ClientHello { extensions, .. }
                        | HandshakeMessage::ServerHello { extensions, .. } => strip_salve(extensions),
                        _ => false,
                    };
                    if stripped {
                        self.notes.push(format!("stripped SALVE from {:?}", m.message_type()));
                        *bytes = m.encode();
                    }
                }
            }
            (Meddle::HoldStatement { hold_ms }, Wire::Tls { bytes, .. })
                if bytes.first() == Some(&(MessageType::LocationStatement as u8)) =>
            {
                let hold_ms = *hold_ms;
                self.held.push_back(env);
                ctx.timer(hold_ms, 0);
                return;
            }
            _ => {}
        }
        ctx.inject(env.from, env.to, env.msg);
    }

    fn on_timer(&mut self, ctx: &mut AdversaryCtx<'_>, _token: u64) {
        if let Some(env) = self.held.pop_front() {
            self.notes.push(format!("released a statement after {:.0} s", ctx.now_ns() as f64 / 1e9));
            ctx.inject(env.from, env.to, env.msg);
        }
    }

    fn tamper_dns(&mut self, _server: &Name, qname: &Name, answer: &mut ZoneAnswer) {
        let (Meddle::RewriteLoc, ZoneAnswer::Authoritative(records)) = (&self.meddle, answer) else { return };
        let fake = salve_core::geo::GeoLocation::new(52.3676, 4.9041, 2.0);
        for r in records.iter_mut().filter(|r| r.rrtype == RrType::Loc) {
            if let Ok(rr) = ResourceRecord::loc(qname.clone(), r.ttl, &fake) {
                *r = rr;
                self.notes.push(format!("rewrote a LOC record of {qname}"));
            }
        }
    }

    fn report(&self) -> AdversaryReport {
        AdversaryReport { notes: self.notes.clone(), ..AdversaryReport::default() }
    }
}

/// Forwards everything unchanged while trying to recover each session's
/// master secret with the server's long-term key. On success it reads the
/// client's request and appends a forged response.
struct PassiveHijacker {
    keys: Arc<Keys>,
    sessions: BTreeMap<ConnId, Tapped>,
    known: Vec<Digest>,
    read: bool,
    notes: Vec<String>,
}

#[derive(Default)]
struct Tapped {
    transcript: HandshakeTranscript,
    keys: Option<RecordKeys>,
}

impl PassiveHijacker {
    fn new(keys: Arc<Keys>) -> PassiveHijacker {
        PassiveHijacker { keys, sessions: BTreeMap::new(), known: Vec::new(), read: false, notes: Vec::new() }
    }
}

impl Adversary for PassiveHijacker {
    fn on_wire(&mut self, ctx: &mut AdversaryCtx<'_>, env: Envelope<Wire>) {
        let Wire::Tls { conn, bytes } = &env.msg else {
            ctx.inject(env.from, env.to, env.msg);
            return;
        };
        let (conn, bytes) = (*conn, bytes.clone());
        let (from, to) = (env.from, env.to);
        ctx.inject(from, to, env.msg);
        let Ok(m) = HandshakeMessage::decode(&bytes) else { return };
        let mut forged = None;
        let mut learned = None;
        let mut note = None;
        let tapped = self.sessions.entry(conn).or_default();
        match &m {
            HandshakeMessage::ClientHello { .. }
            | HandshakeMessage::ServerHello { .. }
            | HandshakeMessage::ServerCert { .. }
            | HandshakeMessage::ServerKeyShare { .. } => tapped.transcript.append(&bytes),
            HandshakeMessage::ClientKeyShare { payload } => {
                tapped.transcript.append(&bytes);
                let premaster = self.keys.server.decrypt(payload).ok().filter(|p| p.len() == PREMASTER_LEN);
                match premaster {
                    Some(p) => {
                        let master = derive_master_secret(&p, &tapped.transcript.hash());
                        learned = Some(session_digest(&master));
                        tapped.keys = Some(RecordKeys::derive(&master));
                    }
                    None => note = Some("key share does not decrypt under the server key".to_string()),
                }
            }
            HandshakeMessage::LocationStatement { sealed } => {
                if let Some(k) = tapped.keys.as_mut() {
                    let _ = k.server_write.open(MessageType::LocationStatement as u8, sealed);
                }
            }
            HandshakeMessage::ApplicationData { sealed } => {
                if let Some(k) = tapped.keys.as_mut() {
                    if from >= FIRST_CLIENT {
                        if let Ok(plain) = k.client_write.open(MessageType::ApplicationData as u8, sealed) {
                            note = Some(format!("read {} bytes from the client", plain.len()));
                            self.read = true;
                        }
                    } else if k.server_write.open(MessageType::ApplicationData as u8, sealed).is_ok() {
                        let sealed = k.server_write.seal(MessageType::ApplicationData as u8, FORGED_RESPONSE);
                        forged = Some(HandshakeMessage::ApplicationData { sealed });
                    }
                }
            }
            _ => {}
        }
        if let Some(d) = learned {
            self.known.push(d);
        }
        self.notes.extend(note);
        if let Some(m) = forged {
            ctx.inject(from, to, Wire::Tls { conn, bytes: m.encode() });
        }
    }

    fn report(&self) -> AdversaryReport {
        AdversaryReport { known_sessions: self.known.clone(), hijack: Some(self.read), notes: self.notes.clone() }
    }
}
