//! A full deployment on the simulated network: a DNSSEC hierarchy that
//! publishes the server's locations, a GMLC with a SIM registry, one web
//! server and any number of clients, plus an optional adversary.
//!
//! All parties run the real protocol state machines. Processing time is
//! charged to per-node CPUs, either from a fixed cost model (deterministic)
//! or from the measured wall time of each step.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;

use salve_core::client::{ClientContext, ClientPolicy, Connection, ConnectionStatus, VerificationVerdict};
use salve_core::crypto::{Digest, SigningIdentity};
use salve_core::dns::{
    ladns_lookup, DnsError, DnsTransport, Name, ResourceRecord, TrustAnchor, ValidatedRecordSet, Validity, Zone,
    ZoneAnswer, ZoneSet,
};
use salve_core::geo::GeoLocation;
use salve_core::gmlc::{issue_statement, SimRecord, SimRegistry};
use salve_core::server::{Batching, ConnId, ServerAction, ServerConfig, ServerEndpoint, ServerStats};
use salve_core::tls::{Certificate, KeyExchangeMode, MessageType, ServerTlsConfig};

use crate::kv::{parse_bool, KvFile};
use crate::mlp;
use crate::sim::{ms_to_ns, ns_to_ms, Cpu, Envelope, NodeId, SimEvent, SimNetwork, NS_PER_MS};
use crate::Error;

pub const SERVER: NodeId = 0;
pub const GMLC: NodeId = 1;
pub const ADVERSARY: NodeId = 2;
pub const FIRST_CLIENT: NodeId = 3;

/// Connection ids at or above this value belong to the adversary.
pub const ADVERSARY_CONN_BASE: ConnId = 0xffff_0000_0000;

pub const SERVER_CREDENTIAL: &str = "server-credential";
pub const ADVERSARY_CREDENTIAL: &str = "adversary-credential";
pub const ADVERSARY_SIM: &str = "228029999900001";

/// Every key in a deployment.
#[derive(Debug, Clone)]
pub struct Keys {
    pub ca: SigningIdentity,
    pub server: SigningIdentity,
    pub gmlc: SigningIdentity,
    /// The adversary's own key; the CA will certify it for the victim's
    /// domain when a scenario grants a mis-issued certificate.
    pub adversary: SigningIdentity,
    /// Zone keys, root first.
    pub zones: [SigningIdentity; 3],
}

impl Keys {
    pub fn generate(seed: u64) -> Result<Keys, Error> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut next = || SigningIdentity::generate(&mut rng);
        Ok(Keys {
            ca: next()?,
            server: next()?,
            gmlc: next()?,
            adversary: next()?,
            zones: [next()?, next()?, next()?],
        })
    }

    /// Keys for `seed`, generated once per process.
    pub fn cached(seed: u64) -> Result<Arc<Keys>, Error> {
        static CACHE: OnceLock<Mutex<BTreeMap<u64, Arc<Keys>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(k) = cache.lock().expect("key cache lock").get(&seed) {
            return Ok(k.clone());
        }
        let keys = Arc::new(Keys::generate(seed)?);
        Ok(cache.lock().expect("key cache lock").entry(seed).or_insert(keys).clone())
    }
}

#[cfg(test)]
pub(crate) fn test_keys() -> Arc<Keys> {
    Keys::cached(0x5a1e).expect("key generation")
}

/// Where everything is and how far apart.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub domain: String,
    pub ip: [u8; 4],
    /// Legitimate locations published in DNS.
    pub sites: Vec<GeoLocation>,
    /// Index into `sites` of the data center hosting the simulated server.
    pub server_site: usize,
    /// SIMs attached to the server, all at its site.
    pub server_sims: usize,
    pub adversary_location: GeoLocation,
    pub client_server_ms: f64,
    pub server_gmlc_ms: f64,
    /// One-way latency of every link touching the adversary.
    pub adversary_ms: f64,
    /// Route the first client's traffic to the server through the
    /// adversary. That client is the victim in attack scenarios.
    pub tap: bool,
    /// Publish SLVREQ = 1.
    pub slvreq: bool,
    /// Unix time at virtual time zero.
    pub start_time: u64,
    /// How long before the start the SIMs were last localized.
    pub sim_age_s: u64,
    pub server_cores: usize,
    pub gmlc_cores: usize,
    pub seed: u64,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            domain: "www.salve-demo-bank.com".into(),
            ip: [192, 0, 2, 10],
            sites: vec![GeoLocation::new(47.3769, 8.5417, 408.0), GeoLocation::new(50.1109, 8.6821, 112.0)],
            server_site: 0,
            server_sims: 1,
            adversary_location: GeoLocation::new(52.3676, 4.9041, 2.0),
            client_server_ms: 10.0,
            server_gmlc_ms: 15.0,
            adversary_ms: 5.0,
            tap: false,
            slvreq: true,
            start_time: 1_700_000_000,
            sim_age_s: 30,
            server_cores: 1,
            gmlc_cores: 1,
            seed: 1,
        }
    }
}

fn parse_ip(s: &str) -> Result<[u8; 4], Error> {
    let ip: std::net::Ipv4Addr = s.parse().map_err(|_| Error::Parse(format!("bad IPv4 address `{s}`")))?;
    Ok(ip.octets())
}

fn parse_loc(key: &str, s: &str) -> Result<GeoLocation, Error> {
    s.parse().map_err(|e| Error::Parse(format!("`{key}`: {e}")))
}

impl Topology {
    /// Reads a topology file; absent keys keep their defaults. Sites are
    /// listed one per `site` key in LOC text form.
    pub fn from_kv(kv: &KvFile) -> Result<Topology, Error> {
        let d = Topology::default();
        let sites: Vec<GeoLocation> = kv.get_all("site").map(|s| parse_loc("site", s)).collect::<Result<_, _>>()?;
        let t = Topology {
            domain: kv.get("domain").map(|s| s.trim_end_matches('.').to_owned()).unwrap_or(d.domain),
            ip: kv.get("ip").map(parse_ip).transpose()?.unwrap_or(d.ip),
            sites: if sites.is_empty() { d.sites } else { sites },
            server_site: kv.parsed_or("server_site", d.server_site)?,
            server_sims: kv.parsed_or("server_sims", d.server_sims)?,
            adversary_location: kv
                .get("adversary_location")
                .map(|s| parse_loc("adversary_location", s))
                .transpose()?
                .unwrap_or(d.adversary_location),
            client_server_ms: kv.parsed_or("latency.client_server_ms", d.client_server_ms)?,
            server_gmlc_ms: kv.parsed_or("latency.server_gmlc_ms", d.server_gmlc_ms)?,
            adversary_ms: kv.parsed_or("latency.adversary_ms", d.adversary_ms)?,
            tap: match kv.get("tap") {
                None => d.tap,
                Some("client-server") => true,
                Some("none") => false,
                Some(other) => return Err(Error::Parse(format!("`tap`: expected client-server or none, got `{other}`"))),
            },
            slvreq: kv.get("slvreq").map(parse_bool).transpose()?.unwrap_or(d.slvreq),
            start_time: kv.parsed_or("start_time", d.start_time)?,
            sim_age_s: kv.parsed_or("sim_age_s", d.sim_age_s)?,
            server_cores: kv.parsed_or("server_cores", d.server_cores)?,
            gmlc_cores: kv.parsed_or("gmlc_cores", d.gmlc_cores)?,
            seed: kv.parsed_or("seed", d.seed)?,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.push("domain", &self.domain);
        kv.push("ip", std::net::Ipv4Addr::from(self.ip));
        for s in &self.sites {
            kv.push("site", s);
        }
        kv.push("server_site", self.server_site);
        kv.push("server_sims", self.server_sims);
        kv.push("adversary_location", self.adversary_location);
        kv.push("latency.client_server_ms", self.client_server_ms);
        kv.push("latency.server_gmlc_ms", self.server_gmlc_ms);
        kv.push("latency.adversary_ms", self.adversary_ms);
        kv.push("tap", if self.tap { "client-server" } else { "none" });
        kv.push("slvreq", self.slvreq);
        kv.push("start_time", self.start_time);
        kv.push("sim_age_s", self.sim_age_s);
        kv.push("server_cores", self.server_cores);
        kv.push("gmlc_cores", self.gmlc_cores);
        kv.push("seed", self.seed);
        kv
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.sites.is_empty() {
            return Err(Error::Parse("a topology needs at least one site".into()));
        }
        if self.server_site >= self.sites.len() {
            return Err(Error::Parse(format!("server_site {} but only {} sites", self.server_site, self.sites.len())));
        }
        if self.server_sims == 0 {
            return Err(Error::Parse("server_sims must be at least 1".into()));
        }
        for ms in [self.client_server_ms, self.server_gmlc_ms, self.adversary_ms] {
            if !(ms.is_finite() && ms >= 0.0) {
                return Err(Error::Parse(format!("latency {ms} is not a non-negative number")));
            }
        }
        for g in self.sites.iter().chain([&self.adversary_location]) {
            g.validate()?;
        }
        Ok(())
    }

    pub fn server_location(&self) -> GeoLocation {
        self.sites[self.server_site]
    }
}

/// The static part of a run: keys, signed zones, certificates and the
/// GMLC's registry.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub keys: Arc<Keys>,
    pub topology: Topology,
    pub domain: Name,
    pub zones: ZoneSet,
    pub anchor: TrustAnchor,
    pub server_cert: Certificate,
    /// A certificate for the victim's domain over the adversary's key, as
    /// a compromised or coerced CA would issue.
    pub adversary_cert: Certificate,
    pub registry: SimRegistry,
    pub server_sims: Vec<String>,
}

pub fn server_sim_id(i: usize) -> String {
    format!("2280100000{i:05}")
}

impl Deployment {
    pub fn new(keys: Arc<Keys>, topology: Topology) -> Result<Deployment, Error> {
        topology.validate()?;
        let domain = Name::parse(&topology.domain)?;
        let mut apexes = Vec::new();
        let mut cur = domain.parent();
        while let Some(n) = cur {
            cur = n.parent();
            apexes.push(n);
        }
        apexes.reverse();
        let mut zones: Vec<Zone> = apexes
            .iter()
            .enumerate()
            .map(|(i, apex)| Zone::new(apex.clone(), keys.zones[i.min(2)].clone()))
            .collect();
        let home = zones.last_mut().ok_or_else(|| Error::Parse("the domain must not be the root".into()))?;
        home.push(ResourceRecord::a(domain.clone(), 3600, topology.ip))?;
        for site in &topology.sites {
            home.push(ResourceRecord::loc(domain.clone(), 3600, site)?)?;
        }
        if topology.slvreq {
            home.push(ResourceRecord::slvreq(domain.clone(), 3600, true))?;
        }
        let zones = ZoneSet::sign_hierarchy(zones, 86_400, Validity::default())?;
        let anchor = TrustAnchor::for_zone(zones.root().expect("the root zone is always built"));
        let host = topology.domain.trim_end_matches('.');
        let server_cert = Certificate::issue(host, keys.server.public(), &keys.ca)?;
        let adversary_cert = Certificate::issue(host, keys.adversary.public(), &keys.ca)?;
        let localized_at = topology.start_time.saturating_sub(topology.sim_age_s);
        let mut registry = SimRegistry::new();
        let server_sims: Vec<String> = (0..topology.server_sims).map(server_sim_id).collect();
        for id in &server_sims {
            registry.register(SimRecord::new(id, SERVER_CREDENTIAL, topology.server_location(), localized_at)?)?;
        }
        registry.register(SimRecord::new(
            ADVERSARY_SIM,
            ADVERSARY_CREDENTIAL,
            topology.adversary_location,
            localized_at,
        )?)?;
        Ok(Deployment {
            keys,
            topology,
            domain,
            zones,
            anchor,
            server_cert,
            adversary_cert,
            registry,
            server_sims,
        })
    }

    pub fn server_tls(&self, modes: Vec<KeyExchangeMode>, salve: bool) -> Arc<ServerTlsConfig> {
        Arc::new(ServerTlsConfig { certificate: self.server_cert.clone(), key: self.keys.server.clone(), modes, salve })
    }

    /// The adversary posing as the server with its mis-issued certificate.
    pub fn adversary_tls(&self, modes: Vec<KeyExchangeMode>) -> Arc<ServerTlsConfig> {
        Arc::new(ServerTlsConfig {
            certificate: self.adversary_cert.clone(),
            key: self.keys.adversary.clone(),
            modes,
            salve: true,
        })
    }

    pub fn client_context(&self, policy: ClientPolicy, modes: Vec<KeyExchangeMode>, salve: bool) -> ClientContext {
        ClientContext {
            ca_key: self.keys.ca.public().clone(),
            gmlc_key: self.keys.gmlc.public().clone(),
            policy,
            modes,
            salve,
        }
    }

    /// Unix seconds at virtual time `ns`.
    pub fn unix_time(&self, ns: u64) -> u64 {
        self.topology.start_time + ns / 1_000_000_000
    }
}

/// What travels on the simulated links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Wire {
    /// One encoded handshake or record message.
    Tls { conn: ConnId, bytes: Vec<u8> },
    /// The client hangs up.
    Close { conn: ConnId },
    /// An MLP document on the server to GMLC channel.
    Mlp(String),
}

/// Virtual processing costs in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub rsa_sign_ms: f64,
    pub rsa_verify_ms: f64,
    pub rsa_decrypt_ms: f64,
    pub rsa_encrypt_ms: f64,
    pub x25519_ms: f64,
    /// Parsing, hashing and MACing one handshake message.
    pub message_ms: f64,
    /// Building or parsing one MLP document.
    pub mlp_ms: f64,
}

impl Default for CostModel {
    /// Rough figures for RSA-2048 and X25519 in an optimized TLS library
    /// on a desktop core.
    fn default() -> Self {
        CostModel {
            rsa_sign_ms: 0.7,
            rsa_verify_ms: 0.03,
            rsa_decrypt_ms: 0.7,
            rsa_encrypt_ms: 0.03,
            x25519_ms: 0.05,
            message_ms: 0.005,
            mlp_ms: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Timing {
    Virtual(CostModel),
    /// Charge the measured wall time of each step. Not reproducible.
    Measured,
}

impl Default for Timing {
    fn default() -> Self {
        Timing::Virtual(CostModel::default())
    }
}

fn message_type(bytes: &[u8]) -> Option<MessageType> {
    bytes.first().and_then(|b| MessageType::from_code(*b))
}

impl CostModel {
    fn server_tls(&self, t: Option<MessageType>, mode: Option<KeyExchangeMode>) -> f64 {
        self.message_ms
            + match (t, mode) {
                (Some(MessageType::ClientHello), _) => self.rsa_sign_ms + self.x25519_ms,
                (Some(MessageType::ClientKeyShare), Some(KeyExchangeMode::StaticRsa)) => self.rsa_decrypt_ms,
                (Some(MessageType::ClientKeyShare), _) => self.x25519_ms,
                _ => 0.0,
            }
    }

    fn client_tls(&self, t: Option<MessageType>, static_rsa: bool) -> f64 {
        self.message_ms
            + match t {
                Some(MessageType::ServerCert) if static_rsa => self.rsa_verify_ms + self.rsa_encrypt_ms,
                Some(MessageType::ServerCert) => self.rsa_verify_ms,
                Some(MessageType::ServerKeyShare) => self.rsa_verify_ms + 2.0 * self.x25519_ms,
                Some(MessageType::LocationStatement) => self.rsa_verify_ms,
                _ => 0.0,
            }
    }
}

/// Per-run settings.
#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub batching: Batching,
    pub server_modes: Vec<KeyExchangeMode>,
    pub client_modes: Vec<KeyExchangeMode>,
    /// Server supports the extension.
    pub server_salve: bool,
    /// Clients support the extension.
    pub client_salve: bool,
    pub multi_sim: bool,
    pub policy: ClientPolicy,
    pub clients: usize,
    /// Connections each client makes; `None` loops until the deadline.
    pub connections_per_client: Option<u64>,
    pub duration_ms: Option<f64>,
    pub timing: Timing,
    /// Clients send one request once established and keep the connection
    /// open this long for the answer.
    pub linger_ms: Option<f64>,
    /// Every GMLC request fails.
    pub gmlc_down: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            batching: Batching::PerConnection,
            server_modes: vec![KeyExchangeMode::Dhe],
            client_modes: vec![KeyExchangeMode::Dhe],
            server_salve: true,
            client_salve: true,
            multi_sim: false,
            policy: ClientPolicy::default(),
            clients: 1,
            connections_per_client: Some(1),
            duration_ms: None,
            timing: Timing::default(),
            linger_ms: None,
            gmlc_down: false,
        }
    }
}

pub const CLIENT_REQUEST: &[u8] = b"GET / HTTP/1.1\r\nHost: bank\r\n\r\n";
pub const SERVER_RESPONSE: &[u8] = b"HTTP/1.1 200 OK\r\n\r\nbalance: 1000";

/// Hooks for an active or passive attacker. The adversary node receives
/// everything on tapped links and anything addressed to it.
pub trait Adversary {
    fn on_wire(&mut self, ctx: &mut AdversaryCtx<'_>, env: Envelope<Wire>);

    fn on_timer(&mut self, _ctx: &mut AdversaryCtx<'_>, _token: u64) {}

    /// Called for every DNS answer the clients receive.
    fn tamper_dns(&mut self, _server: &Name, _qname: &Name, _answer: &mut ZoneAnswer) {}

    fn report(&self) -> AdversaryReport;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdversaryReport {
    /// Digests of every master secret the adversary holds.
    pub known_sessions: Vec<Digest>,
    /// Whether the adversary could read and forge application data, for
    /// scenarios that try.
    pub hijack: Option<bool>,
    pub notes: Vec<String>,
}

pub struct AdversaryCtx<'a> {
    pub net: &'a mut SimNetwork<Wire>,
    pub deployment: &'a Deployment,
}

impl AdversaryCtx<'_> {
    pub fn now_ns(&self) -> u64 {
        self.net.now_ns()
    }

    /// Forwards or forges a message as `from` on the tapped link.
    pub fn inject(&mut self, from: NodeId, to: NodeId, msg: Wire) {
        let now = self.net.now_ns();
        self.net.inject(ADVERSARY, from, to, msg, now);
    }

    /// Sends as the adversary itself.
    pub fn send(&mut self, to: NodeId, msg: Wire) {
        self.net.send(ADVERSARY, to, msg);
    }

    pub fn timer(&mut self, after_ms: f64, token: u64) {
        let at = self.net.now_ns() + ms_to_ns(after_ms);
        self.net.timer_at(ADVERSARY, at, token);
    }
}

/// How a client's attempt ended.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    DnsFailure(DnsError),
    Finished(ConnectionStatus),
    /// Still handshaking when the run ended.
    Incomplete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientOutcome {
    pub client: usize,
    pub conn: Option<ConnId>,
    pub outcome: Outcome,
    pub verdict: Option<VerificationVerdict>,
    pub session_digest: Option<Digest>,
    pub started_ms: f64,
    pub finished_ms: f64,
    /// Application data the client accepted.
    pub received: Vec<Vec<u8>>,
}

impl ClientOutcome {
    pub fn established(&self) -> bool {
        matches!(self.outcome, Outcome::Finished(ConnectionStatus::Established { .. }))
    }
}

#[derive(Debug, Clone)]
pub struct WorldReport {
    pub outcomes: Vec<ClientOutcome>,
    /// Server-side handshake latency: ClientHello received to final flight
    /// sent.
    pub latencies_ms: Vec<f64>,
    pub gmlc_rtts_ms: Vec<f64>,
    pub server_stats: ServerStats,
    pub gmlc_served: u64,
    pub adversary: Option<AdversaryReport>,
    /// Extra LOC and RRSIG bytes in the DNS answer, per lookup.
    pub ladns_extra_bytes: usize,
    pub end_ms: f64,
    pub server_busy_ms: f64,
}

impl WorldReport {
    pub fn completed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.established()).count()
    }
}

struct ClientNode {
    index: usize,
    node: NodeId,
    records: Option<ValidatedRecordSet>,
    current: Option<Current>,
    opened: u64,
    cpu: Cpu,
}

struct Current {
    conn: ConnId,
    connection: Connection<ChaCha20Rng>,
    started: u64,
    /// Established and waiting out the linger time.
    lingering: bool,
}

struct ServerNode {
    endpoint: ServerEndpoint<ChaCha20Rng>,
    cpu: Cpu,
    peers: BTreeMap<ConnId, NodeId>,
    ready: BTreeMap<ConnId, u64>,
    started: BTreeMap<ConnId, u64>,
    gmlc_sent: BTreeMap<u64, u64>,
}

pub struct World {
    pub net: SimNetwork<Wire>,
    deployment: Arc<Deployment>,
    config: WorldConfig,
    ctx: ClientContext,
    server: ServerNode,
    gmlc_cpu: Cpu,
    gmlc_served: u64,
    clients: Vec<ClientNode>,
    adversary: Option<Box<dyn Adversary>>,
    outcomes: Vec<ClientOutcome>,
    latencies_ms: Vec<f64>,
    gmlc_rtts_ms: Vec<f64>,
    ladns_extra_bytes: usize,
    deadline: Option<u64>,
}

impl fmt::Debug for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("World")
            .field("now_ms", &self.net.now_ms())
            .field("clients", &self.clients.len())
            .field("server", &self.server.endpoint.stats())
            .finish_non_exhaustive()
    }
}

fn seeded(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl World {
    pub fn new(
        deployment: Arc<Deployment>,
        config: WorldConfig,
        adversary: Option<Box<dyn Adversary>>,
    ) -> Result<World, Error> {
        let t = &deployment.topology;
        let server_config = ServerConfig {
            domain: t.domain.clone(),
            tls: deployment.server_tls(config.server_modes.clone(), config.server_salve),
            sim_ids: deployment.server_sims.clone(),
            credential: SERVER_CREDENTIAL.into(),
            batching: config.batching,
            multi_sim: config.multi_sim,
        };
        let mut net = SimNetwork::new();
        net.set_latency_ms(SERVER, GMLC, t.server_gmlc_ms);
        net.set_latency_ms(ADVERSARY, SERVER, t.adversary_ms);
        net.set_latency_ms(ADVERSARY, GMLC, t.adversary_ms);
        let clients = (0..config.clients)
            .map(|index| {
                let node = FIRST_CLIENT + index;
                net.set_latency_ms(node, SERVER, t.client_server_ms);
                net.set_latency_ms(node, ADVERSARY, t.adversary_ms);
                if t.tap && index == 0 && adversary.is_some() {
                    net.tap(node, SERVER, ADVERSARY);
                }
                ClientNode { index, node, records: None, current: None, opened: 0, cpu: Cpu::new(1) }
            })
            .collect();
        let ctx = deployment.client_context(config.policy, config.client_modes.clone(), config.client_salve);
        Ok(World {
            net,
            server: ServerNode {
                endpoint: ServerEndpoint::new(server_config)?,
                cpu: Cpu::new(t.server_cores),
                peers: BTreeMap::new(),
                ready: BTreeMap::new(),
                started: BTreeMap::new(),
                gmlc_sent: BTreeMap::new(),
            },
            gmlc_cpu: Cpu::new(t.gmlc_cores),
            gmlc_served: 0,
            clients,
            adversary,
            outcomes: Vec::new(),
            latencies_ms: Vec::new(),
            gmlc_rtts_ms: Vec::new(),
            ladns_extra_bytes: 0,
            deadline: config.duration_ms.map(ms_to_ns),
            ctx,
            config,
            deployment,
        })
    }

    pub fn deployment(&self) -> &Deployment {
        &self.deployment
    }

    fn cost(&self, virtual_ms: f64, measured: Instant) -> u64 {
        match self.config.timing {
            Timing::Virtual(_) => ms_to_ns(virtual_ms),
            Timing::Measured => measured.elapsed().as_nanos() as u64,
        }
    }

    fn model(&self) -> CostModel {
        match self.config.timing {
            Timing::Virtual(m) => m,
            Timing::Measured => CostModel::default(),
        }
    }

    /// Runs until every client is done, the deadline passes or nothing is
    /// left to happen.
    pub fn run(mut self) -> WorldReport {
        for i in 0..self.clients.len() {
            self.client_lookup(i);
            self.client_open(i, 0);
        }
        while let Some(at) = self.net.peek_time() {
            if self.deadline.is_some_and(|d| at > d) {
                break;
            }
            let (node, event) = self.net.next_event().expect("peeked");
            match node {
                SERVER => self.server_event(event),
                GMLC => self.gmlc_event(event),
                ADVERSARY => self.adversary_event(event),
                n => self.client_event(n - FIRST_CLIENT, event),
            }
        }
        let end = self.net.now_ns();
        for i in 0..self.clients.len() {
            if let Some(cur) = self.clients[i].current.take() {
                let outcome = if cur.lingering {
                    Outcome::Finished(cur.connection.status())
                } else {
                    Outcome::Incomplete
                };
                self.record(i, cur, outcome, end);
            }
        }
        WorldReport {
            outcomes: self.outcomes,
            latencies_ms: self.latencies_ms,
            gmlc_rtts_ms: self.gmlc_rtts_ms,
            server_stats: self.server.endpoint.stats(),
            gmlc_served: self.gmlc_served,
            adversary: self.adversary.as_ref().map(|a| a.report()),
            ladns_extra_bytes: self.ladns_extra_bytes,
            end_ms: ns_to_ms(end),
            server_busy_ms: ns_to_ms(self.server.cpu.busy_ns()),
        }
    }

    fn client_lookup(&mut self, i: usize) {
        let now = self.deployment.unix_time(self.net.now_ns()) as u32;
        let result = match self.adversary.as_deref_mut() {
            Some(adv) => {
                let tampering = Tamper { zones: &self.deployment.zones, adversary: RefCell::new(adv) };
                ladns_lookup(&tampering, &self.deployment.domain, &self.deployment.anchor, now)
            }
            None => ladns_lookup(&self.deployment.zones, &self.deployment.domain, &self.deployment.anchor, now),
        };
        match result {
            Ok((records, extra)) => {
                self.ladns_extra_bytes = extra;
                self.clients[i].records = Some(records);
            }
            Err(e) => self.outcomes.push(ClientOutcome {
                client: i,
                conn: None,
                outcome: Outcome::DnsFailure(e),
                verdict: None,
                session_digest: None,
                started_ms: self.net.now_ms(),
                finished_ms: self.net.now_ms(),
                received: Vec::new(),
            }),
        }
    }

    fn may_open(&self, i: usize, at: u64) -> bool {
        let c = &self.clients[i];
        c.records.is_some()
            && c.current.is_none()
            && self.config.connections_per_client.is_none_or(|n| c.opened < n)
            && self.deadline.is_none_or(|d| at < d)
    }

    fn client_open(&mut self, i: usize, at: u64) {
        if !self.may_open(i, at) {
            return;
        }
        let c = &mut self.clients[i];
        let conn = ((c.index as ConnId) << 32) | c.opened;
        c.opened += 1;
        let records = c.records.clone().expect("checked by may_open");
        let rng = seeded(self.deployment.topology.seed, conn);
        let (connection, hello) = Connection::start(&self.ctx, records, rng);
        let node = c.node;
        c.current = Some(Current { conn, connection, started: at, lingering: false });
        self.net.send_at(node, SERVER, Wire::Tls { conn, bytes: hello.encode() }, at);
    }

    fn record(&mut self, i: usize, mut cur: Current, outcome: Outcome, at: u64) {
        let received = cur.connection.take_application_data();
        self.outcomes.push(ClientOutcome {
            client: i,
            conn: Some(cur.conn),
            outcome,
            verdict: cur.connection.verdict(),
            session_digest: cur.connection.session().session_digest(),
            started_ms: ns_to_ms(cur.started),
            finished_ms: ns_to_ms(at),
            received,
        });
    }

    fn client_event(&mut self, i: usize, event: SimEvent<Wire>) {
        let now = self.net.now_ns();
        match event {
            SimEvent::Timer(conn) => {
                let done = self.clients[i].current.as_ref().is_some_and(|c| c.conn == conn && c.lingering);
                if done {
                    self.finish(i, now);
                }
            }
            SimEvent::Deliver(Envelope { msg: Wire::Tls { conn, bytes }, .. }) => {
                let unix = self.deployment.unix_time(now);
                let model = self.model();
                let node = self.clients[i].node;
                let Some(cur) = self.clients[i].current.as_mut().filter(|c| c.conn == conn) else { return };
                let static_rsa = cur.connection.session().mode() == Some(KeyExchangeMode::StaticRsa);
                let t0 = Instant::now();
                let replies = cur.connection.handle_bytes(&bytes, unix);
                let status = cur.connection.status();
                let virtual_ms = model.client_tls(message_type(&bytes), static_rsa);
                let cost = self.cost(virtual_ms, t0);
                let done = self.clients[i].cpu.run(now, cost);
                for m in replies {
                    self.net.send_at(node, SERVER, Wire::Tls { conn, bytes: m.encode() }, done);
                }
                let cur = self.clients[i].current.as_mut().expect("still current");
                match status {
                    ConnectionStatus::Handshaking => {}
                    ConnectionStatus::Established { .. } if !cur.lingering => match self.config.linger_ms {
                        Some(linger) => {
                            cur.lingering = true;
                            if let Ok(m) = cur.connection.session_mut().seal_application_data(CLIENT_REQUEST) {
                                self.net.send_at(node, SERVER, Wire::Tls { conn, bytes: m.encode() }, done);
                            }
                            self.net.timer_at(node, done + ms_to_ns(linger), conn);
                        }
                        None => self.finish(i, done),
                    },
                    ConnectionStatus::Established { .. } => {}
                    ConnectionStatus::Failed(_) => self.finish(i, done),
                }
            }
            SimEvent::Deliver(_) => {}
        }
    }

    fn finish(&mut self, i: usize, at: u64) {
        let Some(cur) = self.clients[i].current.take() else { return };
        let node = self.clients[i].node;
        let conn = cur.conn;
        let status = cur.connection.status();
        self.record(i, cur, Outcome::Finished(status), at);
        self.net.send_at(node, SERVER, Wire::Close { conn }, at);
        self.client_open(i, at);
    }

    fn server_event(&mut self, event: SimEvent<Wire>) {
        let now = self.net.now_ns();
        match event {
            SimEvent::Timer(_) => {
                let t0 = Instant::now();
                let actions = self.server.endpoint.on_timer(now / NS_PER_MS);
                let cost = self.cost(0.0, t0);
                let done = self.server.cpu.run(now, cost);
                self.server_actions(actions, done);
            }
            SimEvent::Deliver(Envelope { from, msg: Wire::Tls { conn, bytes }, .. }) => {
                if !self.server.peers.contains_key(&conn) {
                    if message_type(&bytes) != Some(MessageType::ClientHello) {
                        return;
                    }
                    let rng = seeded(self.deployment.topology.seed ^ 0x5e7e, conn);
                    self.server.endpoint.accept(conn, rng);
                    self.server.peers.insert(conn, from);
                    self.server.started.insert(conn, now);
                }
                let mode = self.server.endpoint.session(conn).and_then(|s| s.mode());
                let ready = self.server.ready.get(&conn).copied().unwrap_or(0).max(now);
                let t0 = Instant::now();
                let actions = self.server.endpoint.handle_bytes(conn, &bytes, now / NS_PER_MS);
                let virtual_ms = self.model().server_tls(message_type(&bytes), mode);
                let cost = self.cost(virtual_ms, t0);
                let done = self.server.cpu.run(ready, cost);
                self.server.ready.insert(conn, done);
                self.server_actions(actions, done);
            }
            SimEvent::Deliver(Envelope { msg: Wire::Close { conn }, .. }) => {
                self.server.endpoint.disconnect(conn);
                self.forget(conn);
            }
            SimEvent::Deliver(Envelope { msg: Wire::Mlp(xml), .. }) => {
                let t0 = Instant::now();
                let actions = match mlp::decode_response(&xml) {
                    Ok(resp) => {
                        if let Some(sent) = self.server.gmlc_sent.remove(&resp.id) {
                            self.gmlc_rtts_ms.push(ns_to_ms(now - sent));
                        }
                        self.server.endpoint.on_gmlc_response(resp)
                    }
                    Err(_) => self.server.endpoint.on_gmlc_down(),
                };
                let sends = actions.iter().filter(|a| matches!(a, ServerAction::Send { .. })).count();
                let m = self.model();
                let cost = self.cost(m.mlp_ms + sends as f64 * m.message_ms, t0);
                let done = self.server.cpu.run(now, cost);
                self.server_actions(actions, done);
            }
        }
    }

    fn forget(&mut self, conn: ConnId) {
        self.server.peers.remove(&conn);
        self.server.ready.remove(&conn);
        self.server.started.remove(&conn);
    }

    fn server_actions(&mut self, actions: Vec<ServerAction>, done: u64) {
        for a in actions {
            match a {
                ServerAction::Send { conn, message } => {
                    if let Some(&peer) = self.server.peers.get(&conn) {
                        self.net.send_at(SERVER, peer, Wire::Tls { conn, bytes: message.encode() }, done);
                    }
                }
                ServerAction::Close { conn } => self.forget(conn),
                ServerAction::Gmlc(req) => {
                    if self.config.gmlc_down {
                        let more = self.server.endpoint.on_gmlc_error(req.id);
                        self.server_actions(more, done);
                        continue;
                    }
                    let t0 = Instant::now();
                    let xml = mlp::encode_request(&req);
                    let cost = self.cost(self.model().mlp_ms, t0);
                    let sent = self.server.cpu.run(done, cost);
                    self.server.gmlc_sent.insert(req.id, sent);
                    self.net.send_at(SERVER, GMLC, Wire::Mlp(xml), sent);
                }
                ServerAction::ArmTimer { at_ms } => self.net.timer_at(SERVER, at_ms * NS_PER_MS, 0),
                ServerAction::Established { conn, .. } => {
                    if let Some(start) = self.server.started.get(&conn) {
                        if self.deadline.is_none_or(|d| done <= d) {
                            self.latencies_ms.push(ns_to_ms(done - start));
                        }
                    }
                }
                ServerAction::Failed { .. } => {}
                ServerAction::ApplicationData { conn, .. } => {
                    if let Some(m) = self.server.endpoint.seal_application_data(conn, SERVER_RESPONSE) {
                        if let Some(&peer) = self.server.peers.get(&conn) {
                            self.net.send_at(SERVER, peer, Wire::Tls { conn, bytes: m.encode() }, done);
                        }
                    }
                }
            }
        }
    }

    fn gmlc_event(&mut self, event: SimEvent<Wire>) {
        let now = self.net.now_ns();
        let SimEvent::Deliver(Envelope { from, msg: Wire::Mlp(xml), .. }) = event else { return };
        let t0 = Instant::now();
        let Ok(req) = mlp::decode_request(&xml) else { return };
        let resp = issue_statement(&self.deployment.registry, &self.deployment.keys.gmlc, &req);
        let out = mlp::encode_response(&resp);
        let m = self.model();
        let signed = if resp.statement.is_some() { m.rsa_sign_ms } else { 0.0 };
        let cost = self.cost(2.0 * m.mlp_ms + signed, t0);
        let done = self.gmlc_cpu.run(now, cost);
        self.gmlc_served += 1;
        self.net.send_at(GMLC, from, Wire::Mlp(out), done);
    }

    fn adversary_event(&mut self, event: SimEvent<Wire>) {
        let Some(mut adv) = self.adversary.take() else { return };
        let mut ctx = AdversaryCtx { net: &mut self.net, deployment: &self.deployment };
        match event {
            SimEvent::Deliver(env) => adv.on_wire(&mut ctx, env),
            SimEvent::Timer(token) => adv.on_timer(&mut ctx, token),
        }
        self.adversary = Some(adv);
    }
}

/// DNS transport that lets the adversary rewrite answers.
struct Tamper<'a> {
    zones: &'a ZoneSet,
    adversary: RefCell<&'a mut dyn Adversary>,
}

impl DnsTransport for Tamper<'_> {
    fn query(&self, server: &Name, qname: &Name) -> Result<ZoneAnswer, DnsError> {
        let mut answer = self.zones.query(server, qname)?;
        self.adversary.borrow_mut().tamper_dns(server, qname, &mut answer);
        Ok(answer)
    }
}

#[cfg(test)]
mod tests;
