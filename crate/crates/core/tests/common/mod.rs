#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::{Arc, OnceLock};

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;

use salve_core::client::{ClientContext, ClientPolicy, Connection};
use salve_core::crypto::SigningIdentity;
use salve_core::dns::{ladns_lookup, Name, ResourceRecord, TrustAnchor, ValidatedRecordSet, Validity, Zone, ZoneSet};
use salve_core::geo::GeoLocation;
use salve_core::gmlc::{issue_statement, SimRecord, SimRegistry};
use salve_core::server::{Batching, ServerAction, ServerConfig, ServerEndpoint};
use salve_core::tls::{Certificate, KeyExchangeMode, ServerTlsConfig};

pub const DOMAIN: &str = "www.example.com";
pub const SIM: &str = "228010000000001";
pub const CREDENTIAL: &str = "owner-secret";
pub const NOW: u64 = 1_700_000_000;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub struct Keys {
    pub ca: SigningIdentity,
    pub server: SigningIdentity,
    pub gmlc: SigningIdentity,
    pub zones: [SigningIdentity; 3],
}

pub fn keys() -> &'static Keys {
    static KEYS: OnceLock<Keys> = OnceLock::new();
    KEYS.get_or_init(|| {
        let k = |s| SigningIdentity::generate(&mut rng(s)).unwrap();
        Keys { ca: k(1), server: k(2), gmlc: k(3), zones: [k(4), k(5), k(6)] }
    })
}

pub fn site() -> GeoLocation {
    GeoLocation::new(47.3769, 8.5417, 408.0)
}

/// Root, `com.` and `example.com.` zones publishing `locations` for the
/// domain.
pub fn zones(locations: &[GeoLocation], slvreq: Option<bool>) -> (ZoneSet, TrustAnchor) {
    let k = keys();
    let domain = Name::parse(DOMAIN).unwrap();
    let mut home = Zone::new(Name::parse("example.com").unwrap(), k.zones[2].clone());
    home.push(ResourceRecord::a(domain.clone(), 3600, [192, 0, 2, 7])).unwrap();
    for g in locations {
        home.push(ResourceRecord::loc(domain.clone(), 3600, g).unwrap()).unwrap();
    }
    if let Some(flag) = slvreq {
        home.push(ResourceRecord::slvreq(domain.clone(), 3600, flag)).unwrap();
    }
    let chain = vec![
        Zone::new(Name::root(), k.zones[0].clone()),
        Zone::new(Name::parse("com").unwrap(), k.zones[1].clone()),
        home,
    ];
    let set = ZoneSet::sign_hierarchy(chain, 86_400, Validity::default()).unwrap();
    let anchor = TrustAnchor::for_zone(set.root().unwrap());
    (set, anchor)
}

pub fn records(locations: &[GeoLocation], slvreq: Option<bool>) -> ValidatedRecordSet {
    let (set, anchor) = zones(locations, slvreq);
    ladns_lookup(&set, &Name::parse(DOMAIN).unwrap(), &anchor, NOW as u32).unwrap().0
}

pub fn registry(at: GeoLocation, localized_at: u64) -> SimRegistry {
    let mut r = SimRegistry::new();
    r.register(SimRecord::new(SIM, CREDENTIAL, at, localized_at).unwrap()).unwrap();
    r
}

pub fn server_config(modes: Vec<KeyExchangeMode>, salve: bool, batching: Batching) -> ServerConfig {
    let k = keys();
    let cert = Certificate::issue(DOMAIN, k.server.public(), &k.ca).unwrap();
    ServerConfig {
        domain: DOMAIN.into(),
        tls: Arc::new(ServerTlsConfig { certificate: cert, key: k.server.clone(), modes, salve }),
        sim_ids: vec![SIM.into()],
        credential: CREDENTIAL.into(),
        batching,
        multi_sim: false,
    }
}

pub fn client_context(modes: Vec<KeyExchangeMode>, salve: bool) -> ClientContext {
    let k = keys();
    ClientContext { modes, salve, ..ClientContext::new(k.ca.public().clone(), k.gmlc.public().clone(), ClientPolicy::default()) }
}

/// Runs `n` clients against one endpoint with an in-process GMLC until
/// nothing moves. Clients start together so batching sees all of them.
pub fn run(
    ctx: &ClientContext,
    config: ServerConfig,
    registry: &SimRegistry,
    records: &ValidatedRecordSet,
    n: usize,
    seed: u64,
) -> (Vec<Connection<ChaCha20Rng>>, ServerEndpoint<ChaCha20Rng>) {
    let mut server = ServerEndpoint::new(config).unwrap();
    let mut clients = Vec::new();
    let mut to_server = VecDeque::new();
    for i in 0..n {
        let (c, hello) = Connection::start(ctx, records.clone(), rng(seed.wrapping_mul(1000) + i as u64));
        server.accept(i as u64, rng(seed.wrapping_mul(1000) + 500 + i as u64));
        clients.push(c);
        to_server.push_back((i as u64, hello));
    }
    loop {
        let mut actions = Vec::new();
        while let Some((conn, m)) = to_server.pop_front() {
            actions.extend(server.handle(conn, m, 0));
        }
        if actions.is_empty() {
            actions = server.flush();
        }
        if actions.is_empty() {
            break;
        }
        let mut pending = VecDeque::from(actions);
        while let Some(a) = pending.pop_front() {
            match a {
                ServerAction::Send { conn, message } => {
                    for reply in clients[conn as usize].handle(message, NOW) {
                        to_server.push_back((conn, reply));
                    }
                }
                ServerAction::Gmlc(req) => {
                    pending.extend(server.on_gmlc_response(issue_statement(registry, &keys().gmlc, &req)))
                }
                _ => {}
            }
        }
    }
    (clients, server)
}
