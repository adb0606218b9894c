use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha20Rng;

use super::*;
use crate::crypto::{hash, merkle_verify};
use crate::geo::GeoLocation;
use crate::gmlc::{issue_statement, LocationStatement, SimRecord, SimRegistry};
use crate::testutil::{identity, rng};
use crate::tls::{Certificate, ClientConfig, ClientEvent, ClientSession, Phase};

const DOMAIN: &str = "www.example.com";

#[derive(Clone, Copy, PartialEq)]
enum Gmlc {
    Honest,
    Down,
    /// Signs a statement over a digest other than the requested one.
    WrongDigest,
    WrongCredential,
}

struct Net {
    server: ServerEndpoint<ChaCha20Rng>,
    clients: Vec<ClientSession<ChaCha20Rng>>,
    statements: Vec<Option<StatementPayload>>,
    registry: SimRegistry,
    gmlc: Gmlc,
    gmlc_queue: VecDeque<MlpRequest>,
    timer: Option<u64>,
    now: u64,
    closed: Vec<ConnId>,
    established: Vec<(ConnId, bool)>,
}

fn location(i: usize) -> GeoLocation {
    GeoLocation::new(47.37 + i as f64, 8.54, 400.0)
}

fn config(batching: Batching, sims: usize, multi_sim: bool) -> ServerConfig {
    let key = identity(1);
    let cert = Certificate::issue(DOMAIN, key.public(), &identity(0)).unwrap();
    ServerConfig {
        domain: DOMAIN.into(),
        tls: Arc::new(ServerTlsConfig::new(cert, key)),
        sim_ids: (0..sims).map(|i| format!("2280{i:011}")).collect(),
        credential: "server-credential".into(),
        batching,
        multi_sim,
    }
}

impl Net {
    fn new(cfg: ServerConfig, gmlc: Gmlc) -> Net {
        let mut registry = SimRegistry::new();
        for (i, id) in cfg.sim_ids.iter().enumerate() {
            registry.register(SimRecord::new(id, "server-credential", location(i), 1_000).unwrap()).unwrap();
        }
        Net {
            server: ServerEndpoint::new(cfg).unwrap(),
            clients: Vec::new(),
            statements: Vec::new(),
            registry,
            gmlc,
            gmlc_queue: VecDeque::new(),
            timer: None,
            now: 0,
            closed: Vec::new(),
            established: Vec::new(),
        }
    }

    /// Opens a connection and runs it until it waits on the GMLC.
    fn connect(&mut self) -> ConnId {
        let conn = self.clients.len() as ConnId;
        let cc = ClientConfig::new(identity(0).public().clone(), DOMAIN);
        let (client, hello) = ClientSession::start(cc, rng(100 + conn));
        self.clients.push(client);
        self.statements.push(None);
        self.server.accept(conn, rng(200 + conn));
        self.send_to_server(conn, hello);
        conn
    }

    fn send_to_server(&mut self, conn: ConnId, m: HandshakeMessage) {
        let actions = self.server.handle_bytes(conn, &m.encode(), self.now);
        self.apply(actions);
    }

    fn apply(&mut self, actions: Vec<ServerAction>) {
        for a in actions {
            match a {
                ServerAction::Send { conn, message } => {
                    let out = self.clients[conn as usize].handle_bytes(&message.encode());
                    if let Some(ClientEvent::StatementReceived(p)) = out.event {
                        self.statements[conn as usize] = Some(p);
                        self.clients[conn as usize].accept_statement().unwrap();
                    }
                    for m in out.messages {
                        self.send_to_server(conn, m);
                    }
                }
                ServerAction::Close { conn } => self.closed.push(conn),
                ServerAction::Gmlc(req) => self.gmlc_queue.push_back(req),
                ServerAction::ArmTimer { at_ms } => self.timer = Some(at_ms),
                ServerAction::Established { conn, salve } => self.established.push((conn, salve)),
                ServerAction::Failed { .. } | ServerAction::ApplicationData { .. } => {}
            }
        }
    }

    fn answer_gmlc(&mut self) {
        while let Some(mut req) = self.gmlc_queue.pop_front() {
            let actions = match self.gmlc {
                Gmlc::Down => self.server.on_gmlc_error(req.id),
                Gmlc::Honest => self.server.on_gmlc_response(issue_statement(&self.registry, &identity(2), &req)),
                Gmlc::WrongCredential => {
                    req.credential = "guess".into();
                    self.server.on_gmlc_response(issue_statement(&self.registry, &identity(2), &req))
                }
                Gmlc::WrongDigest => {
                    req.session_digest = hash(b"something else");
                    self.server.on_gmlc_response(issue_statement(&self.registry, &identity(2), &req))
                }
            };
            self.apply(actions);
        }
    }

    fn advance(&mut self, to: u64) {
        self.now = to;
        if self.timer.is_some_and(|t| t <= to) {
            self.timer = None;
            let actions = self.server.on_timer(to);
            self.apply(actions);
        }
    }

    fn statement(&self, conn: ConnId) -> (LocationStatement, Option<crate::crypto::MerkleProof>) {
        let p = self.statements[conn as usize].clone().expect("statement delivered");
        (LocationStatement::from_bytes(&p.statement).unwrap(), p.proof)
    }

    fn digest(&self, conn: ConnId) -> Digest {
        self.clients[conn as usize].session_digest().unwrap()
    }
}

#[test]
fn per_connection_statement_is_bound_to_each_session() {
    let mut net = Net::new(config(Batching::PerConnection, 1, false), Gmlc::Honest);
    for _ in 0..3 {
        net.connect();
    }
    assert_eq!(net.server.outstanding_requests(), 3);
    net.answer_gmlc();
    for c in 0..3 {
        assert!(net.clients[c as usize].is_established());
        let (s, proof) = net.statement(c);
        assert!(proof.is_none());
        assert_eq!(s.session_digest, net.digest(c));
        assert!(s.verify(identity(2).public()));
        assert_eq!(s.entries.len(), 1);
    }
    assert_eq!(net.server.stats().gmlc_requests, 3);
    assert_eq!(net.server.stats().statements_delivered, 3);
    assert_eq!(net.established.len(), 3);
}

#[test]
fn gmlc_down_fails_closed() {
    let mut net = Net::new(config(Batching::PerConnection, 1, false), Gmlc::Down);
    let c = net.connect();
    net.answer_gmlc();
    let client = &net.clients[c as usize];
    assert_eq!(client.phase(), Phase::Aborted);
    assert_eq!(client.abort_info().unwrap().code, AlertCode::BadLocationStatement);
    assert!(client.abort_info().unwrap().remote);
    assert!(net.established.is_empty());
    assert_eq!(net.closed, vec![c]);
    assert_eq!(net.server.open_connections(), 0);
}

#[test]
fn unauthorized_fails_closed() {
    let mut net = Net::new(config(Batching::PerConnection, 1, false), Gmlc::WrongCredential);
    let c = net.connect();
    net.answer_gmlc();
    assert_eq!(net.clients[c as usize].abort_info().unwrap().code, AlertCode::BadLocationStatement);
    assert_eq!(net.server.stats().gmlc_failures, 1);
}

#[test]
fn statement_for_another_digest_is_not_forwarded() {
    let mut net = Net::new(config(Batching::PerConnection, 1, false), Gmlc::WrongDigest);
    let c = net.connect();
    net.answer_gmlc();
    assert!(net.statements[c as usize].is_none());
    assert_eq!(net.clients[c as usize].phase(), Phase::Aborted);
}

#[test]
fn multi_sim_statement_lists_every_sim() {
    let mut net = Net::new(config(Batching::PerConnection, 3, true), Gmlc::Honest);
    let c = net.connect();
    net.answer_gmlc();
    let (s, _) = net.statement(c);
    assert_eq!(s.entries.len(), 3);
    let single = Net::new(config(Batching::PerConnection, 3, false), Gmlc::Honest);
    assert_eq!(single.server.config().requested_sims().len(), 1);
}

#[test]
fn batch_of_one_signs_the_session_digest() {
    let mut net = Net::new(config(Batching::Merkle { window_ms: 10, max_batch: 1 }, 1, false), Gmlc::Honest);
    let c = net.connect();
    net.answer_gmlc();
    let (s, proof) = net.statement(c);
    assert_eq!(s.session_digest, net.digest(c));
    let proof = proof.unwrap();
    assert!(proof.siblings.is_empty());
    assert!(merkle_verify(&net.digest(c), &proof, &s.session_digest));
}

#[test]
fn batch_of_two_proof_is_the_other_leaf() {
    let mut net = Net::new(config(Batching::Merkle { window_ms: 10, max_batch: 2 }, 1, false), Gmlc::Honest);
    let a = net.connect();
    assert!(net.gmlc_queue.is_empty());
    let b = net.connect();
    assert_eq!(net.gmlc_queue.len(), 1);
    net.answer_gmlc();
    let (s, proof) = net.statement(a);
    let proof = proof.unwrap();
    assert_eq!(proof.siblings.len(), 1);
    assert_eq!(proof.siblings[0].0, net.digest(b));
    assert!(merkle_verify(&net.digest(a), &proof, &s.session_digest));
    assert_eq!(net.server.stats().gmlc_requests, 1);
}

#[test]
fn window_flushes_a_partial_batch() {
    let mut net = Net::new(config(Batching::Merkle { window_ms: 20, max_batch: 8 }, 1, false), Gmlc::Honest);
    for _ in 0..7 {
        net.connect();
    }
    assert_eq!(net.timer, Some(20));
    net.advance(19);
    assert!(net.server.on_timer(19).is_empty());
    assert!(net.gmlc_queue.is_empty());
    net.advance(20);
    assert_eq!(net.gmlc_queue.len(), 1);
    net.answer_gmlc();
    for c in 0..7 {
        let (s, proof) = net.statement(c);
        assert!(merkle_verify(&net.digest(c), &proof.unwrap(), &s.session_digest));
        assert!(net.clients[c as usize].is_established());
    }
    assert_eq!(net.server.stats().gmlc_requests, 1);
}

#[test]
fn request_count_is_handshakes_over_batch_size() {
    for n in [1usize, 2, 7, 32] {
        let mut net = Net::new(config(Batching::Merkle { window_ms: 1_000, max_batch: n }, 1, false), Gmlc::Honest);
        for _ in 0..(2 * n) {
            net.connect();
        }
        net.answer_gmlc();
        assert_eq!(net.server.stats().gmlc_requests, 2, "batch size {n}");
        assert_eq!(net.server.stats().statements_delivered as usize, 2 * n);
    }
}

#[test]
fn disconnect_leaves_batch() {
    let mut net = Net::new(config(Batching::Merkle { window_ms: 20, max_batch: 4 }, 1, false), Gmlc::Honest);
    let a = net.connect();
    let b = net.connect();
    net.server.disconnect(a);
    net.advance(20);
    net.answer_gmlc();
    assert!(net.statements[a as usize].is_none());
    let (s, proof) = net.statement(b);
    assert!(merkle_verify(&net.digest(b), &proof.unwrap(), &s.session_digest));
}

#[test]
fn batch_failure_aborts_every_member() {
    let mut net = Net::new(config(Batching::Merkle { window_ms: 20, max_batch: 3 }, 1, false), Gmlc::Down);
    for _ in 0..3 {
        net.connect();
    }
    net.answer_gmlc();
    assert!(net.clients.iter().all(|c| c.phase() == Phase::Aborted));
    assert_eq!(net.closed.len(), 3);
}

#[test]
fn gmlc_down_drops_everything_outstanding() {
    let mut net = Net::new(config(Batching::PerConnection, 1, false), Gmlc::Honest);
    net.connect();
    net.connect();
    let actions = net.server.on_gmlc_down();
    net.apply(actions);
    assert!(net.clients.iter().all(|c| c.phase() == Phase::Aborted));
    assert_eq!(net.server.outstanding_requests(), 0);
}

#[test]
fn config_invariants() {
    let mut cfg = config(Batching::PerConnection, 0, false);
    assert_eq!(cfg.validate(), Err(ConfigError::NoSims));
    cfg.sim_ids.push(String::from("x"));
    cfg.batching = Batching::Merkle { window_ms: 1, max_batch: 0 };
    assert_eq!(cfg.validate(), Err(ConfigError::EmptyBatch));
}
