//! Full-stack perturbation fuzzing of the handshake.
//!
//! Each iteration runs one client against one server endpoint and a GMLC,
//! delivering messages through a mangling channel that drops, duplicates,
//! swaps, bit-flips, truncates or replays messages from earlier sessions.
//! A run ends when nothing is left in flight. The client must then be
//! established with keys the server shares, aborted, or stalled waiting
//! for a message that will never come (which a real client resolves with
//! a timeout). Anything else is recorded as an invalid state.

use std::collections::VecDeque;
use std::sync::Arc;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use salve_core::client::{ClientPolicy, Connection, ConnectionStatus, Reason};
use salve_core::crypto::Digest;
use salve_core::dns::{ladns_lookup, ValidatedRecordSet};
use salve_core::gmlc::issue_statement;
use salve_core::server::{Batching, ServerAction, ServerEndpoint};
use salve_core::tls::KeyExchangeMode;

use crate::mlp;
use crate::world::{Deployment, Keys, Topology};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    Drop,
    Duplicate,
    /// Exchange with the next message in the same direction.
    Swap,
    FlipBit,
    Truncate,
    /// Send a message recorded in an earlier session instead.
    Replay,
    /// Corrupt the GMLC's XML answer.
    CorruptGmlc,
}

impl Perturbation {
    const ALL: [Perturbation; 7] = [
        Perturbation::Drop,
        Perturbation::Duplicate,
        Perturbation::Swap,
        Perturbation::FlipBit,
        Perturbation::Truncate,
        Perturbation::Replay,
        Perturbation::CorruptGmlc,
    ];
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FuzzReport {
    pub iterations: u64,
    pub established: u64,
    pub aborted: u64,
    pub stalled: u64,
    /// Descriptions of every invalid final state.
    pub invalid: Vec<String>,
}

impl FuzzReport {
    pub fn is_clean(&self) -> bool {
        self.invalid.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flavor {
    Dhe,
    StaticRsa,
    Merkle,
    /// The server does not speak the extension.
    LegacyServer,
}

const FLAVORS: [Flavor; 4] = [Flavor::Dhe, Flavor::StaticRsa, Flavor::Merkle, Flavor::LegacyServer];

struct Setup {
    deployment: Arc<Deployment>,
    records: ValidatedRecordSet,
}

pub struct Fuzzer {
    setup: Setup,
    rng: ChaCha20Rng,
    bank: Vec<Vec<u8>>,
    report: FuzzReport,
}

/// How many past messages are kept for replay.
const BANK_SIZE: usize = 256;

/// A message in flight; `to_server` gives the direction.
struct Flight {
    to_server: bool,
    bytes: Vec<u8>,
}

impl Fuzzer {
    pub fn new(keys: Arc<Keys>, seed: u64) -> Result<Fuzzer, Error> {
        let deployment = Arc::new(Deployment::new(keys, Topology::default())?);
        let now = deployment.topology.start_time as u32;
        let (records, _) = ladns_lookup(&deployment.zones, &deployment.domain, &deployment.anchor, now)?;
        Ok(Fuzzer {
            setup: Setup { deployment, records },
            rng: ChaCha20Rng::seed_from_u64(seed),
            bank: Vec::new(),
            report: FuzzReport::default(),
        })
    }

    pub fn report(&self) -> &FuzzReport {
        &self.report
    }

    pub fn into_report(self) -> FuzzReport {
        self.report
    }

    pub fn run(&mut self, iterations: u64) {
        for _ in 0..iterations {
            self.iteration();
        }
    }

    fn below(&mut self, n: usize) -> usize {
        (self.rng.next_u64() % n as u64) as usize
    }

    fn iteration(&mut self) {
        let i = self.report.iterations;
        self.report.iterations += 1;
        let flavor = FLAVORS[self.below(FLAVORS.len())];
        let planned: Vec<(usize, Perturbation)> = (0..1 + self.below(3))
            .map(|_| (self.below(9), Perturbation::ALL[self.below(Perturbation::ALL.len())]))
            .collect();
        if let Some(problem) = self.handshake(i, flavor, &planned) {
            self.report.invalid.push(format!("iteration {i} {flavor:?} {planned:?}: {problem}"));
        }
    }

    /// Runs one perturbed handshake and returns a description of any
    /// invalid final state.
    fn handshake(&mut self, i: u64, flavor: Flavor, planned: &[(usize, Perturbation)]) -> Option<String> {
        let d = self.setup.deployment.clone();
        let mode = if flavor == Flavor::StaticRsa { KeyExchangeMode::StaticRsa } else { KeyExchangeMode::Dhe };
        let config = salve_core::server::ServerConfig {
            domain: d.topology.domain.clone(),
            tls: d.server_tls(vec![mode], flavor != Flavor::LegacyServer),
            sim_ids: d.server_sims.clone(),
            credential: crate::world::SERVER_CREDENTIAL.into(),
            batching: match flavor {
                Flavor::Merkle => Batching::Merkle { window_ms: 0, max_batch: 1 },
                _ => Batching::PerConnection,
            },
            multi_sim: false,
        };
        let mut server = ServerEndpoint::new(config).expect("valid fuzz configuration");
        let policy = ClientPolicy::default();
        let ctx = d.client_context(policy, vec![mode], true);
        let now = d.topology.start_time;
        let conn = i;
        server.accept(conn, ChaCha20Rng::seed_from_u64(i ^ 0x5e));
        let (mut client, hello) = Connection::start(&ctx, self.setup.records.clone(), ChaCha20Rng::seed_from_u64(i));

        let mut flights: VecDeque<Flight> = VecDeque::new();
        let mut sent = 0usize;
        let mut push = |fz: &mut Fuzzer, flights: &mut VecDeque<Flight>, to_server: bool, bytes: Vec<u8>| {
            let index = sent;
            sent += 1;
            if fz.bank.len() >= BANK_SIZE {
                fz.bank.drain(..BANK_SIZE / 2);
            }
            fz.bank.push(bytes.clone());
            let mut copies = vec![bytes];
            for &(_, p) in planned.iter().filter(|(at, _)| *at == index) {
                copies = copies.into_iter().flat_map(|b| fz.mangle(p, b)).collect();
                if p == Perturbation::Swap {
                    if let Some(pos) = flights.iter().rposition(|f| f.to_server == to_server) {
                        let prev = std::mem::replace(&mut flights[pos].bytes, copies.pop().unwrap_or_default());
                        copies.push(prev);
                    }
                }
            }
            flights.extend(copies.into_iter().map(|bytes| Flight { to_server, bytes }));
        };
        push(self, &mut flights, true, hello.encode());

        // Digest the server held when it reported completion.
        let mut completed: Option<Option<Digest>> = None;
        let mut gmlc_corrupt = planned.iter().any(|(_, p)| *p == Perturbation::CorruptGmlc);
        let mut steps = 0;
        while let Some(f) = flights.pop_front() {
            steps += 1;
            if steps > 64 {
                return Some("did not quiesce".into());
            }
            if f.to_server {
                let mut actions = server.handle_bytes(conn, &f.bytes, 0);
                while !actions.is_empty() {
                    let mut next = Vec::new();
                    for a in actions {
                        match a {
                            ServerAction::Send { message, .. } => push(self, &mut flights, false, message.encode()),
                            ServerAction::Gmlc(req) => {
                                let resp = issue_statement(&d.registry, &d.keys.gmlc, &req);
                                let mut xml = mlp::encode_response(&resp);
                                if std::mem::take(&mut gmlc_corrupt) {
                                    xml = self.corrupt_xml(xml);
                                }
                                next.extend(match mlp::decode_response(&xml) {
                                    Ok(r) => server.on_gmlc_response(r),
                                    Err(_) => server.on_gmlc_error(req.id),
                                });
                            }
                            ServerAction::ArmTimer { at_ms } => next.extend(server.on_timer(at_ms)),
                            ServerAction::Established { .. } => {
                                completed = Some(server.session(conn).and_then(|s| s.session_digest()));
                            }
                            _ => {}
                        }
                    }
                    actions = next;
                }
            } else {
                for m in client.handle_bytes(&f.bytes, now) {
                    push(self, &mut flights, true, m.encode());
                }
            }
        }
        self.judge(&mut client, &mut server, conn, flavor, completed)
    }

    fn mangle(&mut self, p: Perturbation, bytes: Vec<u8>) -> Vec<Vec<u8>> {
        match p {
            Perturbation::Drop => Vec::new(),
            Perturbation::Duplicate => vec![bytes.clone(), bytes],
            Perturbation::Swap | Perturbation::CorruptGmlc => vec![bytes],
            Perturbation::FlipBit => {
                let mut b = bytes;
                if !b.is_empty() {
                    let bit = self.below(b.len() * 8);
                    b[bit / 8] ^= 1 << (bit % 8);
                }
                vec![b]
            }
            Perturbation::Truncate => {
                let n = self.below(bytes.len().max(1));
                vec![bytes[..n].to_vec()]
            }
            Perturbation::Replay => {
                let old = self.bank.len().saturating_sub(1);
                if old == 0 {
                    return vec![bytes];
                }
                let pick = self.below(old);
                vec![self.bank[pick].clone()]
            }
        }
    }

    fn corrupt_xml(&mut self, xml: String) -> String {
        let mut b = xml.into_bytes();
        let at = self.below(b.len());
        b[at] ^= 1 << self.below(7);
        String::from_utf8_lossy(&b).into_owned()
    }

    fn judge(
        &mut self,
        client: &mut Connection<ChaCha20Rng>,
        server: &mut ServerEndpoint<ChaCha20Rng>,
        conn: u64,
        flavor: Flavor,
        completed: Option<Option<Digest>>,
    ) -> Option<String> {
        match client.status() {
            ConnectionStatus::Failed(_) => {
                self.report.aborted += 1;
                None
            }
            ConnectionStatus::Handshaking => {
                self.report.stalled += 1;
                None
            }
            ConnectionStatus::Established { verified } => {
                self.report.established += 1;
                if flavor == Flavor::LegacyServer {
                    return Some("established although SLVREQ demands a statement the server cannot give".into());
                }
                if !verified {
                    return Some("established without a verified statement".into());
                }
                if client.verdict().map(|v| v.reason) != Some(Reason::Ok) {
                    return Some(format!("established with verdict {:?}", client.verdict()));
                }
                let Some(s) = server.session(conn) else {
                    // A later message made the server drop a session it had
                    // completed; the client's view must match that session.
                    return match completed {
                        Some(d) if d.is_some() && d == client.session().session_digest() => None,
                        Some(_) => Some("server completed a different session".into()),
                        None => Some("server never completed the session".into()),
                    };
                };
                if !s.is_established() {
                    return Some(format!("server in phase {:?}", s.phase()));
                }
                if s.session_digest() != client.session().session_digest() {
                    return Some("client and server keys differ".into());
                }
                let probe = b"probe";
                let Ok(m) = client.session_mut().seal_application_data(probe) else {
                    return Some("client cannot seal".into());
                };
                let actions = server.handle(conn, m, 0);
                let echoed = actions.iter().any(|a| matches!(a, ServerAction::ApplicationData { data, .. } if data == probe));
                (!echoed).then(|| "server cannot open the client's data".to_string())
            }
        }
    }
}

/// Runs `iterations` perturbed handshakes.
pub fn fuzz(keys: Arc<Keys>, seed: u64, iterations: u64) -> Result<FuzzReport, Error> {
    let mut f = Fuzzer::new(keys, seed)?;
    f.run(iterations);
    Ok(f.into_report())
}

/// Runs unperturbed handshakes in every flavor; all but the legacy server
/// must complete.
pub fn honest_completion(keys: Arc<Keys>, iterations: u64) -> Result<(u64, u64), Error> {
    let mut f = Fuzzer::new(keys, 0)?;
    let mut completed = 0;
    let mut total = 0;
    for i in 0..iterations {
        let flavor = FLAVORS[(i % 3) as usize];
        total += 1;
        let before = f.report.established;
        if let Some(p) = f.handshake(i, flavor, &[]) {
            return Err(Error::Parse(p));
        }
        completed += f.report.established - before;
    }
    Ok((completed, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::test_keys;

    #[test]
    fn unperturbed_handshakes_complete() {
        assert_eq!(honest_completion(test_keys(), 30).unwrap(), (30, 30));
    }

    #[test]
    fn legacy_server_is_refused() {
        let mut f = Fuzzer::new(test_keys(), 1).unwrap();
        assert_eq!(f.handshake(0, Flavor::LegacyServer, &[]), None);
        assert_eq!((f.report.aborted, f.report.established), (1, 0));
    }

    #[test]
    fn every_perturbation_alone_is_handled() {
        let mut f = Fuzzer::new(test_keys(), 2).unwrap();
        f.run(5);
        let mut i = 100;
        for p in Perturbation::ALL {
            for at in 0..8 {
                i += 1;
                let problem = f.handshake(i, Flavor::Dhe, &[(at, p)]);
                assert_eq!(problem, None, "{p:?} at {at}");
            }
        }
        assert!(f.report.aborted > 0);
        assert!(f.report.established > 0);
    }

    #[test]
    fn teardown_after_completion_keeps_the_completed_session() {
        // A duplicated client Finished reaches the server after it has
        // finished; its alert back to the client is lost.
        let mut f = Fuzzer::new(test_keys(), 3).unwrap();
        for flavor in [Flavor::Dhe, Flavor::Merkle] {
            let problem = f.handshake(7, flavor, &[(5, Perturbation::Duplicate), (8, Perturbation::Drop)]);
            assert_eq!(problem, None, "{flavor:?}");
        }
        assert_eq!(f.report.established, 2);
    }

    #[test]
    fn random_perturbations_are_clean() {
        let r = fuzz(test_keys(), 7, 150).unwrap();
        assert!(r.is_clean(), "{:?}", r.invalid);
        assert_eq!(r.iterations, r.established + r.aborted + r.stalled);
    }
}
