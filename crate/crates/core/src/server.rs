//! The server side: many handshakes multiplexed over one GMLC channel, with
//! statements requested per connection or in Merkle batches.
//!
//! [`ServerEndpoint`] never touches sockets or clocks. Callers hand it
//! decoded frames and the current time in milliseconds and carry out the
//! returned [`ServerAction`]s.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use rand_core::CryptoRngCore;

use crate::crypto::{merkle_build, merkle_prove, merkle_root, Digest, MerkleTree};
use crate::gmlc::{MlpRequest, MlpResponse, MlpStatus};
use crate::tls::{AbortInfo, AlertCode, HandshakeMessage, ServerEvent, ServerSession, ServerTlsConfig, StatementPayload};

/// Identifies one client connection on the endpoint.
pub type ConnId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batching {
    /// One GMLC request per handshake.
    PerConnection,
    /// Pending digests are collected into a Merkle tree and only the root
    /// is sent to the GMLC. A batch is flushed when it holds `max_batch`
    /// digests or `window_ms` after its first digest arrived.
    Merkle { window_ms: u64, max_batch: usize },
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub domain: String,
    pub tls: Arc<ServerTlsConfig>,
    /// SIMs attached to this server; the first one is used unless
    /// `multi_sim` is set.
    pub sim_ids: Vec<String>,
    pub credential: String,
    pub batching: Batching,
    /// Ask for every SIM in one statement.
    pub multi_sim: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigError {
    NoSims,
    EmptyBatch,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfigError::NoSims => "at least one SIM id is required",
            ConfigError::EmptyBatch => "the Merkle batch size must be at least 1",
        })
    }
}

impl core::error::Error for ConfigError {}

impl ServerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sim_ids.is_empty() && self.tls.salve {
            return Err(ConfigError::NoSims);
        }
        if let Batching::Merkle { max_batch: 0, .. } = self.batching {
            return Err(ConfigError::EmptyBatch);
        }
        Ok(())
    }

    fn requested_sims(&self) -> Vec<String> {
        if self.multi_sim {
            self.sim_ids.clone()
        } else {
            self.sim_ids.iter().take(1).cloned().collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerAction {
    Send { conn: ConnId, message: HandshakeMessage },
    /// Drop the connection; the session is gone.
    Close { conn: ConnId },
    /// Send this request over the GMLC channel.
    Gmlc(MlpRequest),
    /// Call [`ServerEndpoint::on_timer`] at this time.
    ArmTimer { at_ms: u64 },
    /// The handshake completed; `salve` tells whether a statement was sent.
    Established { conn: ConnId, salve: bool },
    Failed { conn: ConnId, info: AbortInfo },
    ApplicationData { conn: ConnId, data: Vec<u8> },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub gmlc_requests: u64,
    pub statements_delivered: u64,
    pub gmlc_failures: u64,
    pub established: u64,
    pub aborted: u64,
}

enum Pending {
    Single { conn: ConnId, digest: Digest },
    Batch { tree: MerkleTree, members: Vec<ConnId> },
}

impl Pending {
    fn requested(&self) -> Digest {
        match self {
            Pending::Single { digest, .. } => *digest,
            Pending::Batch { tree, .. } => merkle_root(tree),
        }
    }

    fn members(&self) -> Vec<ConnId> {
        match self {
            Pending::Single { conn, .. } => alloc::vec![*conn],
            Pending::Batch { members, .. } => members.clone(),
        }
    }
}

pub struct ServerEndpoint<R: CryptoRngCore> {
    config: ServerConfig,
    sessions: BTreeMap<ConnId, ServerSession<R>>,
    batch: Vec<(ConnId, Digest)>,
    deadline: Option<u64>,
    inflight: BTreeMap<u64, Pending>,
    next_request: u64,
    stats: ServerStats,
}

impl<R: CryptoRngCore> ServerEndpoint<R> {
    pub fn new(config: ServerConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(ServerEndpoint {
            config,
            sessions: BTreeMap::new(),
            batch: Vec::new(),
            deadline: None,
            inflight: BTreeMap::new(),
            next_request: 1,
            stats: ServerStats::default(),
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn stats(&self) -> ServerStats {
        self.stats
    }

    pub fn session(&self, conn: ConnId) -> Option<&ServerSession<R>> {
        self.sessions.get(&conn)
    }

    pub fn open_connections(&self) -> usize {
        self.sessions.len()
    }

    /// GMLC requests sent and not yet answered.
    pub fn outstanding_requests(&self) -> usize {
        self.inflight.len()
    }

    /// Registers a new connection. Replaces any session under the same id.
    pub fn accept(&mut self, conn: ConnId, rng: R) {
        self.sessions.insert(conn, ServerSession::new(self.config.tls.clone(), rng));
    }

    /// Forgets a connection closed by the peer or the transport.
    pub fn disconnect(&mut self, conn: ConnId) {
        self.sessions.remove(&conn);
        self.batch.retain(|(c, _)| *c != conn);
        if self.batch.is_empty() {
            self.deadline = None;
        }
    }

    pub fn handle_bytes(&mut self, conn: ConnId, bytes: &[u8], now_ms: u64) -> Vec<ServerAction> {
        match HandshakeMessage::decode(bytes) {
            Ok(m) => self.handle(conn, m, now_ms),
            Err(_) => self.abort(conn, AlertCode::UnexpectedMessage),
        }
    }

    pub fn handle(&mut self, conn: ConnId, msg: HandshakeMessage, now_ms: u64) -> Vec<ServerAction> {
        let Some(session) = self.sessions.get_mut(&conn) else {
            return Vec::new();
        };
        let out = session.handle(msg);
        let mut actions: Vec<ServerAction> =
            out.messages.into_iter().map(|message| ServerAction::Send { conn, message }).collect();
        match out.event {
            Some(ServerEvent::Established) => {
                self.stats.established += 1;
                actions.push(ServerAction::Established { conn, salve: false });
            }
            Some(ServerEvent::StatementNeeded(digest)) => actions.extend(self.request(conn, digest, now_ms)),
            Some(ServerEvent::ApplicationData(data)) => actions.push(ServerAction::ApplicationData { conn, data }),
            Some(ServerEvent::Aborted(info)) => {
                self.stats.aborted += 1;
                self.disconnect(conn);
                actions.push(ServerAction::Failed { conn, info });
                actions.push(ServerAction::Close { conn });
            }
            None => {}
        }
        actions
    }

    fn request(&mut self, conn: ConnId, digest: Digest, now_ms: u64) -> Vec<ServerAction> {
        match self.config.batching {
            Batching::PerConnection => alloc::vec![self.send_request(Pending::Single { conn, digest })],
            Batching::Merkle { window_ms, max_batch } => {
                self.batch.push((conn, digest));
                if self.batch.len() >= max_batch {
                    return self.flush();
                }
                if self.deadline.is_none() {
                    let at_ms = now_ms.saturating_add(window_ms);
                    self.deadline = Some(at_ms);
                    return alloc::vec![ServerAction::ArmTimer { at_ms }];
                }
                Vec::new()
            }
        }
    }

    fn send_request(&mut self, pending: Pending) -> ServerAction {
        let id = self.next_request;
        self.next_request += 1;
        let req = MlpRequest {
            id,
            credential: self.config.credential.clone(),
            sim_ids: self.config.requested_sims(),
            session_digest: pending.requested(),
        };
        self.inflight.insert(id, pending);
        self.stats.gmlc_requests += 1;
        ServerAction::Gmlc(req)
    }

    /// Sends the pending batch now, whatever its size.
    pub fn flush(&mut self) -> Vec<ServerAction> {
        self.deadline = None;
        if self.batch.is_empty() {
            return Vec::new();
        }
        let (members, leaves): (Vec<ConnId>, Vec<Digest>) = core::mem::take(&mut self.batch).into_iter().unzip();
        let tree = merkle_build(&leaves).expect("batch is not empty");
        alloc::vec![self.send_request(Pending::Batch { tree, members })]
    }

    /// Fires the batch window if it has expired.
    pub fn on_timer(&mut self, now_ms: u64) -> Vec<ServerAction> {
        match self.deadline {
            Some(at) if at <= now_ms => self.flush(),
            _ => Vec::new(),
        }
    }

    /// Delivers a GMLC answer. Anything but a statement over exactly the
    /// requested digest fails every waiting handshake closed.
    pub fn on_gmlc_response(&mut self, resp: MlpResponse) -> Vec<ServerAction> {
        let Some(pending) = self.inflight.remove(&resp.id) else {
            return Vec::new();
        };
        let statement = match resp.statement {
            Some(s) if resp.status == MlpStatus::Ok && s.session_digest == pending.requested() => s,
            _ => return self.fail_pending(pending),
        };
        let bytes = statement.to_bytes();
        let mut actions = Vec::new();
        let payloads: Vec<(ConnId, StatementPayload)> = match &pending {
            Pending::Single { conn, .. } => alloc::vec![(*conn, StatementPayload { statement: bytes, proof: None })],
            Pending::Batch { tree, members } => members
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let proof = merkle_prove(tree, i).expect("index within the batch");
                    (*c, StatementPayload { statement: bytes.clone(), proof: Some(proof) })
                })
                .collect(),
        };
        for (conn, payload) in payloads {
            let Some(session) = self.sessions.get_mut(&conn) else { continue };
            match session.deliver_statement(&payload) {
                Ok(message) => {
                    self.stats.statements_delivered += 1;
                    self.stats.established += 1;
                    actions.push(ServerAction::Send { conn, message });
                    actions.push(ServerAction::Established { conn, salve: true });
                }
                Err(_) => actions.extend(self.abort(conn, AlertCode::UnexpectedMessage)),
            }
        }
        actions
    }

    /// The GMLC channel lost a request; its handshakes are aborted.
    pub fn on_gmlc_error(&mut self, request_id: u64) -> Vec<ServerAction> {
        match self.inflight.remove(&request_id) {
            Some(p) => self.fail_pending(p),
            None => Vec::new(),
        }
    }

    /// Every outstanding request is lost, for example when the channel
    /// drops.
    pub fn on_gmlc_down(&mut self) -> Vec<ServerAction> {
        let ids: Vec<u64> = self.inflight.keys().copied().collect();
        ids.into_iter().flat_map(|id| self.on_gmlc_error(id)).collect()
    }

    fn fail_pending(&mut self, pending: Pending) -> Vec<ServerAction> {
        self.stats.gmlc_failures += 1;
        pending
            .members()
            .into_iter()
            .flat_map(|c| self.abort(c, AlertCode::BadLocationStatement))
            .collect()
    }

    /// Aborts one connection with an alert and closes it.
    pub fn abort(&mut self, conn: ConnId, code: AlertCode) -> Vec<ServerAction> {
        let Some(session) = self.sessions.get_mut(&conn) else {
            return Vec::new();
        };
        let mut actions: Vec<ServerAction> =
            session.abort(code).into_iter().map(|message| ServerAction::Send { conn, message }).collect();
        self.stats.aborted += 1;
        self.disconnect(conn);
        actions.push(ServerAction::Failed { conn, info: AbortInfo { code, remote: false } });
        actions.push(ServerAction::Close { conn });
        actions
    }

    pub fn seal_application_data(&mut self, conn: ConnId, data: &[u8]) -> Option<HandshakeMessage> {
        self.sessions.get_mut(&conn)?.seal_application_data(data).ok()
    }
}

impl<R: CryptoRngCore> fmt::Debug for ServerEndpoint<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ServerEndpoint")
            .field("domain", &self.config.domain)
            .field("connections", &self.sessions.len())
            .field("batch", &self.batch.len())
            .field("inflight", &self.inflight.len())
            .field("stats", &self.stats)
            .finish()
    }
}

#[cfg(test)]
mod tests;
