//! TCP services: the GMLC, the web server and a one-shot client.
//!
//! The GMLC speaks length-prefixed MLP documents (`u32` big-endian length,
//! then UTF-8 XML) over long-lived connections that carry many requests.
//! The handshake runs directly over TCP; its messages are self-delimiting.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;

use salve_core::client::{ClientContext, Connection, ConnectionStatus, VerificationVerdict};
use salve_core::crypto::{to_hex, Digest, SigningIdentity};
use salve_core::dns::ValidatedRecordSet;
use salve_core::gmlc::{issue_statement, SimRegistry};
use salve_core::server::{ConnId, ServerAction, ServerConfig, ServerEndpoint};
use salve_core::tls::{AlertCode, HandshakeMessage};

use crate::mlp;
use crate::Error;

const MAX_FRAME: usize = 1 << 20;

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `None` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

/// The GMLC: answers statement requests from its registry.
pub struct GmlcService {
    registry: Mutex<SimRegistry>,
    key: SigningIdentity,
    /// Localize every requested SIM at request time instead of returning
    /// the stored fix.
    relocalize: bool,
}

impl GmlcService {
    pub fn new(registry: SimRegistry, key: SigningIdentity, relocalize: bool) -> GmlcService {
        GmlcService { registry: Mutex::new(registry), key, relocalize }
    }

    /// Answers one request document; `None` if it does not parse.
    pub fn answer(&self, xml: &str, now: u64) -> Option<String> {
        let req = mlp::decode_request(xml).ok()?;
        let mut reg = self.registry.lock().expect("registry lock");
        if self.relocalize {
            for id in &req.sim_ids {
                if let Some(loc) = reg.get(id).map(|r| r.location) {
                    let _ = reg.update_location(id, loc, now);
                }
            }
        }
        Some(mlp::encode_response(&issue_statement(&reg, &self.key, &req)))
    }

    /// Serves one persistent connection until the peer hangs up.
    pub fn serve_stream(&self, mut stream: TcpStream) -> io::Result<()> {
        while let Some(frame) = read_frame(&mut stream)? {
            let Some(answer) = std::str::from_utf8(&frame).ok().and_then(|x| self.answer(x, unix_now())) else {
                return stream.shutdown(Shutdown::Both);
            };
            write_frame(&mut stream, answer.as_bytes())?;
        }
        Ok(())
    }

    pub fn serve(self: Arc<Self>, listener: TcpListener) -> io::Result<()> {
        for stream in listener.incoming() {
            let stream = stream?;
            let me = self.clone();
            thread::spawn(move || me.serve_stream(stream));
        }
        Ok(())
    }
}

enum Event {
    Accepted(ConnId, TcpStream),
    Bytes(ConnId, Vec<u8>),
    Closed(ConnId),
    Gmlc(String),
    GmlcClosed,
}

fn pump(mut stream: TcpStream, conn: ConnId, tx: Sender<Event>) {
    let mut buf = [0u8; 8192];
    loop {
        match stream.read(&mut buf) {
            Ok(0) | Err(_) => {
                let _ = tx.send(Event::Closed(conn));
                return;
            }
            Ok(n) => {
                if tx.send(Event::Bytes(conn, buf[..n].to_vec())).is_err() {
                    return;
                }
            }
        }
    }
}

/// One line of the server's event log.
#[derive(Debug, Clone, PartialEq)]
pub struct HandshakeEvent {
    pub conn: ConnId,
    pub peer: String,
    pub outcome: &'static str,
    pub salve: bool,
    pub alert: Option<AlertCode>,
    pub latency_ms: f64,
    pub gmlc_rtt_ms: Option<f64>,
}

pub const EVENT_LOG_HEADER: [&str; 7] = ["conn", "peer", "outcome", "salve", "alert", "latency_ms", "gmlc_rtt_ms"];

/// CSV sink for [`HandshakeEvent`]s.
pub struct EventLog {
    w: csv::Writer<Box<dyn Write + Send>>,
}

impl EventLog {
    pub fn new(out: Box<dyn Write + Send>) -> Result<EventLog, Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(EVENT_LOG_HEADER).map_err(|e| Error::Parse(e.to_string()))?;
        w.flush()?;
        Ok(EventLog { w })
    }

    pub fn record(&mut self, e: &HandshakeEvent) -> Result<(), Error> {
        self.w
            .write_record([
                e.conn.to_string(),
                e.peer.clone(),
                e.outcome.to_string(),
                e.salve.to_string(),
                e.alert.map(|a| a.as_str().to_string()).unwrap_or_default(),
                format!("{:.3}", e.latency_ms),
                e.gmlc_rtt_ms.map(|r| format!("{r:.3}")).unwrap_or_default(),
            ])
            .map_err(|e| Error::Parse(e.to_string()))?;
        self.w.flush()?;
        Ok(())
    }
}

struct Peer {
    stream: TcpStream,
    addr: String,
    buf: Vec<u8>,
    started: Option<Instant>,
}

/// The web server: accepts handshakes on `listener` and obtains statements
/// over one persistent GMLC connection. Runs until the listener fails.
pub struct WebServer {
    endpoint: ServerEndpoint<ChaCha20Rng>,
    gmlc_addr: String,
    gmlc: Option<TcpStream>,
    gmlc_sent: BTreeMap<u64, Instant>,
    peers: BTreeMap<ConnId, Peer>,
    log: Option<EventLog>,
    epoch: Instant,
    timer: Option<u64>,
    tx: Sender<Event>,
    rx: Receiver<Event>,
}

impl WebServer {
    pub fn new(config: ServerConfig, gmlc_addr: &str, log: Option<EventLog>) -> Result<WebServer, Error> {
        let (tx, rx) = mpsc::channel();
        Ok(WebServer {
            endpoint: ServerEndpoint::new(config)?,
            gmlc_addr: gmlc_addr.to_owned(),
            gmlc: None,
            gmlc_sent: BTreeMap::new(),
            peers: BTreeMap::new(),
            log,
            epoch: Instant::now(),
            timer: None,
            tx,
            rx,
        })
    }

    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    fn gmlc_stream(&mut self) -> Option<&mut TcpStream> {
        if self.gmlc.is_none() {
            let stream = TcpStream::connect(&self.gmlc_addr).ok()?;
            let _ = stream.set_nodelay(true);
            let mut reader = stream.try_clone().ok()?;
            let tx = self.tx.clone();
            thread::spawn(move || {
                while let Ok(Some(frame)) = read_frame(&mut reader) {
                    if tx.send(Event::Gmlc(String::from_utf8_lossy(&frame).into_owned())).is_err() {
                        return;
                    }
                }
                let _ = tx.send(Event::GmlcClosed);
            });
            self.gmlc = Some(stream);
        }
        self.gmlc.as_mut()
    }

    pub fn run(mut self, listener: TcpListener) -> Result<(), Error> {
        let tx = self.tx.clone();
        thread::spawn(move || {
            for (conn, stream) in (1..).zip(listener.incoming()) {
                let Ok(stream) = stream else { continue };
                let _ = stream.set_nodelay(true);
                let Ok(reader) = stream.try_clone() else { continue };
                if tx.send(Event::Accepted(conn, stream)).is_err() {
                    return;
                }
                let tx = tx.clone();
                thread::spawn(move || pump(reader, conn, tx));
            }
        });
        // Connect early so the channel outlives individual handshakes.
        let _ = self.gmlc_stream();
        loop {
            let event = match self.timer {
                Some(at) => {
                    let wait = at.saturating_sub(self.now_ms());
                    match self.rx.recv_timeout(Duration::from_millis(wait)) {
                        Ok(e) => Some(e),
                        Err(RecvTimeoutError::Timeout) => None,
                        Err(RecvTimeoutError::Disconnected) => return Ok(()),
                    }
                }
                None => match self.rx.recv() {
                    Ok(e) => Some(e),
                    Err(_) => return Ok(()),
                },
            };
            match event {
                None => {
                    self.timer = None;
                    let actions = self.endpoint.on_timer(self.now_ms());
                    self.apply(actions, None)?;
                }
                Some(e) => self.event(e)?,
            }
        }
    }

    fn event(&mut self, e: Event) -> Result<(), Error> {
        match e {
            Event::Accepted(conn, stream) => {
                let addr = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
                let seed = unix_now() ^ conn.rotate_left(32) ^ self.epoch.elapsed().as_nanos() as u64;
                self.endpoint.accept(conn, ChaCha20Rng::seed_from_u64(seed));
                self.peers.insert(conn, Peer { stream, addr, buf: Vec::new(), started: None });
            }
            Event::Bytes(conn, bytes) => {
                let Some(peer) = self.peers.get_mut(&conn) else { return Ok(()) };
                peer.started.get_or_insert_with(Instant::now);
                peer.buf.extend_from_slice(&bytes);
                let actions = match HandshakeMessage::decode_stream(&peer.buf) {
                    Ok((messages, used)) => {
                        peer.buf.drain(..used);
                        let now = self.now_ms();
                        messages.into_iter().flat_map(|m| self.endpoint.handle(conn, m, now)).collect()
                    }
                    Err(_) => self.endpoint.abort(conn, AlertCode::UnexpectedMessage),
                };
                self.apply(actions, None)?;
            }
            Event::Closed(conn) => {
                self.endpoint.disconnect(conn);
                self.peers.remove(&conn);
            }
            Event::Gmlc(xml) => {
                let (actions, rtt) = match mlp::decode_response(&xml) {
                    Ok(resp) => {
                        let rtt = self.gmlc_sent.remove(&resp.id).map(|t| t.elapsed().as_secs_f64() * 1e3);
                        (self.endpoint.on_gmlc_response(resp), rtt)
                    }
                    Err(_) => (self.endpoint.on_gmlc_down(), None),
                };
                self.apply(actions, rtt)?;
            }
            Event::GmlcClosed => {
                self.gmlc = None;
                self.gmlc_sent.clear();
                let actions = self.endpoint.on_gmlc_down();
                self.apply(actions, None)?;
            }
        }
        Ok(())
    }

    fn log(&mut self, conn: ConnId, outcome: &'static str, salve: bool, alert: Option<AlertCode>, rtt: Option<f64>) -> Result<(), Error> {
        let Some(peer) = self.peers.get(&conn) else { return Ok(()) };
        let event = HandshakeEvent {
            conn,
            peer: peer.addr.clone(),
            outcome,
            salve,
            alert,
            latency_ms: peer.started.map(|t| t.elapsed().as_secs_f64() * 1e3).unwrap_or(0.0),
            gmlc_rtt_ms: rtt,
        };
        match self.log.as_mut() {
            Some(log) => log.record(&event),
            None => Ok(()),
        }
    }

    fn apply(&mut self, actions: Vec<ServerAction>, rtt: Option<f64>) -> Result<(), Error> {
        let mut queue: std::collections::VecDeque<ServerAction> = actions.into();
        while let Some(a) = queue.pop_front() {
            match a {
                ServerAction::Send { conn, message } => {
                    if let Some(peer) = self.peers.get_mut(&conn) {
                        let _ = peer.stream.write_all(&message.encode());
                    }
                }
                ServerAction::Close { conn } => {
                    if let Some(peer) = self.peers.remove(&conn) {
                        let _ = peer.stream.shutdown(Shutdown::Both);
                    }
                }
                ServerAction::Gmlc(req) => {
                    let xml = mlp::encode_request(&req);
                    let sent = self.gmlc_stream().map(|s| write_frame(s, xml.as_bytes()).is_ok()).unwrap_or(false);
                    if sent {
                        self.gmlc_sent.insert(req.id, Instant::now());
                    } else {
                        self.gmlc = None;
                        queue.extend(self.endpoint.on_gmlc_error(req.id));
                    }
                }
                ServerAction::ArmTimer { at_ms } => {
                    self.timer = Some(self.timer.map_or(at_ms, |t| t.min(at_ms)));
                }
                ServerAction::Established { conn, salve } => self.log(conn, "established", salve, None, rtt)?,
                ServerAction::Failed { conn, info } => self.log(conn, "failed", false, Some(info.code), rtt)?,
                ServerAction::ApplicationData { conn, .. } => {
                    if let Some(m) = self.endpoint.seal_application_data(conn, crate::world::SERVER_RESPONSE) {
                        if let Some(peer) = self.peers.get_mut(&conn) {
                            let _ = peer.stream.write_all(&m.encode());
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Outcome of a client connection.
#[derive(Debug, Clone)]
pub struct ConnectResult {
    pub status: ConnectionStatus,
    pub verdict: Option<VerificationVerdict>,
    pub session_digest: Option<Digest>,
    pub responses: Vec<Vec<u8>>,
    pub elapsed_ms: f64,
}

/// Runs one handshake against `addr`; once established sends `request`
/// if given and waits briefly for the answer. Every message is logged to
/// `transcript` as `> hex` (sent) or `< hex` (received).
pub fn connect(
    addr: impl ToSocketAddrs,
    ctx: &ClientContext,
    records: ValidatedRecordSet,
    request: Option<&[u8]>,
    timeout: Duration,
    mut transcript: Option<&mut dyn Write>,
) -> Result<ConnectResult, Error> {
    let started = Instant::now();
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(timeout))?;
    let (mut conn, hello) = Connection::start(ctx, records, ChaCha20Rng::from_rng(rand_core::OsRng).expect("os rng"));
    let mut log = |dir: &str, bytes: &[u8]| {
        if let Some(t) = transcript.as_mut() {
            let _ = writeln!(t, "{dir} {}", to_hex(bytes));
        }
    };
    let send = |stream: &mut TcpStream, m: &HandshakeMessage, log: &mut dyn FnMut(&str, &[u8])| {
        let bytes = m.encode();
        log(">", &bytes);
        stream.write_all(&bytes)
    };
    send(&mut stream, &hello, &mut log)?;
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    let mut sent_request = false;
    let mut responses = Vec::new();
    loop {
        responses.extend(conn.take_application_data());
        if let ConnectionStatus::Established { .. } = conn.status() {
            match request {
                Some(r) if !sent_request => {
                    let m = conn.session_mut().seal_application_data(r)?;
                    send(&mut stream, &m, &mut log)?;
                    sent_request = true;
                }
                Some(_) if !responses.is_empty() => break,
                Some(_) => {}
                None => break,
            }
        }
        if let ConnectionStatus::Failed(_) = conn.status() {
            break;
        }
        let n = match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => break,
            Err(e) => return Err(e.into()),
        };
        buf.extend_from_slice(&chunk[..n]);
        let (messages, used) = match HandshakeMessage::decode_stream(&buf) {
            Ok(x) => x,
            Err(_) => {
                log("<", &buf);
                for reply in conn.handle_bytes(&buf, unix_now()) {
                    send(&mut stream, &reply, &mut log)?;
                }
                break;
            }
        };
        let raw: Vec<Vec<u8>> = messages.iter().map(|m| m.encode()).collect();
        buf.drain(..used);
        for (m, bytes) in messages.into_iter().zip(raw) {
            log("<", &bytes);
            for reply in conn.handle(m, unix_now()) {
                send(&mut stream, &reply, &mut log)?;
            }
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
    responses.extend(conn.take_application_data());
    Ok(ConnectResult {
        status: conn.status(),
        verdict: conn.verdict(),
        session_digest: conn.session().session_digest(),
        responses,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}
