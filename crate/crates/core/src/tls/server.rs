use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::CryptoRngCore;
use subtle::ConstantTimeEq;

use super::client::Output;
use super::message::has_salve;
use super::{
    finished_mac, key_share_signed_bytes, AbortInfo, AlertCode, Certificate, Extension, HandshakeMessage,
    HandshakeTranscript, KeyExchangeMode, MessageType, Phase, RecordKeys, Role, StatementPayload, TlsError,
    NONCE_LEN, PREMASTER_LEN,
};
use crate::crypto::{
    derive_master_secret, dh_combine, dh_generate, session_digest, Digest, EphemeralKeyShare, MasterSecret,
    SigningIdentity,
};

#[derive(Debug, Clone)]
pub struct ServerTlsConfig {
    pub certificate: Certificate,
    /// Private half of the certificate key.
    pub key: SigningIdentity,
    /// Accepted key exchange modes in preference order.
    pub modes: Vec<KeyExchangeMode>,
    /// Echo the SALVE extension when offered.
    pub salve: bool,
}

impl ServerTlsConfig {
    pub fn new(certificate: Certificate, key: SigningIdentity) -> ServerTlsConfig {
        ServerTlsConfig { certificate, key, modes: vec![KeyExchangeMode::Dhe], salve: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerEvent {
    /// Client Finished verified on a plain handshake.
    Established,
    /// Client Finished verified with SALVE negotiated; the statement for
    /// this digest must be supplied through
    /// [`ServerSession::deliver_statement`].
    StatementNeeded(Digest),
    ApplicationData(Vec<u8>),
    Aborted(AbortInfo),
}

pub struct ServerSession<R: CryptoRngCore> {
    config: Arc<ServerTlsConfig>,
    rng: R,
    phase: Phase,
    mode: Option<KeyExchangeMode>,
    salve: bool,
    share: Option<EphemeralKeyShare>,
    transcript: HandshakeTranscript,
    master: Option<MasterSecret>,
    keys: Option<RecordKeys>,
    abort: Option<AbortInfo>,
}

impl<R: CryptoRngCore> ServerSession<R> {
    pub fn new(config: Arc<ServerTlsConfig>, rng: R) -> Self {
        ServerSession {
            config,
            rng,
            phase: Phase::Hello,
            mode: None,
            salve: false,
            share: None,
            transcript: HandshakeTranscript::new(),
            master: None,
            keys: None,
            abort: None,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_established(&self) -> bool {
        self.phase == Phase::Established
    }

    pub fn salve_negotiated(&self) -> bool {
        self.salve
    }

    pub fn mode(&self) -> Option<KeyExchangeMode> {
        self.mode
    }

    pub fn master(&self) -> Option<&MasterSecret> {
        self.master.as_ref()
    }

    pub fn session_digest(&self) -> Option<Digest> {
        self.master.as_ref().map(session_digest)
    }

    pub fn abort_info(&self) -> Option<AbortInfo> {
        self.abort
    }

    pub fn handle_bytes(&mut self, bytes: &[u8]) -> Output<ServerEvent> {
        match HandshakeMessage::decode(bytes) {
            Ok(m) => self.handle(m),
            Err(_) => self.fail(AlertCode::UnexpectedMessage),
        }
    }

    pub fn handle(&mut self, msg: HandshakeMessage) -> Output<ServerEvent> {
        if self.phase == Phase::Aborted {
            return Output { messages: Vec::new(), event: None };
        }
        if let HandshakeMessage::Alert { code } = msg {
            self.phase = Phase::Aborted;
            let info = AbortInfo { code, remote: true };
            self.abort = Some(info);
            return Output { messages: Vec::new(), event: Some(ServerEvent::Aborted(info)) };
        }
        match self.step(msg) {
            Ok(out) => out,
            Err(code) => self.fail(code),
        }
    }

    fn step(&mut self, msg: HandshakeMessage) -> Result<Output<ServerEvent>, AlertCode> {
        match (self.phase, msg) {
            (Phase::Hello, m @ HandshakeMessage::ClientHello { .. }) => self.on_client_hello(m),
            (Phase::KeyExchange, m @ HandshakeMessage::ClientKeyShare { .. }) => self.on_client_key_share(m),
            (Phase::FinishedWait, HandshakeMessage::Finished { mac }) => {
                let master = self.master.as_ref().expect("master set before FinishedWait");
                let th = self.transcript.hash();
                let want = finished_mac(master, &th, Role::Client);
                if !bool::from(want.0.ct_eq(&mac.0)) {
                    return Err(AlertCode::DecryptError);
                }
                let fin = HandshakeMessage::Finished { mac: finished_mac(master, &th, Role::Server) };
                let event = if self.salve {
                    self.phase = Phase::StatementWait;
                    ServerEvent::StatementNeeded(session_digest(master))
                } else {
                    self.phase = Phase::Established;
                    ServerEvent::Established
                };
                Ok(Output { messages: vec![fin], event: Some(event) })
            }
            (Phase::Established, HandshakeMessage::ApplicationData { sealed }) => {
                let keys = self.keys.as_mut().expect("keys set when established");
                let data = keys
                    .client_write
                    .open(MessageType::ApplicationData as u8, &sealed)
                    .map_err(|_| AlertCode::DecryptError)?;
                Ok(Output { messages: Vec::new(), event: Some(ServerEvent::ApplicationData(data)) })
            }
            _ => Err(AlertCode::UnexpectedMessage),
        }
    }

    fn on_client_hello(&mut self, m: HandshakeMessage) -> Result<Output<ServerEvent>, AlertCode> {
        self.transcript.append(&m.encode());
        let HandshakeMessage::ClientHello { nonce: client_nonce, modes, extensions } = m else { unreachable!() };
        let mode = *self
            .config
            .modes
            .iter()
            .find(|m| modes.contains(m))
            .ok_or(AlertCode::UnexpectedMessage)?;
        self.mode = Some(mode);
        self.salve = self.config.salve && has_salve(&extensions);
        let mut nonce = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        let hello = HandshakeMessage::ServerHello {
            nonce,
            mode,
            extensions: if self.salve { vec![Extension::salve()] } else { Vec::new() },
        };
        let mut out = vec![hello, self.config.certificate.to_message()];
        if mode == KeyExchangeMode::Dhe {
            let share = dh_generate(&mut self.rng);
            let signed = key_share_signed_bytes(&client_nonce, &nonce, share.group(), share.public());
            let signature = self.config.key.sign(&signed).map_err(|_| AlertCode::BadCertificate)?.0;
            out.push(HandshakeMessage::ServerKeyShare { group: share.group(), public: share.public().to_vec(), signature });
            self.share = Some(share);
        }
        for m in &out {
            self.transcript.append(&m.encode());
        }
        self.phase = Phase::KeyExchange;
        Ok(Output { messages: out, event: None })
    }

    fn on_client_key_share(&mut self, m: HandshakeMessage) -> Result<Output<ServerEvent>, AlertCode> {
        self.transcript.append(&m.encode());
        let HandshakeMessage::ClientKeyShare { payload } = m else { unreachable!() };
        let th = self.transcript.hash();
        let master = match self.mode {
            Some(KeyExchangeMode::Dhe) => {
                let share = self.share.take().expect("share generated with the hello");
                let shared = dh_combine(&share, &payload).map_err(|_| AlertCode::DecryptError)?;
                derive_master_secret(shared.as_bytes(), &th)
            }
            _ => {
                let premaster = self.config.key.decrypt(&payload).map_err(|_| AlertCode::DecryptError)?;
                if premaster.len() != PREMASTER_LEN {
                    return Err(AlertCode::DecryptError);
                }
                derive_master_secret(&premaster, &th)
            }
        };
        self.keys = Some(RecordKeys::derive(&master));
        self.master = Some(master);
        self.phase = Phase::FinishedWait;
        Ok(Output { messages: Vec::new(), event: None })
    }

    fn fail(&mut self, code: AlertCode) -> Output<ServerEvent> {
        let messages = self.abort(code);
        Output { messages, event: Some(ServerEvent::Aborted(AbortInfo { code, remote: false })) }
    }

    pub fn abort(&mut self, code: AlertCode) -> Vec<HandshakeMessage> {
        if self.phase == Phase::Aborted {
            return Vec::new();
        }
        self.phase = Phase::Aborted;
        self.abort = Some(AbortInfo { code, remote: false });
        vec![HandshakeMessage::Alert { code }]
    }

    /// Seals the statement for the client and completes the handshake.
    pub fn deliver_statement(&mut self, payload: &StatementPayload) -> Result<HandshakeMessage, TlsError> {
        if self.phase != Phase::StatementWait {
            return Err(TlsError::WrongPhase(self.phase));
        }
        let keys = self.keys.as_mut().expect("keys set before StatementWait");
        let sealed = keys.server_write.seal(MessageType::LocationStatement as u8, &payload.encode());
        self.phase = Phase::Established;
        Ok(HandshakeMessage::LocationStatement { sealed })
    }

    pub fn seal_application_data(&mut self, data: &[u8]) -> Result<HandshakeMessage, TlsError> {
        if self.phase != Phase::Established {
            return Err(TlsError::WrongPhase(self.phase));
        }
        let keys = self.keys.as_mut().expect("keys set when established");
        Ok(HandshakeMessage::ApplicationData { sealed: keys.server_write.seal(MessageType::ApplicationData as u8, data) })
    }
}

impl<R: CryptoRngCore> core::fmt::Debug for ServerSession<R> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ServerSession")
            .field("phase", &self.phase)
            .field("mode", &self.mode)
            .field("salve", &self.salve)
            .field("transcript", &self.transcript)
            .finish_non_exhaustive()
    }
}
