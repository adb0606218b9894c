use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::CryptoRngCore;
use subtle::ConstantTimeEq;

use super::message::has_salve;
use super::{
    finished_mac, key_share_signed_bytes, AbortInfo, AlertCode, Certificate, Extension, HandshakeMessage,
    HandshakeTranscript, KeyExchangeMode, MessageType, Phase, RecordKeys, Role, StatementPayload, TlsError,
    NONCE_LEN, PREMASTER_LEN,
};
use crate::crypto::{
    derive_master_secret, dh_combine, dh_generate, session_digest, Digest, EphemeralKeyShare, MasterSecret,
    PublicKey, X25519_GROUP,
};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    /// Key of the CA that certifies servers.
    pub ca_key: PublicKey,
    /// Name the server certificate must carry.
    pub server_name: String,
    /// Offered key exchange modes.
    pub modes: Vec<KeyExchangeMode>,
    pub offer_salve: bool,
    /// Abort with `downgrade_detected` if the server does not echo SALVE.
    pub require_salve: bool,
}

impl ClientConfig {
    pub fn new(ca_key: PublicKey, server_name: &str) -> ClientConfig {
        ClientConfig {
            ca_key,
            server_name: String::from(server_name),
            modes: vec![KeyExchangeMode::Dhe],
            offer_salve: true,
            require_salve: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientEvent {
    /// Server Finished verified and no statement is expected.
    Established,
    /// A statement arrived; the caller must verify it and then call
    /// [`ClientSession::accept_statement`] or [`ClientSession::abort`].
    StatementReceived(StatementPayload),
    ApplicationData(Vec<u8>),
    Aborted(AbortInfo),
}

#[derive(Debug, Default)]
pub struct Output<E> {
    pub messages: Vec<HandshakeMessage>,
    pub event: Option<E>,
}

impl<E> Output<E> {
    fn none() -> Self {
        Output { messages: Vec::new(), event: None }
    }
}

pub struct ClientSession<R: CryptoRngCore> {
    config: ClientConfig,
    rng: R,
    phase: Phase,
    nonce: [u8; NONCE_LEN],
    server_nonce: [u8; NONCE_LEN],
    mode: Option<KeyExchangeMode>,
    salve: bool,
    server_key: Option<PublicKey>,
    transcript: HandshakeTranscript,
    master: Option<MasterSecret>,
    keys: Option<RecordKeys>,
    abort: Option<AbortInfo>,
}

impl<R: CryptoRngCore> ClientSession<R> {
    /// Creates the session and its ClientHello.
    pub fn start(config: ClientConfig, mut rng: R) -> (Self, HandshakeMessage) {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let extensions = if config.offer_salve { vec![Extension::salve()] } else { Vec::new() };
        let hello = HandshakeMessage::ClientHello { nonce, modes: config.modes.clone(), extensions };
        let mut transcript = HandshakeTranscript::new();
        transcript.append(&hello.encode());
        let s = ClientSession {
            config,
            rng,
            phase: Phase::Hello,
            nonce,
            server_nonce: [0; NONCE_LEN],
            mode: None,
            salve: false,
            server_key: None,
            transcript,
            master: None,
            keys: None,
            abort: None,
        };
        (s, hello)
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

    /// `h(k)`, available once the key exchange is complete.
    pub fn session_digest(&self) -> Option<Digest> {
        self.master.as_ref().map(session_digest)
    }

    pub fn abort_info(&self) -> Option<AbortInfo> {
        self.abort
    }

    pub fn server_key(&self) -> Option<&PublicKey> {
        self.server_key.as_ref()
    }

    /// Decodes and processes one framed message.
    pub fn handle_bytes(&mut self, bytes: &[u8]) -> Output<ClientEvent> {
        match HandshakeMessage::decode(bytes) {
            Ok(m) => self.handle(m),
            Err(_) => self.fail(AlertCode::UnexpectedMessage),
        }
    }

    pub fn handle(&mut self, msg: HandshakeMessage) -> Output<ClientEvent> {
        if self.phase == Phase::Aborted {
            return Output::none();
        }
        if let HandshakeMessage::Alert { code } = msg {
            self.phase = Phase::Aborted;
            let info = AbortInfo { code, remote: true };
            self.abort = Some(info);
            return Output { messages: Vec::new(), event: Some(ClientEvent::Aborted(info)) };
        }
        match self.step(msg) {
            Ok(out) => out,
            Err(code) => self.fail(code),
        }
    }

    fn step(&mut self, msg: HandshakeMessage) -> Result<Output<ClientEvent>, AlertCode> {
        match (self.phase, msg) {
            (Phase::Hello, m @ HandshakeMessage::ServerHello { .. }) => self.on_server_hello(m),
            (Phase::KeyExchange, m @ HandshakeMessage::ServerCert { .. }) if self.server_key.is_none() => {
                self.on_certificate(m)
            }
            (Phase::KeyExchange, m @ HandshakeMessage::ServerKeyShare { .. })
                if self.server_key.is_some() && self.mode == Some(KeyExchangeMode::Dhe) =>
            {
                self.on_key_share(m)
            }
            (Phase::FinishedWait, HandshakeMessage::Finished { mac }) => {
                let master = self.master.as_ref().expect("master set before FinishedWait");
                let want = finished_mac(master, &self.transcript.hash(), Role::Server);
                if !bool::from(want.0.ct_eq(&mac.0)) {
                    return Err(AlertCode::DecryptError);
                }
                if self.salve {
                    self.phase = Phase::StatementWait;
                    Ok(Output::none())
                } else {
                    self.phase = Phase::Established;
                    Ok(Output { messages: Vec::new(), event: Some(ClientEvent::Established) })
                }
            }
            (Phase::StatementWait, HandshakeMessage::LocationStatement { sealed }) => {
                let keys = self.keys.as_mut().expect("keys set before StatementWait");
                let plain = keys
                    .server_write
                    .open(MessageType::LocationStatement as u8, &sealed)
                    .map_err(|_| AlertCode::DecryptError)?;
                let payload = StatementPayload::decode(&plain).map_err(|_| AlertCode::BadLocationStatement)?;
                Ok(Output { messages: Vec::new(), event: Some(ClientEvent::StatementReceived(payload)) })
            }
            (Phase::Established, HandshakeMessage::ApplicationData { sealed }) => {
                let keys = self.keys.as_mut().expect("keys set when established");
                let data = keys
                    .server_write
                    .open(MessageType::ApplicationData as u8, &sealed)
                    .map_err(|_| AlertCode::DecryptError)?;
                Ok(Output { messages: Vec::new(), event: Some(ClientEvent::ApplicationData(data)) })
            }
            _ => Err(AlertCode::UnexpectedMessage),
        }
    }

    fn on_server_hello(&mut self, m: HandshakeMessage) -> Result<Output<ClientEvent>, AlertCode> {
        let encoded = m.encode();
        let HandshakeMessage::ServerHello { nonce, mode, extensions } = m else { unreachable!() };
        if !self.config.modes.contains(&mode) {
            return Err(AlertCode::UnexpectedMessage);
        }
        let echoed = has_salve(&extensions);
        if echoed && !self.config.offer_salve {
            return Err(AlertCode::UnexpectedMessage);
        }
        if self.config.require_salve && !echoed {
            return Err(AlertCode::DowngradeDetected);
        }
        self.salve = echoed;
        self.mode = Some(mode);
        self.server_nonce = nonce;
        self.transcript.append(&encoded);
        self.phase = Phase::KeyExchange;
        Ok(Output::none())
    }

    fn on_certificate(&mut self, m: HandshakeMessage) -> Result<Output<ClientEvent>, AlertCode> {
        let encoded = m.encode();
        let HandshakeMessage::ServerCert { domain, public_key, ca_signature } = m else { unreachable!() };
        let public = PublicKey::from_der(&public_key).map_err(|_| AlertCode::BadCertificate)?;
        let cert = Certificate { domain, public, ca_signature };
        if cert.domain != self.config.server_name || !cert.verify(&self.config.ca_key) {
            return Err(AlertCode::BadCertificate);
        }
        self.transcript.append(&encoded);
        self.server_key = Some(cert.public);
        if self.mode == Some(KeyExchangeMode::StaticRsa) {
            let mut premaster = [0u8; PREMASTER_LEN];
            self.rng.fill_bytes(&mut premaster);
            let key = self.server_key.as_ref().unwrap();
            let payload = key.encrypt(&mut self.rng, &premaster).map_err(|_| AlertCode::BadCertificate)?;
            return Ok(self.finish_key_exchange(&premaster, payload));
        }
        Ok(Output::none())
    }

    fn on_key_share(&mut self, m: HandshakeMessage) -> Result<Output<ClientEvent>, AlertCode> {
        let encoded = m.encode();
        let HandshakeMessage::ServerKeyShare { group, public, signature } = m else { unreachable!() };
        if group != X25519_GROUP {
            return Err(AlertCode::UnexpectedMessage);
        }
        let signed = key_share_signed_bytes(&self.nonce, &self.server_nonce, group, &public);
        if !self.server_key.as_ref().unwrap().verify(&signed, &signature) {
            return Err(AlertCode::BadCertificate);
        }
        self.transcript.append(&encoded);
        let share: EphemeralKeyShare = dh_generate(&mut self.rng);
        let shared = dh_combine(&share, &public).map_err(|_| AlertCode::DecryptError)?;
        Ok(self.finish_key_exchange(shared.as_bytes(), share.public().to_vec()))
    }

    /// Sends ClientKeyShare and Finished and derives the session keys.
    fn finish_key_exchange(&mut self, secret: &[u8], payload: Vec<u8>) -> Output<ClientEvent> {
        let cks = HandshakeMessage::ClientKeyShare { payload };
        self.transcript.append(&cks.encode());
        let th = self.transcript.hash();
        let master = derive_master_secret(secret, &th);
        let fin = HandshakeMessage::Finished { mac: finished_mac(&master, &th, Role::Client) };
        self.keys = Some(RecordKeys::derive(&master));
        self.master = Some(master);
        self.phase = Phase::FinishedWait;
        Output { messages: vec![cks, fin], event: None }
    }

    fn fail(&mut self, code: AlertCode) -> Output<ClientEvent> {
        let messages = self.abort(code);
        Output { messages, event: Some(ClientEvent::Aborted(AbortInfo { code, remote: false })) }
    }

    /// Aborts locally and returns the alert to send. Idempotent.
    pub fn abort(&mut self, code: AlertCode) -> Vec<HandshakeMessage> {
        if self.phase == Phase::Aborted {
            return Vec::new();
        }
        self.phase = Phase::Aborted;
        self.abort = Some(AbortInfo { code, remote: false });
        vec![HandshakeMessage::Alert { code }]
    }

    /// Completes a SALVE handshake after the caller verified the statement.
    pub fn accept_statement(&mut self) -> Result<(), TlsError> {
        if self.phase != Phase::StatementWait {
            return Err(TlsError::WrongPhase(self.phase));
        }
        self.phase = Phase::Established;
        Ok(())
    }

    pub fn seal_application_data(&mut self, data: &[u8]) -> Result<HandshakeMessage, TlsError> {
        if self.phase != Phase::Established {
            return Err(TlsError::WrongPhase(self.phase));
        }
        let keys = self.keys.as_mut().expect("keys set when established");
        Ok(HandshakeMessage::ApplicationData { sealed: keys.client_write.seal(MessageType::ApplicationData as u8, data) })
    }
}

impl<R: CryptoRngCore> core::fmt::Debug for ClientSession<R> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ClientSession")
            .field("phase", &self.phase)
            .field("mode", &self.mode)
            .field("salve", &self.salve)
            .field("transcript", &self.transcript)
            .finish_non_exhaustive()
    }
}
