//! A small TLS-like handshake: hello with extension negotiation, a bare CA
//! signed certificate, ephemeral X25519 (or the insecure static-RSA
//! exchange), Finished MACs over the transcript, then an optional sealed
//! location statement from the server.
//!
//! Both endpoints are sans-IO state machines. They consume decoded
//! messages and return the messages to send plus an event for the caller.
//!
//! ```text
//! client                                  server
//! ClientHello [+SALVE]             -->
//!                                  <--    ServerHello [+SALVE]
//!                                         ServerCert
//!                                         ServerKeyShare (DHE only)
//! ClientKeyShare
//! Finished                         -->
//!                                  <--    Finished
//!                                  <--    LocationStatement (SALVE only)
//! ```

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::bytes::PutExt;
use crate::crypto::{PublicKey, SigningIdentity};

mod client;
mod keys;
mod message;
mod server;

pub use client::{ClientConfig, ClientEvent, ClientSession, Output};
pub use keys::{finished_mac, DirectionKey, HandshakeTranscript, RecordKeys};
pub use message::{Extension, HandshakeMessage, MessageType, StatementPayload, NONCE_LEN, SALVE_EXTENSION};
pub use server::{ServerEvent, ServerSession, ServerTlsConfig};

/// Length of the client-chosen premaster in static-RSA mode.
pub const PREMASTER_LEN: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Client,
    Server,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyExchangeMode {
    /// Ephemeral X25519; the master secret never crosses the wire.
    Dhe = 1,
    /// The client picks the premaster and encrypts it to the certificate
    /// key. Anyone holding that key can recompute the master secret.
    StaticRsa = 2,
}

impl KeyExchangeMode {
    pub(crate) fn from_u8(b: u8) -> Option<KeyExchangeMode> {
        match b {
            1 => Some(KeyExchangeMode::Dhe),
            2 => Some(KeyExchangeMode::StaticRsa),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlertCode {
    UnexpectedMessage = 10,
    BadCertificate = 42,
    DecryptError = 51,
    BadLocationStatement = 110,
    LocationMismatch = 111,
    StaleStatement = 112,
    DowngradeDetected = 113,
}

impl AlertCode {
    pub(crate) fn from_u8(b: u8) -> Option<AlertCode> {
        use AlertCode::*;
        [
            UnexpectedMessage,
            BadCertificate,
            DecryptError,
            BadLocationStatement,
            LocationMismatch,
            StaleStatement,
            DowngradeDetected,
        ]
        .into_iter()
        .find(|c| *c as u8 == b)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AlertCode::UnexpectedMessage => "unexpected_message",
            AlertCode::BadCertificate => "bad_certificate",
            AlertCode::DecryptError => "decrypt_error",
            AlertCode::BadLocationStatement => "bad_location_statement",
            AlertCode::LocationMismatch => "location_mismatch",
            AlertCode::StaleStatement => "stale_statement",
            AlertCode::DowngradeDetected => "downgrade_detected",
        }
    }
}

impl fmt::Display for AlertCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Hello,
    KeyExchange,
    FinishedWait,
    /// Client: Finished verified, waiting for the location statement.
    /// Server: Finished verified, waiting for the GMLC's statement.
    StatementWait,
    Established,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlsError {
    Decode,
    /// The operation aborted the session with this alert.
    Alert(AlertCode),
    /// Called in a phase that does not allow it.
    WrongPhase(Phase),
}

impl fmt::Display for TlsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TlsError::Decode => f.write_str("malformed handshake message"),
            TlsError::Alert(a) => write!(f, "alert {a}"),
            TlsError::WrongPhase(p) => write!(f, "not allowed in phase {p:?}"),
        }
    }
}

impl core::error::Error for TlsError {}

/// How a session ended, if it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AbortInfo {
    pub code: AlertCode,
    /// True when the peer sent the alert.
    pub remote: bool,
}

/// A bare certificate: the CA's signature over the domain and the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub domain: String,
    pub public: PublicKey,
    pub ca_signature: Vec<u8>,
}

impl Certificate {
    fn signed_bytes(domain: &str, public: &PublicKey) -> Vec<u8> {
        let mut out = Vec::from(&b"salve certificate"[..]);
        out.put_vec_u8(domain.as_bytes());
        out.extend_from_slice(public.to_der());
        out
    }

    pub fn issue(domain: &str, public: &PublicKey, ca: &SigningIdentity) -> Result<Certificate, crate::crypto::CryptoError> {
        let ca_signature = ca.sign(&Self::signed_bytes(domain, public))?.0;
        Ok(Certificate { domain: String::from(domain), public: public.clone(), ca_signature })
    }

    pub fn verify(&self, ca_key: &PublicKey) -> bool {
        ca_key.verify(&Self::signed_bytes(&self.domain, &self.public), &self.ca_signature)
    }

    pub(crate) fn to_message(&self) -> HandshakeMessage {
        HandshakeMessage::ServerCert {
            domain: self.domain.clone(),
            public_key: self.public.to_der().to_vec(),
            ca_signature: self.ca_signature.clone(),
        }
    }
}

/// Bytes covered by the signature on a ServerKeyShare.
pub(crate) fn key_share_signed_bytes(client_nonce: &[u8], server_nonce: &[u8], group: u16, point: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 * NONCE_LEN + 3 + point.len());
    out.extend_from_slice(client_nonce);
    out.extend_from_slice(server_nonce);
    out.put_u16(group);
    out.put_vec_u8(point);
    out
}
