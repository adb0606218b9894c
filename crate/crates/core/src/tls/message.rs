use alloc::string::String;
use alloc::vec::Vec;

use super::{AlertCode, KeyExchangeMode, TlsError};
use crate::bytes::{PutExt, Reader};
use crate::crypto::{Digest, MerkleProof};

/// Hello extension announcing location-statement support.
pub const SALVE_EXTENSION: u16 = 0xfe5a;

pub const NONCE_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extension {
    pub kind: u16,
    pub data: Vec<u8>,
}

impl Extension {
    pub fn salve() -> Extension {
        Extension { kind: SALVE_EXTENSION, data: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageType {
    ClientHello = 1,
    ServerHello = 2,
    ServerCert = 11,
    ServerKeyShare = 12,
    ClientKeyShare = 16,
    Finished = 20,
    LocationStatement = 60,
    ApplicationData = 23,
    Alert = 21,
}

impl MessageType {
    /// The type named by a message's first byte.
    pub fn from_code(b: u8) -> Option<MessageType> {
        Self::from_u8(b)
    }

    fn from_u8(b: u8) -> Option<MessageType> {
        use MessageType::*;
        Some(match b {
            1 => ClientHello,
            2 => ServerHello,
            11 => ServerCert,
            12 => ServerKeyShare,
            16 => ClientKeyShare,
            20 => Finished,
            60 => LocationStatement,
            23 => ApplicationData,
            21 => Alert,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandshakeMessage {
    ClientHello { nonce: [u8; NONCE_LEN], modes: Vec<KeyExchangeMode>, extensions: Vec<Extension> },
    ServerHello { nonce: [u8; NONCE_LEN], mode: KeyExchangeMode, extensions: Vec<Extension> },
    /// A bare certificate: the CA's signature over domain and key.
    ServerCert { domain: String, public_key: Vec<u8>, ca_signature: Vec<u8> },
    /// Ephemeral share signed by the certificate key over both nonces,
    /// the group and the point.
    ServerKeyShare { group: u16, public: Vec<u8>, signature: Vec<u8> },
    /// The client's DH point, or the RSA-encrypted premaster in static-RSA
    /// mode.
    ClientKeyShare { payload: Vec<u8> },
    Finished { mac: Digest },
    /// Sealed [`StatementPayload`].
    LocationStatement { sealed: Vec<u8> },
    ApplicationData { sealed: Vec<u8> },
    Alert { code: AlertCode },
}

impl HandshakeMessage {
    pub fn message_type(&self) -> MessageType {
        match self {
            HandshakeMessage::ClientHello { .. } => MessageType::ClientHello,
            HandshakeMessage::ServerHello { .. } => MessageType::ServerHello,
            HandshakeMessage::ServerCert { .. } => MessageType::ServerCert,
            HandshakeMessage::ServerKeyShare { .. } => MessageType::ServerKeyShare,
            HandshakeMessage::ClientKeyShare { .. } => MessageType::ClientKeyShare,
            HandshakeMessage::Finished { .. } => MessageType::Finished,
            HandshakeMessage::LocationStatement { .. } => MessageType::LocationStatement,
            HandshakeMessage::ApplicationData { .. } => MessageType::ApplicationData,
            HandshakeMessage::Alert { .. } => MessageType::Alert,
        }
    }

    /// `type ‖ u24 length ‖ body`.
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        match self {
            HandshakeMessage::ClientHello { nonce, modes, extensions } => {
                body.extend_from_slice(nonce);
                body.push(modes.len() as u8);
                body.extend(modes.iter().map(|m| *m as u8));
                put_extensions(&mut body, extensions);
            }
            HandshakeMessage::ServerHello { nonce, mode, extensions } => {
                body.extend_from_slice(nonce);
                body.push(*mode as u8);
                put_extensions(&mut body, extensions);
            }
            HandshakeMessage::ServerCert { domain, public_key, ca_signature } => {
                body.put_vec_u8(domain.as_bytes());
                body.put_vec_u16(public_key);
                body.put_vec_u16(ca_signature);
            }
            HandshakeMessage::ServerKeyShare { group, public, signature } => {
                body.put_u16(*group);
                body.put_vec_u8(public);
                body.put_vec_u16(signature);
            }
            HandshakeMessage::ClientKeyShare { payload } => body.put_vec_u16(payload),
            HandshakeMessage::Finished { mac } => body.extend_from_slice(mac.as_bytes()),
            HandshakeMessage::LocationStatement { sealed } | HandshakeMessage::ApplicationData { sealed } => {
                body.extend_from_slice(sealed)
            }
            HandshakeMessage::Alert { code } => body.push(*code as u8),
        }
        let mut out = Vec::with_capacity(4 + body.len());
        out.push(self.message_type() as u8);
        out.put_u24(body.len() as u32);
        out.extend_from_slice(&body);
        out
    }

    /// Decodes exactly one framed message.
    pub fn decode(bytes: &[u8]) -> Result<HandshakeMessage, TlsError> {
        let mut r = Reader::new(bytes);
        let msg = Self::read(&mut r)?;
        r.finish().map_err(|_| TlsError::Decode)?;
        Ok(msg)
    }

    /// Splits a byte stream into framed messages; returns the messages and
    /// the number of bytes consumed.
    pub fn decode_stream(buf: &[u8]) -> Result<(Vec<HandshakeMessage>, usize), TlsError> {
        let mut out = Vec::new();
        let mut pos = 0;
        while buf.len() - pos >= 4 {
            let len = u32::from_be_bytes([0, buf[pos + 1], buf[pos + 2], buf[pos + 3]]) as usize;
            if buf.len() - pos < 4 + len {
                break;
            }
            out.push(Self::decode(&buf[pos..pos + 4 + len])?);
            pos += 4 + len;
        }
        Ok((out, pos))
    }

    fn read(r: &mut Reader<'_>) -> Result<HandshakeMessage, TlsError> {
        let d = |_| TlsError::Decode;
        let ty = MessageType::from_u8(r.u8().map_err(d)?).ok_or(TlsError::Decode)?;
        let len = r.u24().map_err(d)? as usize;
        let mut b = Reader::new(r.take(len).map_err(d)?);
        let msg = match ty {
            MessageType::ClientHello => {
                let nonce = b.array().map_err(d)?;
                let n = b.u8().map_err(d)? as usize;
                let modes = b
                    .take(n)
                    .map_err(d)?
                    .iter()
                    .map(|m| KeyExchangeMode::from_u8(*m).ok_or(TlsError::Decode))
                    .collect::<Result<_, _>>()?;
                HandshakeMessage::ClientHello { nonce, modes, extensions: read_extensions(&mut b)? }
            }
            MessageType::ServerHello => {
                let nonce = b.array().map_err(d)?;
                let mode = KeyExchangeMode::from_u8(b.u8().map_err(d)?).ok_or(TlsError::Decode)?;
                HandshakeMessage::ServerHello { nonce, mode, extensions: read_extensions(&mut b)? }
            }
            MessageType::ServerCert => {
                let domain = core::str::from_utf8(b.vec_u8().map_err(d)?).map_err(|_| TlsError::Decode)?;
                HandshakeMessage::ServerCert {
                    domain: String::from(domain),
                    public_key: b.vec_u16().map_err(d)?.to_vec(),
                    ca_signature: b.vec_u16().map_err(d)?.to_vec(),
                }
            }
            MessageType::ServerKeyShare => HandshakeMessage::ServerKeyShare {
                group: b.u16().map_err(d)?,
                public: b.vec_u8().map_err(d)?.to_vec(),
                signature: b.vec_u16().map_err(d)?.to_vec(),
            },
            MessageType::ClientKeyShare => HandshakeMessage::ClientKeyShare { payload: b.vec_u16().map_err(d)?.to_vec() },
            MessageType::Finished => HandshakeMessage::Finished { mac: Digest(b.array().map_err(d)?) },
            MessageType::LocationStatement => HandshakeMessage::LocationStatement { sealed: b.rest().to_vec() },
            MessageType::ApplicationData => HandshakeMessage::ApplicationData { sealed: b.rest().to_vec() },
            MessageType::Alert => HandshakeMessage::Alert {
                code: AlertCode::from_u8(b.u8().map_err(d)?).ok_or(TlsError::Decode)?,
            },
        };
        b.finish().map_err(d)?;
        Ok(msg)
    }
}

fn put_extensions(out: &mut Vec<u8>, exts: &[Extension]) {
    out.put_u16(exts.len() as u16);
    for e in exts {
        out.put_u16(e.kind);
        out.put_vec_u16(&e.data);
    }
}

fn read_extensions(r: &mut Reader<'_>) -> Result<Vec<Extension>, TlsError> {
    let n = r.u16().map_err(|_| TlsError::Decode)? as usize;
    let mut out: Vec<Extension> = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let kind = r.u16().map_err(|_| TlsError::Decode)?;
        let data = r.vec_u16().map_err(|_| TlsError::Decode)?.to_vec();
        if out.iter().any(|e| e.kind == kind) {
            return Err(TlsError::Decode);
        }
        out.push(Extension { kind, data });
    }
    Ok(out)
}

pub(crate) fn has_salve(exts: &[Extension]) -> bool {
    exts.iter().any(|e| e.kind == SALVE_EXTENSION)
}

/// What travels inside a LocationStatement message: the GMLC statement
/// bytes and, for batched issuance, the inclusion proof of this session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatementPayload {
    pub statement: Vec<u8>,
    pub proof: Option<MerkleProof>,
}

impl StatementPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.statement.len() + 64);
        out.put_vec_u16(&self.statement);
        match &self.proof {
            None => out.push(0),
            Some(p) => {
                out.push(1);
                out.extend_from_slice(&p.encode());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<StatementPayload, TlsError> {
        let mut r = Reader::new(bytes);
        let statement = r.vec_u16().map_err(|_| TlsError::Decode)?.to_vec();
        let proof = match r.u8().map_err(|_| TlsError::Decode)? {
            0 => None,
            1 => Some(MerkleProof::read(&mut r).map_err(|_| TlsError::Decode)?),
            _ => return Err(TlsError::Decode),
        };
        r.finish().map_err(|_| TlsError::Decode)?;
        Ok(StatementPayload { statement, proof })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, merkle_build, merkle_prove};
    use alloc::vec;

    fn samples() -> Vec<HandshakeMessage> {
        vec![
            HandshakeMessage::ClientHello {
                nonce: [1; 32],
                modes: vec![KeyExchangeMode::Dhe, KeyExchangeMode::StaticRsa],
                extensions: vec![Extension::salve(), Extension { kind: 7, data: vec![1, 2] }],
            },
            HandshakeMessage::ServerHello { nonce: [2; 32], mode: KeyExchangeMode::Dhe, extensions: vec![] },
            HandshakeMessage::ServerCert { domain: "example.com".into(), public_key: vec![3; 270], ca_signature: vec![4; 256] },
            HandshakeMessage::ServerKeyShare { group: 0x1d, public: vec![5; 32], signature: vec![6; 256] },
            HandshakeMessage::ClientKeyShare { payload: vec![7; 32] },
            HandshakeMessage::Finished { mac: hash(b"f") },
            HandshakeMessage::LocationStatement { sealed: vec![8; 400] },
            HandshakeMessage::ApplicationData { sealed: vec![] },
            HandshakeMessage::Alert { code: AlertCode::StaleStatement },
        ]
    }

    #[test]
    fn every_message_round_trips() {
        for m in samples() {
            let bytes = m.encode();
            assert_eq!(bytes[0], m.message_type() as u8);
            let len = u32::from_be_bytes([0, bytes[1], bytes[2], bytes[3]]) as usize;
            assert_eq!(len + 4, bytes.len());
            assert_eq!(HandshakeMessage::decode(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn stream_splitting() {
        let msgs = samples();
        let mut buf: Vec<u8> = msgs.iter().flat_map(|m| m.encode()).collect();
        buf.extend_from_slice(&[1, 0, 0]);
        let (got, used) = HandshakeMessage::decode_stream(&buf).unwrap();
        assert_eq!(got, msgs);
        assert_eq!(used, buf.len() - 3);
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        for m in samples() {
            let bytes = m.encode();
            assert!(HandshakeMessage::decode(&bytes[..bytes.len() - 1]).is_err() || bytes.len() == 4);
            let mut extra = bytes.clone();
            extra.push(0);
            assert!(HandshakeMessage::decode(&extra).is_err());
        }
        assert!(HandshakeMessage::decode(&[99, 0, 0, 0]).is_err());
    }

    #[test]
    fn duplicate_extension_rejected() {
        let m = HandshakeMessage::ServerHello {
            nonce: [0; 32],
            mode: KeyExchangeMode::Dhe,
            extensions: vec![Extension::salve(), Extension::salve()],
        };
        assert!(HandshakeMessage::decode(&m.encode()).is_err());
    }

    #[test]
    fn payload_round_trip() {
        let leaves: Vec<_> = (0..5u8).map(|i| hash(&[i])).collect();
        let tree = merkle_build(&leaves).unwrap();
        for proof in [None, Some(merkle_prove(&tree, 3).unwrap())] {
            let p = StatementPayload { statement: vec![9; 331], proof };
            assert_eq!(StatementPayload::decode(&p.encode()).unwrap(), p);
        }
        assert!(StatementPayload::decode(&[0, 1, 9, 2]).is_err());
    }
}
