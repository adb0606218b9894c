use alloc::vec::Vec;
use core::fmt;

use rand_core::CryptoRngCore;
use rsa::pkcs1::{DecodeRsaPublicKey, EncodeRsaPublicKey};
use rsa::pkcs1v15::{Signature as RsaSignature, SigningKey, VerifyingKey};
use rsa::pkcs8::{DecodePrivateKey, EncodePrivateKey};
use rsa::signature::{SignatureEncoding, Signer, Verifier};
use rsa::traits::PublicKeyParts;
use rsa::{Pkcs1v15Encrypt, RsaPrivateKey, RsaPublicKey};
use sha2::Sha256;

use super::CryptoError;

/// Algorithm identifier for RSA PKCS#1 v1.5 with SHA-256 (the DNSSEC
/// RSASHA256 number).
pub const RSA_SHA256: u8 = 8;
pub const RSA_KEY_BITS: usize = 2048;

/// An RSA public key together with its PKCS#1 DER encoding.
#[derive(Clone)]
pub struct PublicKey {
    key: VerifyingKey<Sha256>,
    der: Vec<u8>,
}

impl PublicKey {
    pub fn from_der(der: &[u8]) -> Result<PublicKey, CryptoError> {
        let key = RsaPublicKey::from_pkcs1_der(der).map_err(|_| CryptoError::Key)?;
        Ok(PublicKey::from_rsa(key))
    }

    fn from_rsa(key: RsaPublicKey) -> PublicKey {
        let der = key
            .to_pkcs1_der()
            .expect("encoding a valid RSA public key")
            .as_bytes()
            .to_vec();
        PublicKey {
            key: VerifyingKey::new(key),
            der,
        }
    }

    pub fn to_der(&self) -> &[u8] {
        &self.der
    }

    /// Signature length in bytes.
    pub fn modulus_len(&self) -> usize {
        self.rsa().size()
    }

    /// PKCS#1 v1.5 encryption, used only by the static-RSA key exchange.
    pub fn encrypt(&self, rng: &mut impl CryptoRngCore, msg: &[u8]) -> Result<Vec<u8>, CryptoError> {
        self.rsa().encrypt(rng, Pkcs1v15Encrypt, msg).map_err(|_| CryptoError::Key)
    }

    pub fn verify(&self, msg: &[u8], sig: &[u8]) -> bool {
        let Ok(sig) = RsaSignature::try_from(sig) else {
            return false;
        };
        self.key.verify(msg, &sig).is_ok()
    }

    pub(crate) fn rsa(&self) -> &RsaPublicKey {
        self.key.as_ref()
    }
}

impl PartialEq for PublicKey {
    fn eq(&self, other: &Self) -> bool {
        self.der == other.der
    }
}

impl Eq for PublicKey {}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", super::hash(&self.der))
    }
}

/// Raw big-endian RSA signature bytes.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Signature(pub Vec<u8>);

impl AsRef<[u8]> for Signature {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

/// An RSA-2048/SHA-256 key pair. The private half is absent on verifiers.
#[derive(Clone)]
pub struct SigningIdentity {
    public: PublicKey,
    private: Option<SigningKey<Sha256>>,
}

impl SigningIdentity {
    pub fn generate(rng: &mut impl CryptoRngCore) -> Result<SigningIdentity, CryptoError> {
        let private = RsaPrivateKey::new(rng, RSA_KEY_BITS).map_err(|_| CryptoError::Key)?;
        Ok(SigningIdentity::from_private(private))
    }

    fn from_private(private: RsaPrivateKey) -> SigningIdentity {
        SigningIdentity {
            public: PublicKey::from_rsa(private.to_public_key()),
            private: Some(SigningKey::new(private)),
        }
    }

    /// Load a PKCS#8 DER private key.
    pub fn from_pkcs8_der(der: &[u8]) -> Result<SigningIdentity, CryptoError> {
        let private = RsaPrivateKey::from_pkcs8_der(der).map_err(|_| CryptoError::Key)?;
        Ok(SigningIdentity::from_private(private))
    }

    pub fn to_pkcs8_der(&self) -> Result<Vec<u8>, CryptoError> {
        let key = self.private.as_ref().ok_or(CryptoError::MissingPrivateKey)?;
        let rsa: &RsaPrivateKey = key.as_ref();
        Ok(rsa
            .to_pkcs8_der()
            .map_err(|_| CryptoError::Key)?
            .as_bytes()
            .to_vec())
    }

    pub fn verifier(public: PublicKey) -> SigningIdentity {
        SigningIdentity {
            public,
            private: None,
        }
    }

    pub fn algorithm(&self) -> u8 {
        RSA_SHA256
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn has_private(&self) -> bool {
        self.private.is_some()
    }

    pub fn sign(&self, msg: &[u8]) -> Result<Signature, CryptoError> {
        let key = self.private.as_ref().ok_or(CryptoError::MissingPrivateKey)?;
        Ok(Signature(key.sign(msg).to_vec()))
    }

    /// PKCS#1 v1.5 decryption with the private key.
    pub fn decrypt(&self, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let key = self.private.as_ref().ok_or(CryptoError::MissingPrivateKey)?;
        let rsa: &RsaPrivateKey = key.as_ref();
        rsa.decrypt(Pkcs1v15Encrypt, ciphertext).map_err(|_| CryptoError::Decode)
    }
}

impl fmt::Debug for SigningIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningIdentity")
            .field("public", &self.public)
            .field("private", &self.private.is_some())
            .finish()
    }
}

pub fn verify(public: &PublicKey, msg: &[u8], sig: &[u8]) -> bool {
    public.verify(msg, sig)
}
