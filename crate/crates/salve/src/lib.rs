//! Everything around the protocol core that needs `std`: file formats, the
//! MLP-style XML used to talk to the GMLC, TCP services, a discrete-event
//! network simulator, the attack scenarios and the benchmark harness.
//!
//! The protocol logic itself lives in [`salve_core`].

pub mod attack;
pub mod bench;
pub mod files;
pub mod fuzz;
pub mod kv;
pub mod mlp;
pub mod net;
pub mod sim;
pub mod world;

pub use salve_core as core;

use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{}: {message}", path.display())]
    File { path: PathBuf, message: String },
    #[error("DNS: {0}")]
    Dns(#[from] salve_core::dns::DnsError),
    #[error("GMLC: {0}")]
    Gmlc(#[from] salve_core::gmlc::GmlcError),
    #[error("crypto: {0}")]
    Crypto(#[from] salve_core::crypto::CryptoError),
    #[error("location: {0}")]
    Geo(#[from] salve_core::geo::GeoError),
    #[error("server configuration: {0}")]
    Config(#[from] salve_core::server::ConfigError),
    #[error("handshake: {0}")]
    Tls(#[from] salve_core::tls::TlsError),
    #[error("MLP: {0}")]
    Mlp(String),
    #[error("network: {0}")]
    Net(#[from] io::Error),
}

impl Error {
    pub(crate) fn io(path: &Path, source: io::Error) -> Error {
        Error::Io { path: path.to_owned(), source }
    }

    /// Attaches a file name to a parse error.
    pub(crate) fn context(self, path: &Path) -> Error {
        match self {
            Error::Parse(message) => Error::File { path: path.to_owned(), message },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
