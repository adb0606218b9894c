//! Protocol core for location-verified server authentication.
//!
//! A web server proves, as a second factor next to its certificate, that it
//! is running at one of the locations its domain owner published in DNSSEC.
//! The mobile operator's location gateway (GMLC) localizes a SIM attached to
//! the server and signs a statement binding that location to the hash of the
//! handshake's master secret; the client checks the statement against the
//! DNS-published locations before accepting the connection.
//!
//! The crate is `no_std` and performs no I/O. Every party is a sans-IO state
//! machine: callers feed in frames and timestamps and get frames back.
//!
//! - [`crypto`]: hashing, RSA signatures, X25519, master-secret derivation,
//!   Merkle trees.
//! - [`geo`]: locations, the 16-byte LOC record codec, distances.
//! - [`dns`]: signed zones and the validating resolver (location-aware
//!   lookup).
//! - [`gmlc`]: SIM registry and location statement issuance.
//! - [`tls`]: the handshake state machines.
//! - [`server`] / [`client`]: the two endpoints built on top.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod client;
pub mod crypto;
pub mod dns;
pub mod geo;
pub mod gmlc;
pub mod server;
pub mod tls;

mod bytes;

#[cfg(test)]
pub(crate) mod testutil;
