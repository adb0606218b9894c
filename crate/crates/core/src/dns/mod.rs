//! In-process DNS hierarchy with DNSSEC-style signing and a validating
//! resolver. Records carry server addresses, LOC data and the SLVREQ flag
//! that tells clients a location statement is mandatory.

use core::fmt;

mod name;
mod record;
mod resolve;
mod zone;

pub use name::Name;
pub use record::{key_tag, Dnskey, Ds, ResourceRecord, RrType, Rrsig};
pub use resolve::{ladns_lookup, resolve, DnsTransport, Resolver, TrustAnchor, ValidatedRecordSet};
pub use zone::{sign_zone, Validity, Zone, ZoneAnswer, ZoneSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnsError {
    /// The zone has no usable signing key.
    Key,
    /// A DNSKEY does not chain to the trust anchor.
    Trust(&'static str),
    /// A signature is missing, invalid or covers the wrong data.
    Validation(&'static str),
    /// A record set has no covering RRSIG.
    Unsigned(RrType),
    NxDomain,
    /// The name exists but has no A record.
    NoAddress,
    Malformed(&'static str),
}

impl DnsError {
    pub fn is_validation(&self) -> bool {
        matches!(self, DnsError::Validation(_) | DnsError::Unsigned(_))
    }
}

impl fmt::Display for DnsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DnsError::Key => f.write_str("zone signing key unavailable"),
            DnsError::Trust(why) => write!(f, "trust error: {why}"),
            DnsError::Validation(why) => write!(f, "validation error: {why}"),
            DnsError::Unsigned(t) => write!(f, "validation error: {t} set has no RRSIG"),
            DnsError::NxDomain => f.write_str("no such domain"),
            DnsError::NoAddress => f.write_str("no address record"),
            DnsError::Malformed(why) => write!(f, "malformed data: {why}"),
        }
    }
}

impl core::error::Error for DnsError {}
