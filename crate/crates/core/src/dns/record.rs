use alloc::vec::Vec;
use core::fmt;

use super::{DnsError, Name};
use crate::bytes::{PutExt, Reader};
use crate::crypto::{hash, Digest, PublicKey, RSA_SHA256};
use crate::geo::{decode_loc, encode_loc, GeoLocation, LOC_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RrType {
    A,
    Ns,
    Loc,
    Ds,
    Rrsig,
    Dnskey,
    /// Private-use type whose single rdata byte says whether clients must
    /// insist on a location statement.
    SlvReq,
}

impl RrType {
    pub const SLVREQ_CODE: u16 = 0xff5a;

    pub fn code(self) -> u16 {
        match self {
            RrType::A => 1,
            RrType::Ns => 2,
            RrType::Loc => 29,
            RrType::Ds => 43,
            RrType::Rrsig => 46,
            RrType::Dnskey => 48,
            RrType::SlvReq => Self::SLVREQ_CODE,
        }
    }

    pub fn from_code(code: u16) -> Option<RrType> {
        Some(match code {
            1 => RrType::A,
            2 => RrType::Ns,
            29 => RrType::Loc,
            43 => RrType::Ds,
            46 => RrType::Rrsig,
            48 => RrType::Dnskey,
            Self::SLVREQ_CODE => RrType::SlvReq,
            _ => return None,
        })
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            RrType::A => "A",
            RrType::Ns => "NS",
            RrType::Loc => "LOC",
            RrType::Ds => "DS",
            RrType::Rrsig => "RRSIG",
            RrType::Dnskey => "DNSKEY",
            RrType::SlvReq => "SLVREQ",
        }
    }
}

impl fmt::Display for RrType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl core::str::FromStr for RrType {
    type Err = DnsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            RrType::A,
            RrType::Ns,
            RrType::Loc,
            RrType::Ds,
            RrType::Rrsig,
            RrType::Dnskey,
            RrType::SlvReq,
        ]
        .into_iter()
        .find(|t| t.mnemonic().eq_ignore_ascii_case(s))
        .ok_or(DnsError::Malformed("unknown record type"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceRecord {
    pub name: Name,
    pub rrtype: RrType,
    pub ttl: u32,
    pub rdata: Vec<u8>,
}

impl ResourceRecord {
    /// Builds a record after checking the rdata against its type.
    pub fn new(name: Name, rrtype: RrType, ttl: u32, rdata: Vec<u8>) -> Result<Self, DnsError> {
        check_rdata(rrtype, &rdata)?;
        Ok(ResourceRecord { name, rrtype, ttl, rdata })
    }

    pub fn a(name: Name, ttl: u32, ip: [u8; 4]) -> Self {
        ResourceRecord { name, rrtype: RrType::A, ttl, rdata: ip.to_vec() }
    }

    pub fn loc(name: Name, ttl: u32, g: &GeoLocation) -> Result<Self, DnsError> {
        let w = encode_loc(g).map_err(|_| DnsError::Malformed("LOC out of range"))?;
        Ok(ResourceRecord { name, rrtype: RrType::Loc, ttl, rdata: w.to_vec() })
    }

    pub fn slvreq(name: Name, ttl: u32, required: bool) -> Self {
        ResourceRecord { name, rrtype: RrType::SlvReq, ttl, rdata: alloc::vec![required as u8] }
    }

    pub fn ns(name: Name, ttl: u32, host: &Name) -> Self {
        ResourceRecord { name, rrtype: RrType::Ns, ttl, rdata: host.to_wire() }
    }

    /// `name ‖ type ‖ ttl ‖ rdlength ‖ rdata`, the form covered by RRSIGs and
    /// stored in record files.
    pub fn to_canonical(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.name.wire_len() + 8 + self.rdata.len());
        self.write_canonical(&mut out);
        out
    }

    pub(crate) fn write_canonical(&self, out: &mut Vec<u8>) {
        self.name.write_wire(out);
        out.put_u16(self.rrtype.code());
        out.put_u32(self.ttl);
        out.put_vec_u16(&self.rdata);
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Self, DnsError> {
        let mut r = Reader::new(bytes);
        let rr = Self::read_canonical(&mut r)?;
        r.finish().map_err(|_| DnsError::Malformed("trailing bytes"))?;
        Ok(rr)
    }

    pub(crate) fn read_canonical(r: &mut Reader<'_>) -> Result<Self, DnsError> {
        let trunc = |_| DnsError::Malformed("truncated record");
        let name = Name::read_wire(r)?;
        let code = r.u16().map_err(trunc)?;
        let rrtype = RrType::from_code(code).ok_or(DnsError::Malformed("unknown record type"))?;
        let ttl = r.u32().map_err(trunc)?;
        let rdata = r.vec_u16().map_err(trunc)?.to_vec();
        Self::new(name, rrtype, ttl, rdata)
    }

    /// Size on a DNS wire without name compression: owner name plus the
    /// 10-byte type/class/ttl/rdlength header plus rdata.
    pub fn wire_size(&self) -> usize {
        self.name.wire_len() + 10 + self.rdata.len()
    }

    pub fn location(&self) -> Option<GeoLocation> {
        match self.rrtype {
            RrType::Loc => decode_loc(&self.rdata).ok(),
            _ => None,
        }
    }
}

fn check_rdata(rrtype: RrType, rdata: &[u8]) -> Result<(), DnsError> {
    let ok = match rrtype {
        RrType::A => rdata.len() == 4,
        RrType::Loc => rdata.len() == LOC_LEN && decode_loc(rdata).is_ok(),
        RrType::SlvReq => rdata.len() == 1 && rdata[0] <= 1,
        RrType::Ns => {
            let mut r = Reader::new(rdata);
            Name::read_wire(&mut r).is_ok() && r.remaining() == 0
        }
        RrType::Ds => Ds::from_rdata(rdata).is_ok(),
        RrType::Dnskey => Dnskey::from_rdata(rdata).is_ok(),
        RrType::Rrsig => Rrsig::from_rdata(rdata).is_ok(),
    };
    if ok {
        Ok(())
    } else {
        Err(DnsError::Malformed("rdata does not match type"))
    }
}

/// Zone-signing key as published at the apex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dnskey {
    pub flags: u16,
    pub algorithm: u8,
    pub public: PublicKey,
}

impl Dnskey {
    pub const ZONE_SEP: u16 = 257;
    const PROTOCOL: u8 = 3;

    pub fn new(public: PublicKey) -> Dnskey {
        Dnskey { flags: Self::ZONE_SEP, algorithm: RSA_SHA256, public }
    }

    pub fn to_rdata(&self) -> Vec<u8> {
        let der = self.public.to_der();
        let mut out = Vec::with_capacity(4 + der.len());
        out.put_u16(self.flags);
        out.push(Self::PROTOCOL);
        out.push(self.algorithm);
        out.extend_from_slice(der);
        out
    }

    pub fn from_rdata(rdata: &[u8]) -> Result<Dnskey, DnsError> {
        let mut r = Reader::new(rdata);
        let bad = |_| DnsError::Malformed("DNSKEY");
        let flags = r.u16().map_err(bad)?;
        if r.u8().map_err(bad)? != Self::PROTOCOL {
            return Err(DnsError::Malformed("DNSKEY protocol"));
        }
        let algorithm = r.u8().map_err(bad)?;
        let public = PublicKey::from_der(r.rest()).map_err(|_| DnsError::Malformed("DNSKEY key"))?;
        Ok(Dnskey { flags, algorithm, public })
    }

    /// Digest stored in the parent's DS record and in trust anchors.
    pub fn digest(&self) -> Digest {
        hash(&self.to_rdata())
    }

    pub fn key_tag(&self) -> u16 {
        key_tag(&self.to_rdata())
    }
}

/// RFC 4034 Appendix B checksum.
pub fn key_tag(rdata: &[u8]) -> u16 {
    let mut ac: u32 = 0;
    for (i, b) in rdata.iter().enumerate() {
        ac += if i & 1 == 1 { *b as u32 } else { (*b as u32) << 8 };
    }
    ac += (ac >> 16) & 0xffff;
    (ac & 0xffff) as u16
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ds {
    pub key_tag: u16,
    pub algorithm: u8,
    pub digest: Digest,
}

impl Ds {
    const DIGEST_SHA256: u8 = 2;

    pub fn for_key(key: &Dnskey) -> Ds {
        Ds { key_tag: key.key_tag(), algorithm: key.algorithm, digest: key.digest() }
    }

    pub fn to_rdata(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(36);
        out.put_u16(self.key_tag);
        out.push(self.algorithm);
        out.push(Self::DIGEST_SHA256);
        out.extend_from_slice(self.digest.as_bytes());
        out
    }

    pub fn from_rdata(rdata: &[u8]) -> Result<Ds, DnsError> {
        let mut r = Reader::new(rdata);
        let bad = |_| DnsError::Malformed("DS");
        let key_tag = r.u16().map_err(bad)?;
        let algorithm = r.u8().map_err(bad)?;
        if r.u8().map_err(bad)? != Self::DIGEST_SHA256 {
            return Err(DnsError::Malformed("DS digest type"));
        }
        let digest = Digest(r.array().map_err(bad)?);
        r.finish().map_err(bad)?;
        Ok(Ds { key_tag, algorithm, digest })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rrsig {
    pub type_covered: RrType,
    pub algorithm: u8,
    pub labels: u8,
    pub original_ttl: u32,
    pub expiration: u32,
    pub inception: u32,
    pub key_tag: u16,
    pub signer: Name,
    pub signature: Vec<u8>,
}

impl Rrsig {
    fn write_header(&self, out: &mut Vec<u8>) {
        out.put_u16(self.type_covered.code());
        out.push(self.algorithm);
        out.push(self.labels);
        out.put_u32(self.original_ttl);
        out.put_u32(self.expiration);
        out.put_u32(self.inception);
        out.put_u16(self.key_tag);
        self.signer.write_wire(out);
    }

    pub fn to_rdata(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.signer.wire_len() + self.signature.len());
        self.write_header(&mut out);
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_rdata(rdata: &[u8]) -> Result<Rrsig, DnsError> {
        let mut r = Reader::new(rdata);
        let bad = |_| DnsError::Malformed("RRSIG");
        let type_covered =
            RrType::from_code(r.u16().map_err(bad)?).ok_or(DnsError::Malformed("RRSIG type"))?;
        let sig = Rrsig {
            type_covered,
            algorithm: r.u8().map_err(bad)?,
            labels: r.u8().map_err(bad)?,
            original_ttl: r.u32().map_err(bad)?,
            expiration: r.u32().map_err(bad)?,
            inception: r.u32().map_err(bad)?,
            key_tag: r.u16().map_err(bad)?,
            signer: Name::read_wire(&mut r)?,
            signature: r.rest().to_vec(),
        };
        if sig.signature.is_empty() {
            return Err(DnsError::Malformed("RRSIG without signature"));
        }
        Ok(sig)
    }

    /// Bytes the signature covers: the RRSIG rdata up to the signer name,
    /// then every record of the set in canonical form, sorted bytewise.
    pub fn signed_data(&self, set: &[&ResourceRecord]) -> Vec<u8> {
        let mut canon: Vec<Vec<u8>> = set.iter().map(|r| r.to_canonical()).collect();
        canon.sort();
        let mut out = Vec::new();
        self.write_header(&mut out);
        for c in canon {
            out.extend_from_slice(&c);
        }
        out
    }
}
