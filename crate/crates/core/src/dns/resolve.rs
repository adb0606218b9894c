use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::zone::record_sets;
use super::{DnsError, Dnskey, Ds, Name, ResourceRecord, RrType, Rrsig, Zone, ZoneAnswer};
use crate::crypto::{verify, Digest};
use crate::geo::{decode_loc, GeoLocation};

/// How the resolver reaches authoritative servers. `server` names the zone
/// apex being asked.
pub trait DnsTransport {
    fn query(&self, server: &Name, qname: &Name) -> Result<ZoneAnswer, DnsError>;
}

impl<T: DnsTransport + ?Sized> DnsTransport for &T {
    fn query(&self, server: &Name, qname: &Name) -> Result<ZoneAnswer, DnsError> {
        (**self).query(server, qname)
    }
}

/// Digest of the root zone's DNSKEY rdata, configured out of band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrustAnchor(pub Digest);

impl TrustAnchor {
    pub fn for_key(key: &Dnskey) -> TrustAnchor {
        TrustAnchor(key.digest())
    }

    pub fn for_zone(zone: &Zone) -> TrustAnchor {
        Self::for_key(&zone.dnskey())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedRecordSet {
    pub domain: Name,
    pub ip: [u8; 4],
    pub locations: Vec<GeoLocation>,
    pub salve_required: bool,
    /// One entry per zone traversed, root first: apex and DNSKEY digest.
    pub chain: Vec<(Name, Digest)>,
    /// Smallest TTL among the returned sets.
    pub ttl: u32,
    /// Wire bytes of the LOC records and their RRSIGs.
    pub location_payload_bytes: usize,
}

const MAX_DEPTH: usize = 32;

/// Walks from the root to `domain`, checking every DNSKEY against the
/// anchor or the parent's DS and every record set against its RRSIG.
/// `now` is compared with signature validity windows.
pub fn resolve(
    transport: &impl DnsTransport,
    domain: &Name,
    anchor: &TrustAnchor,
    now: u32,
) -> Result<ValidatedRecordSet, DnsError> {
    let mut zone = Name::root();
    let mut key = fetch_key(transport, &zone, &[anchor.0], now)?;
    let mut chain = alloc::vec![(zone.clone(), key.digest())];
    loop {
        match transport.query(&zone, domain)? {
            ZoneAnswer::NxDomain => return Err(DnsError::NxDomain),
            ZoneAnswer::Referral { child, records } => {
                if child == zone || !child.is_within(&zone) || !domain.is_within(&child) {
                    return Err(DnsError::Validation("referral outside the queried zone"));
                }
                let sets = validate_sets(&records, &child, &key, &zone, now)?;
                let ds: Vec<Digest> = sets
                    .get(&RrType::Ds)
                    .ok_or(DnsError::Validation("delegation without DS"))?
                    .iter()
                    .map(|r| Ds::from_rdata(&r.rdata).map(|d| d.digest))
                    .collect::<Result<_, _>>()?;
                key = fetch_key(transport, &child, &ds, now)?;
                chain.push((child.clone(), key.digest()));
                zone = child;
                if chain.len() > MAX_DEPTH {
                    return Err(DnsError::Validation("delegation chain too deep"));
                }
            }
            ZoneAnswer::Authoritative(records) => {
                let sets = validate_sets(&records, domain, &key, &zone, now)?;
                return extract(domain, &records, &sets, chain);
            }
        }
    }
}

/// [`resolve`] plus the number of extra bytes the location data adds to
/// the answer.
pub fn ladns_lookup(
    transport: &impl DnsTransport,
    domain: &Name,
    anchor: &TrustAnchor,
    now: u32,
) -> Result<(ValidatedRecordSet, usize), DnsError> {
    let v = resolve(transport, domain, anchor, now)?;
    let extra = v.location_payload_bytes;
    Ok((v, extra))
}

/// Fetches the apex DNSKEY set of `zone`, picks the key whose digest is in
/// `trusted` and checks that it signed its own set.
fn fetch_key(transport: &impl DnsTransport, zone: &Name, trusted: &[Digest], now: u32) -> Result<Dnskey, DnsError> {
    let records = match transport.query(zone, zone)? {
        ZoneAnswer::Authoritative(r) => r,
        _ => return Err(DnsError::Trust("zone apex has no DNSKEY")),
    };
    let key = records
        .iter()
        .filter(|r| r.rrtype == RrType::Dnskey)
        .filter_map(|r| Dnskey::from_rdata(&r.rdata).ok())
        .find(|k| trusted.contains(&k.digest()))
        .ok_or(DnsError::Trust("no DNSKEY matches the trusted digest"))?;
    validate_sets(&records, zone, &key, zone, now)?;
    Ok(key)
}

/// Checks that all records are owned by `owner`, every RRSIG verifies and
/// every set has at least one. Returns the sets keyed by type.
fn validate_sets<'a>(
    records: &'a [ResourceRecord],
    owner: &Name,
    key: &Dnskey,
    signer: &Name,
    now: u32,
) -> Result<BTreeMap<RrType, Vec<&'a ResourceRecord>>, DnsError> {
    if records.iter().any(|r| &r.name != owner) {
        return Err(DnsError::Validation("record owned by another name"));
    }
    let sets: BTreeMap<RrType, Vec<&ResourceRecord>> =
        record_sets(records).into_iter().map(|((_, t), s)| (t, s)).collect();
    let key_tag = key.key_tag();
    let mut covered = Vec::new();
    for r in records.iter().filter(|r| r.rrtype == RrType::Rrsig) {
        let sig = Rrsig::from_rdata(&r.rdata)?;
        let set = sets
            .get(&sig.type_covered)
            .ok_or(DnsError::Validation("RRSIG covers an absent record set"))?;
        let ok = &sig.signer == signer
            && sig.algorithm == key.algorithm
            && sig.key_tag == key_tag
            && sig.labels == owner.label_count()
            && sig.inception <= now
            && now <= sig.expiration
            && r.ttl == sig.original_ttl
            && set.iter().all(|rr| rr.ttl == sig.original_ttl)
            && verify(&key.public, &sig.signed_data(set), &sig.signature);
        if !ok {
            return Err(DnsError::Validation("invalid RRSIG"));
        }
        covered.push(sig.type_covered);
    }
    if let Some(t) = sets.keys().find(|t| !covered.contains(t)) {
        return Err(DnsError::Unsigned(*t));
    }
    Ok(sets)
}

fn extract(
    domain: &Name,
    records: &[ResourceRecord],
    sets: &BTreeMap<RrType, Vec<&ResourceRecord>>,
    chain: Vec<(Name, Digest)>,
) -> Result<ValidatedRecordSet, DnsError> {
    let a = sets.get(&RrType::A).ok_or(DnsError::NoAddress)?;
    let mut ips: Vec<[u8; 4]> = a.iter().map(|r| [r.rdata[0], r.rdata[1], r.rdata[2], r.rdata[3]]).collect();
    ips.sort();
    let locations = sets
        .get(&RrType::Loc)
        .map(|s| s.iter().map(|r| decode_loc(&r.rdata)).collect::<Result<Vec<_>, _>>())
        .transpose()
        .map_err(|_| DnsError::Malformed("LOC rdata"))?
        .unwrap_or_default();
    let salve_required = match sets.get(&RrType::SlvReq).map(|s| s.as_slice()) {
        None => false,
        Some([one]) => one.rdata[0] == 1,
        Some(_) => return Err(DnsError::Validation("conflicting SLVREQ records")),
    };
    if salve_required && locations.is_empty() {
        return Err(DnsError::Validation("location statement required but no LOC records"));
    }
    let location_payload_bytes = records
        .iter()
        .filter(|r| match r.rrtype {
            RrType::Loc => true,
            RrType::Rrsig => Rrsig::from_rdata(&r.rdata).map(|s| s.type_covered == RrType::Loc).unwrap_or(false),
            _ => false,
        })
        .map(|r| r.wire_size())
        .sum();
    let ttl = sets.values().flatten().map(|r| r.ttl).min().unwrap_or(0);
    Ok(ValidatedRecordSet {
        domain: domain.clone(),
        ip: ips[0],
        locations,
        salve_required,
        chain,
        ttl,
        location_payload_bytes,
    })
}

/// Validating resolver with a TTL cache. Lookups take `&self` on a hit so a
/// reader/writer lock around it lets concurrent clients share entries.
#[derive(Debug, Clone)]
pub struct Resolver {
    anchor: TrustAnchor,
    cache: BTreeMap<Name, (ValidatedRecordSet, u64)>,
}

impl Resolver {
    pub fn new(anchor: TrustAnchor) -> Resolver {
        Resolver { anchor, cache: BTreeMap::new() }
    }

    pub fn anchor(&self) -> &TrustAnchor {
        &self.anchor
    }

    pub fn cached(&self, domain: &Name, now: u32) -> Option<ValidatedRecordSet> {
        self.cache
            .get(domain)
            .filter(|(_, expires)| (now as u64) < *expires)
            .map(|(v, _)| v.clone())
    }

    pub fn insert(&mut self, v: ValidatedRecordSet, now: u32) {
        let expires = now as u64 + v.ttl as u64;
        self.cache.insert(v.domain.clone(), (v, expires));
    }

    pub fn purge_expired(&mut self, now: u32) {
        self.cache.retain(|_, (_, e)| (now as u64) < *e);
    }

    pub fn lookup(&mut self, transport: &impl DnsTransport, domain: &Name, now: u32) -> Result<ValidatedRecordSet, DnsError> {
        if let Some(v) = self.cached(domain, now) {
            return Ok(v);
        }
        let v = resolve(transport, domain, &self.anchor, now)?;
        self.insert(v.clone(), now);
        Ok(v)
    }
}
