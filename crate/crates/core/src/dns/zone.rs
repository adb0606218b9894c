use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{DnsError, Dnskey, Ds, Name, ResourceRecord, RrType, Rrsig};
use crate::bytes::{PutExt, Reader};
use crate::crypto::{PublicKey, SigningIdentity};

/// Signature validity window, in seconds on the resolver's clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Validity {
    pub inception: u32,
    pub expiration: u32,
}

impl Default for Validity {
    fn default() -> Self {
        Validity { inception: 0, expiration: u32::MAX }
    }
}

#[derive(Debug, Clone)]
pub struct Zone {
    apex: Name,
    records: Vec<ResourceRecord>,
    key: SigningIdentity,
}

/// What an authoritative server says about a query name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ZoneAnswer {
    /// Every record owned by the name, RRSIGs included.
    Authoritative(Vec<ResourceRecord>),
    /// The name lies below a delegation; carries the NS and DS sets of the
    /// child apex with their RRSIGs.
    Referral { child: Name, records: Vec<ResourceRecord> },
    NxDomain,
}

impl Zone {
    pub fn new(apex: Name, key: SigningIdentity) -> Zone {
        Zone { apex, records: Vec::new(), key }
    }

    /// Rebuilds a served zone from its records. The zone key is the apex
    /// DNSKEY, without a private part.
    pub fn from_records(apex: Name, records: Vec<ResourceRecord>) -> Result<Zone, DnsError> {
        let dnskey = records
            .iter()
            .find(|r| r.rrtype == RrType::Dnskey && r.name == apex)
            .ok_or(DnsError::Key)?;
        let key = Dnskey::from_rdata(&dnskey.rdata)?;
        let mut zone = Zone::new(apex, SigningIdentity::verifier(key.public));
        for r in records {
            zone.push(r)?;
        }
        Ok(zone)
    }

    pub fn apex(&self) -> &Name {
        &self.apex
    }

    pub fn key(&self) -> &SigningIdentity {
        &self.key
    }

    pub fn public_key(&self) -> &PublicKey {
        self.key.public()
    }

    pub fn dnskey(&self) -> Dnskey {
        Dnskey::new(self.key.public().clone())
    }

    pub fn records(&self) -> &[ResourceRecord] {
        &self.records
    }

    /// Direct access for tests and adversaries that tamper with served data.
    pub fn records_mut(&mut self) -> &mut Vec<ResourceRecord> {
        &mut self.records
    }

    pub fn push(&mut self, rr: ResourceRecord) -> Result<(), DnsError> {
        if !rr.name.is_within(&self.apex) {
            return Err(DnsError::Malformed("record outside zone"));
        }
        self.records.push(rr);
        Ok(())
    }

    /// Replaces any NS/DS data for the child apex with a fresh delegation to
    /// `child`'s current key.
    pub fn delegate(&mut self, child: &Zone, ttl: u32) -> Result<(), DnsError> {
        let at = child.apex().clone();
        if at == self.apex || !at.is_within(&self.apex) {
            return Err(DnsError::Malformed("child is not below this zone"));
        }
        self.records.retain(|r| {
            !(r.name == at && matches!(r.rrtype, RrType::Ns | RrType::Ds | RrType::Rrsig))
        });
        let host = Name::parse(&alloc::format!("ns1.{}", at.as_str()))?;
        self.records.push(ResourceRecord::ns(at.clone(), ttl, &host));
        let ds = Ds::for_key(&child.dnskey());
        self.records.push(ResourceRecord {
            name: at,
            rrtype: RrType::Ds,
            ttl,
            rdata: ds.to_rdata(),
        });
        Ok(())
    }

    pub fn is_signed(&self) -> bool {
        self.records.iter().any(|r| r.rrtype == RrType::Rrsig)
    }

    pub fn answer(&self, qname: &Name) -> ZoneAnswer {
        if !qname.is_within(&self.apex) {
            return ZoneAnswer::NxDomain;
        }
        // Deepest delegation point at or above qname, below the apex.
        let cut = self
            .records
            .iter()
            .filter(|r| r.rrtype == RrType::Ns && r.name != self.apex && qname.is_within(&r.name))
            .map(|r| &r.name)
            .max_by_key(|n| n.label_count());
        if let Some(child) = cut {
            let records = self
                .records
                .iter()
                .filter(|r| &r.name == child)
                .filter(|r| match r.rrtype {
                    RrType::Ns | RrType::Ds => true,
                    RrType::Rrsig => matches!(
                        Rrsig::from_rdata(&r.rdata).map(|s| s.type_covered),
                        Ok(RrType::Ns | RrType::Ds)
                    ),
                    _ => false,
                })
                .cloned()
                .collect();
            return ZoneAnswer::Referral { child: child.clone(), records };
        }
        let records: Vec<_> = self.records.iter().filter(|r| &r.name == qname).cloned().collect();
        if records.is_empty() {
            ZoneAnswer::NxDomain
        } else {
            ZoneAnswer::Authoritative(records)
        }
    }

    /// Length-prefixed canonical records, the on-disk form of a signed zone.
    pub fn to_record_file(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.records {
            out.put_vec_u16(&r.to_canonical());
        }
        out
    }

    pub fn from_record_file(apex: Name, bytes: &[u8]) -> Result<Zone, DnsError> {
        let mut r = Reader::new(bytes);
        let mut records = Vec::new();
        while r.remaining() > 0 {
            let rec = r.vec_u16().map_err(|_| DnsError::Malformed("truncated record file"))?;
            records.push(ResourceRecord::from_canonical(rec)?);
        }
        Zone::from_records(apex, records)
    }
}

/// Groups records by owner and type, skipping RRSIGs.
pub(crate) fn record_sets(records: &[ResourceRecord]) -> BTreeMap<(Name, RrType), Vec<&ResourceRecord>> {
    let mut sets: BTreeMap<(Name, RrType), Vec<&ResourceRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.rrtype != RrType::Rrsig) {
        sets.entry((r.name.clone(), r.rrtype)).or_default().push(r);
    }
    sets
}

/// Publishes the apex DNSKEY and replaces all RRSIGs with one fresh
/// signature per record set.
pub fn sign_zone(mut zone: Zone, validity: Validity) -> Result<Zone, DnsError> {
    if !zone.key.has_private() {
        return Err(DnsError::Key);
    }
    let dnskey = zone.dnskey();
    let apex = zone.apex.clone();
    let dnskey_ttl = zone.records.iter().map(|r| r.ttl).min().unwrap_or(3600);
    zone.records
        .retain(|r| r.rrtype != RrType::Rrsig && !(r.rrtype == RrType::Dnskey && r.name == apex));
    zone.records.push(ResourceRecord {
        name: apex.clone(),
        rrtype: RrType::Dnskey,
        ttl: dnskey_ttl,
        rdata: dnskey.to_rdata(),
    });

    let key_tag = dnskey.key_tag();
    let mut sigs = Vec::new();
    for ((name, rrtype), set) in record_sets(&zone.records) {
        let ttl = set[0].ttl;
        if set.iter().any(|r| r.ttl != ttl) {
            return Err(DnsError::Malformed("TTL differs within a record set"));
        }
        let mut sig = Rrsig {
            type_covered: rrtype,
            algorithm: dnskey.algorithm,
            labels: name.label_count(),
            original_ttl: ttl,
            expiration: validity.expiration,
            inception: validity.inception,
            key_tag,
            signer: apex.clone(),
            signature: Vec::new(),
        };
        sig.signature = zone.key.sign(&sig.signed_data(&set)).map_err(|_| DnsError::Key)?.0;
        sigs.push(ResourceRecord { name, rrtype: RrType::Rrsig, ttl, rdata: sig.to_rdata() });
    }
    zone.records.extend(sigs);
    Ok(zone)
}

/// A signed hierarchy served in-process. Zones are immutable once built.
#[derive(Debug, Clone)]
pub struct ZoneSet {
    zones: BTreeMap<Name, Zone>,
}

impl ZoneSet {
    /// Signs zones deepest-first, installing each child's DS in its closest
    /// enclosing zone before that zone is signed.
    pub fn sign_hierarchy(zones: Vec<Zone>, delegation_ttl: u32, validity: Validity) -> Result<ZoneSet, DnsError> {
        let mut pending: BTreeMap<Name, Zone> = zones.into_iter().map(|z| (z.apex.clone(), z)).collect();
        let mut order: Vec<Name> = pending.keys().cloned().collect();
        order.sort_by_key(|n| core::cmp::Reverse(n.label_count()));
        let mut done = BTreeMap::new();
        for apex in order {
            let zone = pending.remove(&apex).unwrap();
            let signed = sign_zone(zone, validity)?;
            let parent = pending
                .values_mut()
                .filter(|p| apex != p.apex && apex.is_within(&p.apex))
                .max_by_key(|p| p.apex.label_count());
            if let Some(parent) = parent {
                parent.delegate(&signed, delegation_ttl)?;
            }
            done.insert(apex, signed);
        }
        Ok(ZoneSet { zones: done })
    }

    pub fn from_zones(zones: impl IntoIterator<Item = Zone>) -> ZoneSet {
        ZoneSet { zones: zones.into_iter().map(|z| (z.apex.clone(), z)).collect() }
    }

    pub fn zone(&self, apex: &Name) -> Option<&Zone> {
        self.zones.get(apex)
    }

    pub fn zone_mut(&mut self, apex: &Name) -> Option<&mut Zone> {
        self.zones.get_mut(apex)
    }

    pub fn zones(&self) -> impl Iterator<Item = &Zone> {
        self.zones.values()
    }

    pub fn root(&self) -> Option<&Zone> {
        self.zones.get(&Name::root())
    }
}

impl super::DnsTransport for ZoneSet {
    fn query(&self, server: &Name, qname: &Name) -> Result<ZoneAnswer, DnsError> {
        self.zones.get(server).map(|z| z.answer(qname)).ok_or(DnsError::NxDomain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::verify;
    use crate::geo::GeoLocation;
    use crate::testutil::identity;

    fn name(s: &str) -> Name {
        Name::parse(s).unwrap()
    }

    #[test]
    fn one_a_record_gains_two_rrsigs() {
        let mut z = Zone::new(name("example.com"), identity(0));
        z.push(ResourceRecord::a(name("example.com"), 300, [192, 0, 2, 7])).unwrap();
        let before = z.records().len();
        let signed = sign_zone(z, Validity::default()).unwrap();
        let sigs: Vec<_> = signed.records().iter().filter(|r| r.rrtype == RrType::Rrsig).collect();
        assert_eq!(sigs.len(), 2);
        // plus the published DNSKEY
        assert_eq!(signed.records().len(), before + 1 + 2);
        let covered: Vec<_> = sigs.iter().map(|r| Rrsig::from_rdata(&r.rdata).unwrap().type_covered).collect();
        assert!(covered.contains(&RrType::A) && covered.contains(&RrType::Dnskey));
    }

    #[test]
    fn every_rrsig_verifies_with_published_key() {
        let apex = name("example.com");
        let mut z = Zone::new(apex.clone(), identity(1));
        z.push(ResourceRecord::a(apex.clone(), 300, [192, 0, 2, 7])).unwrap();
        for i in 0..3 {
            let g = GeoLocation::new(40.0 + i as f64, 8.0, 0.0);
            z.push(ResourceRecord::loc(apex.clone(), 300, &g).unwrap()).unwrap();
        }
        z.push(ResourceRecord::slvreq(apex.clone(), 300, true)).unwrap();
        let signed = sign_zone(z, Validity::default()).unwrap();
        let key_rr = signed.records().iter().find(|r| r.rrtype == RrType::Dnskey).unwrap();
        let key = Dnskey::from_rdata(&key_rr.rdata).unwrap();
        let sets = record_sets(signed.records());
        let mut checked = 0;
        for r in signed.records().iter().filter(|r| r.rrtype == RrType::Rrsig) {
            let sig = Rrsig::from_rdata(&r.rdata).unwrap();
            let set = &sets[&(r.name.clone(), sig.type_covered)];
            assert!(verify(&key.public, &sig.signed_data(set), &sig.signature));
            checked += 1;
        }
        assert_eq!(checked, sets.len());
    }

    #[test]
    fn unkeyed_zone_cannot_be_signed() {
        let z = Zone::new(name("example.com"), SigningIdentity::verifier(identity(0).public().clone()));
        assert_eq!(sign_zone(z, Validity::default()).unwrap_err(), DnsError::Key);
    }

    #[test]
    fn record_file_round_trip() {
        let apex = name("example.com");
        let mut z = Zone::new(apex.clone(), identity(0));
        z.push(ResourceRecord::a(apex.clone(), 300, [10, 0, 0, 1])).unwrap();
        let signed = sign_zone(z, Validity::default()).unwrap();
        let back = Zone::from_record_file(apex, &signed.to_record_file()).unwrap();
        assert_eq!(back.records(), signed.records());
        assert_eq!(back.public_key(), signed.public_key());
        assert!(!back.key().has_private());
    }

    #[test]
    fn referral_and_nxdomain() {
        let root = Zone::new(Name::root(), identity(0));
        let com = Zone::new(name("com"), identity(1));
        let mut leaf = Zone::new(name("example.com"), identity(2));
        leaf.push(ResourceRecord::a(name("www.example.com"), 60, [1, 2, 3, 4])).unwrap();
        let set = ZoneSet::sign_hierarchy(alloc::vec![root, com, leaf], 3600, Validity::default()).unwrap();
        let q = name("www.example.com");
        match set.root().unwrap().answer(&q) {
            ZoneAnswer::Referral { child, records } => {
                assert_eq!(child, name("com"));
                assert_eq!(records.len(), 4);
            }
            other => panic!("{other:?}"),
        }
        let leaf = set.zone(&name("example.com")).unwrap();
        assert!(matches!(leaf.answer(&q), ZoneAnswer::Authoritative(r) if r.len() == 2));
        assert_eq!(leaf.answer(&name("mail.example.com")), ZoneAnswer::NxDomain);
        assert_eq!(leaf.answer(&name("example.org")), ZoneAnswer::NxDomain);
    }
}
