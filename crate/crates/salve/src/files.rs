//! On-disk formats.
//!
//! * Keys: PEM, PKCS#8 `PRIVATE KEY` or PKCS#1 `RSA PUBLIC KEY`.
//! * Certificates: PEM `SALVE CERTIFICATE` wrapping the ServerCert message.
//! * Zone text: `name TTL TYPE rdata` lines; `$ORIGIN` starts a new zone
//!   and relative names hang off it, `@` standing for the origin itself.
//! * Signed zones: a directory of `<apex>zone` record files (`root.zone`
//!   for the root) plus `trust-anchor`, the hex digest of the root key.
//! * SIM registry: `sim-id credential lat lon alt localized-at` lines.
//! * Server configuration and client policy: key-value files.

use std::fs;
use std::path::{Path, PathBuf};

use salve_core::client::{ClientPolicy, MatchMode, RequireSalve};
use salve_core::crypto::{Digest, PublicKey, SigningIdentity};
use salve_core::dns::{Name, ResourceRecord, RrType, TrustAnchor, Zone, ZoneSet};
use salve_core::geo::GeoLocation;
use salve_core::gmlc::{SimRecord, SimRegistry};
use salve_core::server::Batching;
use salve_core::tls::{Certificate, HandshakeMessage, KeyExchangeMode};

use crate::kv::{parse_bool, KvFile};
use crate::Error;

const PRIVATE_KEY: &str = "PRIVATE KEY";
const PUBLIC_KEY: &str = "RSA PUBLIC KEY";
const CERTIFICATE: &str = "SALVE CERTIFICATE";
pub const TRUST_ANCHOR_FILE: &str = "trust-anchor";

pub fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_pem(path: &Path, tag: &str) -> Result<Vec<u8>, Error> {
    let p = pem::parse(read_text(path)?).map_err(|e| Error::File { path: path.into(), message: e.to_string() })?;
    if p.tag() != tag {
        return Err(Error::File { path: path.into(), message: format!("expected {tag}, found {}", p.tag()) });
    }
    Ok(p.into_contents())
}

fn write_pem(path: &Path, tag: &str, der: Vec<u8>) -> Result<(), Error> {
    write_file(path, pem::encode(&pem::Pem::new(tag, der)))
}

pub fn write_private_key(path: &Path, key: &SigningIdentity) -> Result<(), Error> {
    write_pem(path, PRIVATE_KEY, key.to_pkcs8_der()?)
}

pub fn read_private_key(path: &Path) -> Result<SigningIdentity, Error> {
    Ok(SigningIdentity::from_pkcs8_der(&read_pem(path, PRIVATE_KEY)?)?)
}

pub fn write_public_key(path: &Path, key: &PublicKey) -> Result<(), Error> {
    write_pem(path, PUBLIC_KEY, key.to_der().to_vec())
}

/// Reads a public key, or the public half of a private key file.
pub fn read_public_key(path: &Path) -> Result<PublicKey, Error> {
    let text = read_text(path)?;
    if text.contains(PRIVATE_KEY) && !text.contains(PUBLIC_KEY) {
        return Ok(read_private_key(path)?.public().clone());
    }
    Ok(PublicKey::from_der(&read_pem(path, PUBLIC_KEY)?)?)
}

pub fn write_certificate(path: &Path, cert: &Certificate) -> Result<(), Error> {
    let msg = HandshakeMessage::ServerCert {
        domain: cert.domain.clone(),
        public_key: cert.public.to_der().to_vec(),
        ca_signature: cert.ca_signature.clone(),
    };
    write_pem(path, CERTIFICATE, msg.encode())
}

pub fn read_certificate(path: &Path) -> Result<Certificate, Error> {
    let bad = |message: &str| Error::File { path: path.into(), message: message.into() };
    match HandshakeMessage::decode(&read_pem(path, CERTIFICATE)?) {
        Ok(HandshakeMessage::ServerCert { domain, public_key, ca_signature }) => {
            Ok(Certificate { domain, public: PublicKey::from_der(&public_key)?, ca_signature })
        }
        _ => Err(bad("not a certificate")),
    }
}

fn parse_ipv4(s: &str) -> Result<[u8; 4], Error> {
    let ip: std::net::Ipv4Addr = s.parse().map_err(|_| Error::Parse(format!("bad IPv4 address `{s}`")))?;
    Ok(ip.octets())
}

fn absolute(name: &str, origin: &Name) -> Result<Name, Error> {
    if name == "@" {
        return Ok(origin.clone());
    }
    if name.ends_with('.') {
        return Ok(Name::parse(name)?);
    }
    let full = if origin.is_root() { format!("{name}.") } else { format!("{name}.{}", origin.as_str()) };
    Ok(Name::parse(&full)?)
}

/// Parses zone text into unsigned zones, one per `$ORIGIN`, each keyed
/// by `key_for(apex)`.
pub fn parse_zone_text(
    text: &str,
    mut key_for: impl FnMut(&Name) -> Result<SigningIdentity, Error>,
) -> Result<Vec<Zone>, Error> {
    let mut zones: Vec<Zone> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split(';').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |e: Error| Error::Parse(format!("line {}: {e}", n + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] == "$ORIGIN" {
            let [_, origin] = fields[..] else {
                return Err(at(Error::Parse("$ORIGIN takes one name".into())));
            };
            let apex = Name::parse(origin).map_err(|e| at(e.into()))?;
            let key = key_for(&apex)?;
            zones.push(Zone::new(apex, key));
            continue;
        }
        let zone = zones.last_mut().ok_or_else(|| at(Error::Parse("record before any $ORIGIN".into())))?;
        if fields.len() < 4 {
            return Err(at(Error::Parse("expected `name TTL TYPE rdata`".into())));
        }
        let owner = absolute(fields[0], zone.apex()).map_err(at)?;
        let ttl: u32 = fields[1].parse().map_err(|_| at(Error::Parse(format!("bad TTL `{}`", fields[1]))))?;
        let rtype: RrType = fields[2].parse().map_err(|e: salve_core::dns::DnsError| at(e.into()))?;
        let rdata = fields[3..].join(" ");
        let rr = match rtype {
            RrType::A => ResourceRecord::a(owner, ttl, parse_ipv4(&rdata).map_err(at)?),
            RrType::Loc => {
                let g: GeoLocation = rdata.parse().map_err(|e: salve_core::geo::GeoError| at(e.into()))?;
                ResourceRecord::loc(owner, ttl, &g).map_err(|e| at(e.into()))?
            }
            RrType::Ns => ResourceRecord::ns(owner, ttl, &absolute(&rdata, zone.apex()).map_err(at)?),
            RrType::SlvReq => ResourceRecord::slvreq(owner, ttl, parse_bool(&rdata).map_err(at)?),
            other => return Err(at(Error::Parse(format!("{other} records are generated when signing")))),
        };
        zone.push(rr).map_err(|e| at(e.into()))?;
    }
    Ok(zones)
}

/// Writes the A, LOC and SLVREQ records of `zones` as zone text.
/// Delegations and DNSSEC records are left out; signing recreates them.
pub fn zone_text(zones: &[Zone]) -> String {
    let mut out = String::new();
    for z in zones {
        out.push_str(&format!("$ORIGIN {}\n", z.apex()));
        for r in z.records() {
            let rdata = match r.rrtype {
                RrType::A if r.rdata.len() == 4 => {
                    std::net::Ipv4Addr::new(r.rdata[0], r.rdata[1], r.rdata[2], r.rdata[3]).to_string()
                }
                RrType::Loc => match r.location() {
                    Some(g) => g.to_string(),
                    None => continue,
                },
                RrType::SlvReq => (r.rdata.first() == Some(&1)).to_string(),
                _ => continue,
            };
            out.push_str(&format!("{} {} {} {}\n", r.name, r.ttl, r.rrtype, rdata));
        }
    }
    out
}

/// File name of a signed zone inside a zone directory.
pub fn zone_file_name(apex: &Name) -> String {
    if apex.is_root() {
        "root.zone".into()
    } else {
        format!("{}zone", apex.as_str())
    }
}

fn apex_from_file_name(file: &str) -> Option<Name> {
    if file == "root.zone" {
        return Some(Name::root());
    }
    Name::parse(file.strip_suffix("zone")?).ok()
}

pub fn write_zone_dir(dir: &Path, zones: &ZoneSet) -> Result<TrustAnchor, Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for z in zones.zones() {
        write_file(&dir.join(zone_file_name(z.apex())), z.to_record_file())?;
    }
    let root = zones.root().ok_or_else(|| Error::Parse("a zone set needs a root zone".into()))?;
    let anchor = TrustAnchor::for_zone(root);
    write_file(&dir.join(TRUST_ANCHOR_FILE), format!("{}\n", anchor.0.to_hex()))?;
    Ok(anchor)
}

pub fn read_trust_anchor(path: &Path) -> Result<TrustAnchor, Error> {
    let text = read_text(path)?;
    Digest::from_hex(text.trim())
        .map(TrustAnchor)
        .ok_or_else(|| Error::File { path: path.into(), message: "expected a hex SHA-256 digest".into() })
}

/// Loads every `*zone` file of a directory and its trust anchor.
pub fn read_zone_dir(dir: &Path) -> Result<(ZoneSet, TrustAnchor), Error> {
    let mut zones = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for path in paths {
        let Some(apex) = path.file_name().and_then(|f| f.to_str()).and_then(apex_from_file_name) else { continue };
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        zones.push(Zone::from_record_file(apex, &bytes).map_err(|e| Error::File {
            path: path.clone(),
            message: e.to_string(),
        })?);
    }
    if zones.is_empty() {
        return Err(Error::File { path: dir.into(), message: "no zone files".into() });
    }
    Ok((ZoneSet::from_zones(zones), read_trust_anchor(&dir.join(TRUST_ANCHOR_FILE))?))
}

pub fn parse_registry(text: &str) -> Result<SimRegistry, Error> {
    let mut reg = SimRegistry::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |m: String| Error::Parse(format!("line {}: {m}", n + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        let [sim, credential, lat, lon, alt, t] = f[..] else {
            return Err(at("expected `sim-id credential lat lon alt localized-at`".into()));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| at(format!("bad number `{s}`")));
        let g = GeoLocation::new(num(lat)?, num(lon)?, num(alt)?);
        let t: u64 = t.parse().map_err(|_| at(format!("bad timestamp `{t}`")))?;
        reg.register(SimRecord::new(sim, credential, g, t).map_err(|e| at(e.to_string()))?)
            .map_err(|e| at(e.to_string()))?;
    }
    Ok(reg)
}

pub fn registry_text(reg: &SimRegistry) -> String {
    reg.iter()
        .map(|r| {
            let g = r.location;
            format!("{} {} {} {} {} {}\n", r.sim_id, r.credential(), g.latitude, g.longitude, g.altitude, r.localized_at)
        })
        .collect()
}

pub fn load_registry(path: &Path) -> Result<SimRegistry, Error> {
    parse_registry(&read_text(path)?).map_err(|e| e.context(path))
}

fn parse_mode(s: &str) -> Result<KeyExchangeMode, Error> {
    match s {
        "dhe" => Ok(KeyExchangeMode::Dhe),
        "static-rsa" => Ok(KeyExchangeMode::StaticRsa),
        _ => Err(Error::Parse(format!("unknown key exchange `{s}`; expected dhe or static-rsa"))),
    }
}

pub fn mode_name(m: KeyExchangeMode) -> &'static str {
    match m {
        KeyExchangeMode::Dhe => "dhe",
        KeyExchangeMode::StaticRsa => "static-rsa",
    }
}

fn parse_modes(kv: &KvFile) -> Result<Vec<KeyExchangeMode>, Error> {
    let modes = kv.list("modes");
    if modes.is_empty() {
        return Ok(vec![KeyExchangeMode::Dhe]);
    }
    modes.iter().map(|m| parse_mode(m)).collect()
}

/// Everything `serve` needs, with paths resolved against the file's
/// directory.
#[derive(Debug, Clone)]
pub struct ServerFile {
    pub domain: String,
    pub listen: String,
    pub gmlc: String,
    pub certificate: PathBuf,
    pub key: PathBuf,
    pub sim_ids: Vec<String>,
    pub credential: String,
    pub batching: Batching,
    pub multi_sim: bool,
    pub modes: Vec<KeyExchangeMode>,
    pub salve: bool,
    pub event_log: Option<PathBuf>,
}

impl ServerFile {
    pub fn from_kv(kv: &KvFile, base: &Path) -> Result<ServerFile, Error> {
        let batching = match kv.get("batching").unwrap_or("per-connection") {
            "per-connection" => Batching::PerConnection,
            "merkle" => Batching::Merkle {
                window_ms: kv.parsed_or("merkle.window_ms", 10)?,
                max_batch: kv.parsed_or("merkle.max_batch", 32)?,
            },
            other => return Err(Error::Parse(format!("unknown batching `{other}`; expected per-connection or merkle"))),
        };
        let sim_ids = kv.list("sims");
        if sim_ids.is_empty() {
            return Err(Error::Parse("`sims` must list at least one SIM".into()));
        }
        Ok(ServerFile {
            domain: kv.require("domain")?.trim_end_matches('.').to_owned(),
            listen: kv.get("listen").unwrap_or("127.0.0.1:4433").to_owned(),
            gmlc: kv.get("gmlc").unwrap_or("127.0.0.1:9210").to_owned(),
            certificate: base.join(kv.require("certificate")?),
            key: base.join(kv.require("key")?),
            sim_ids,
            credential: kv.require("credential")?.to_owned(),
            batching,
            multi_sim: kv.get("multi_sim").map(parse_bool).transpose()?.unwrap_or(false),
            modes: parse_modes(kv)?,
            salve: kv.get("salve").map(parse_bool).transpose()?.unwrap_or(true),
            event_log: kv.get("event_log").map(|p| base.join(p)),
        })
    }

    pub fn load(path: &Path) -> Result<ServerFile, Error> {
        let base = path.parent().unwrap_or(Path::new("."));
        ServerFile::from_kv(&KvFile::load(path)?, base).map_err(|e| e.context(path))
    }
}

pub fn parse_policy(kv: &KvFile) -> Result<ClientPolicy, Error> {
    let d = ClientPolicy::default();
    let policy = ClientPolicy {
        freshness_threshold: kv.parsed_or("freshness_threshold_s", d.freshness_threshold)?,
        distance_threshold: kv.parsed_or("distance_threshold_m", d.distance_threshold)?,
        require_salve: match kv.get("require_salve") {
            None => d.require_salve,
            Some("always") => RequireSalve::Always,
            Some("per-dns-flag") => RequireSalve::PerDnsFlag,
            Some("never") => RequireSalve::Never,
            Some(o) => return Err(Error::Parse(format!("`require_salve`: expected always, per-dns-flag or never, got `{o}`"))),
        },
        match_mode: match kv.get("match") {
            None => d.match_mode,
            Some("any-of-l") => MatchMode::AnyOfL,
            Some("all-of-l") => MatchMode::AllOfL,
            Some(o) => return Err(Error::Parse(format!("`match`: expected any-of-l or all-of-l, got `{o}`"))),
        },
    };
    policy.validate().map_err(|e| Error::Parse(e.into()))?;
    Ok(policy)
}

pub fn policy_kv(p: &ClientPolicy) -> KvFile {
    let mut kv = KvFile::default();
    kv.push("freshness_threshold_s", p.freshness_threshold);
    kv.push("distance_threshold_m", p.distance_threshold);
    kv.push(
        "require_salve",
        match p.require_salve {
            RequireSalve::Always => "always",
            RequireSalve::PerDnsFlag => "per-dns-flag",
            RequireSalve::Never => "never",
        },
    );
    kv.push("match", if p.match_mode == MatchMode::AnyOfL { "any-of-l" } else { "all-of-l" });
    kv
}

/// Client settings for `connect`: the policy plus the provisioned keys and
/// the key exchange modes to offer.
#[derive(Debug, Clone)]
pub struct ClientFile {
    pub policy: ClientPolicy,
    pub ca_key: Option<PathBuf>,
    pub gmlc_key: Option<PathBuf>,
    pub modes: Vec<KeyExchangeMode>,
}

impl ClientFile {
    pub fn load(path: &Path) -> Result<ClientFile, Error> {
        let base = path.parent().unwrap_or(Path::new("."));
        let kv = KvFile::load(path)?;
        let load = || -> Result<ClientFile, Error> {
            Ok(ClientFile {
                policy: parse_policy(&kv)?,
                ca_key: kv.get("ca_key").map(|p| base.join(p)),
                gmlc_key: kv.get("gmlc_key").map(|p| base.join(p)),
                modes: parse_modes(&kv)?,
            })
        };
        load().map_err(|e| e.context(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{test_keys, Deployment, Topology};
    use salve_core::dns::{ladns_lookup, Validity};

    #[test]
    fn key_and_certificate_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let keys = test_keys();
        let (priv_path, pub_path, cert_path) =
            (dir.path().join("k.pem"), dir.path().join("k.pub"), dir.path().join("c.pem"));
        write_private_key(&priv_path, &keys.server).unwrap();
        write_public_key(&pub_path, keys.server.public()).unwrap();
        assert_eq!(read_private_key(&priv_path).unwrap().public(), keys.server.public());
        assert_eq!(&read_public_key(&pub_path).unwrap(), keys.server.public());
        assert_eq!(&read_public_key(&priv_path).unwrap(), keys.server.public());
        let cert = Certificate::issue("www.example.com", keys.server.public(), &keys.ca).unwrap();
        write_certificate(&cert_path, &cert).unwrap();
        let back = read_certificate(&cert_path).unwrap();
        assert_eq!(back, cert);
        assert!(back.verify(keys.ca.public()));
        assert!(read_private_key(&pub_path).is_err());
        assert!(read_certificate(&priv_path).is_err());
    }

    const ZONES: &str = "\
$ORIGIN .
$ORIGIN com.
$ORIGIN example.com.   ; the leaf zone
@    3600 A   192.0.2.1
www  3600 A   192.0.2.10
www  3600 LOC 47 22 36.840 N 8 32 30.120 E 408.00m
www  3600 SLVREQ 1
";

    #[test]
    fn zone_text_signs_and_resolves() {
        let keys = test_keys();
        let mut i = 0;
        let zones = parse_zone_text(ZONES, |_| {
            i += 1;
            Ok(keys.zones[i - 1].clone())
        })
        .unwrap();
        assert_eq!(zones.len(), 3);
        assert_eq!(zones[2].records().len(), 4);
        let text = zone_text(&zones);
        let again = parse_zone_text(&text, |_| Ok(keys.zones[0].clone())).unwrap();
        assert_eq!(again[2].records(), zones[2].records());

        let set = salve_core::dns::ZoneSet::sign_hierarchy(zones, 86_400, Validity::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let anchor = write_zone_dir(dir.path(), &set).unwrap();
        assert!(dir.path().join("root.zone").exists());
        assert!(dir.path().join("example.com.zone").exists());
        let (loaded, anchor2) = read_zone_dir(dir.path()).unwrap();
        assert_eq!(anchor, anchor2);
        let www = Name::parse("www.example.com").unwrap();
        let (v, _) = ladns_lookup(&loaded, &www, &anchor2, 1_700_000_000).unwrap();
        assert_eq!(v.ip, [192, 0, 2, 10]);
        assert!(v.salve_required);
        assert!((v.locations[0].latitude - 47.3769).abs() < 1e-6);
    }

    #[test]
    fn zone_text_errors_name_the_line() {
        let key = |_: &Name| Ok(test_keys().zones[0].clone());
        for (text, line) in [
            ("www 60 A 1.2.3.4", 1),
            ("$ORIGIN com.\nwww 60 A 1.2.3", 2),
            ("$ORIGIN com.\n\nwww x A 1.2.3.4", 3),
            ("$ORIGIN com.\nwww 60 RRSIG 00", 2),
            ("$ORIGIN com.\nwww 60 LOC 95 0 0 N 0 0 0 E 0m", 2),
        ] {
            let err = parse_zone_text(text, key).unwrap_err().to_string();
            assert!(err.starts_with(&format!("line {line}:")), "{err}");
        }
    }

    #[test]
    fn registry_round_trip() {
        let d = Deployment::new(test_keys(), Topology { server_sims: 2, ..Topology::default() }).unwrap();
        let text = registry_text(&d.registry);
        let back = parse_registry(&format!("# sims\n{text}")).unwrap();
        assert_eq!(back.len(), 3);
        for r in d.registry.iter() {
            let b = back.get(&r.sim_id).unwrap();
            assert_eq!((b.credential(), b.localized_at), (r.credential(), r.localized_at));
        }
        assert!(parse_registry("228 pw 1 2").is_err());
        assert!(parse_registry("228 pw 91 2 0 0").is_err());
    }

    #[test]
    fn policy_and_server_files() {
        let p = ClientPolicy { distance_threshold: 50.0, match_mode: MatchMode::AllOfL, ..ClientPolicy::default() };
        let kv = KvFile::parse(&policy_kv(&p).to_string()).unwrap();
        assert_eq!(parse_policy(&kv).unwrap(), p);
        assert!(parse_policy(&KvFile::parse("freshness_threshold_s = 0").unwrap()).is_err());
        assert!(parse_policy(&KvFile::parse("match = some").unwrap()).is_err());

        let kv = KvFile::parse(
            "domain = www.example.com.\ncertificate = c.pem\nkey = k.pem\nsims = 1, 2\ncredential = pw\n\
             batching = merkle\nmerkle.max_batch = 8\nmodes = dhe, static-rsa",
        )
        .unwrap();
        let s = ServerFile::from_kv(&kv, Path::new("/etc/salve")).unwrap();
        assert_eq!(s.domain, "www.example.com");
        assert_eq!(s.certificate, Path::new("/etc/salve/c.pem"));
        assert_eq!(s.sim_ids, ["1", "2"]);
        assert_eq!(s.batching, Batching::Merkle { window_ms: 10, max_batch: 8 });
        assert_eq!(s.modes, [KeyExchangeMode::Dhe, KeyExchangeMode::StaticRsa]);
        assert!(ServerFile::from_kv(&KvFile::parse("domain = x").unwrap(), Path::new(".")).is_err());
    }
}
