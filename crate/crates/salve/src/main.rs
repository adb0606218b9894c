use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand_core::OsRng;
use serde_json::json;

use salve::attack::{run_attack, Scenario};
use salve::bench::{run_bench, write_csv, BenchConfig, BenchMode};
use salve::files::{self, ClientFile, ServerFile};
use salve::kv::KvFile;
use salve::net::{self, EventLog, GmlcService, WebServer};
use salve::world::{Deployment, Keys, Timing, Topology, SERVER_CREDENTIAL};
use salve_core::client::{ClientContext, ConnectionStatus};
use salve_core::crypto::SigningIdentity;
use salve_core::dns::{ladns_lookup, Name, Validity, ZoneSet};
use salve_core::server::ServerConfig;
use salve_core::tls::{Certificate, ServerTlsConfig};

#[derive(Parser)]
#[command(name = "salve", version, about = "Location-verified server authentication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an RSA key, optionally with a certificate signed by a CA key.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// Also write the public half here.
        #[arg(long)]
        public: Option<PathBuf>,
        /// CA private key that certifies the new key for `--domain`.
        #[arg(long, requires_all = ["domain", "cert"])]
        sign_with: Option<PathBuf>,
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Sign zone text into a directory of record files plus a trust anchor.
    ZoneGen {
        #[arg(long)]
        zone: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Zone signing keys, one `<zone file>.key` per apex; missing ones are created.
        #[arg(long)]
        keys: PathBuf,
    },
    /// Write a complete local deployment: keys, zones, registry and configs.
    Provision {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "www.salve-demo-bank.com")]
        domain: String,
        #[arg(long, default_value_t = 4433)]
        port: u16,
        #[arg(long, default_value_t = 9210)]
        gmlc_port: u16,
    },
    /// Run the location center.
    Gmlc {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        listen: String,
        /// GMLC signing key.
        #[arg(long)]
        key: PathBuf,
        /// Treat every requested SIM as localized at request time.
        #[arg(long)]
        relocalize: bool,
    },
    /// Run the web server.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Connect to a server and print the verdict as one JSON line.
    Connect {
        #[arg(long)]
        domain: String,
        #[arg(long)]
        policy: PathBuf,
        /// Signed zone directory standing in for the DNS.
        #[arg(long)]
        zones: PathBuf,
        /// Server address; defaults to the A record on port 4433.
        #[arg(long)]
        server: Option<String>,
        /// Application data to send once established.
        #[arg(long)]
        request: Option<String>,
        /// Hex dump of every message sent (`>`) and received (`<`).
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
    },
    /// Run an attack scenario on the simulated network.
    Attack {
        /// Scenario name, or `all`.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        topology: Option<PathBuf>,
    },
    /// Closed-loop handshake benchmark on the simulated network.
    Bench {
        #[arg(long)]
        mode: BenchMode,
        /// Comma-separated client counts.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        concurrency: Vec<usize>,
        /// Simulated seconds per run.
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        topology: Option<PathBuf>,
        /// Charge measured CPU time instead of the fixed cost model.
        #[arg(long)]
        measured: bool,
    },
    /// Perturb handshakes and check that no invalid state is reached.
    Fuzz {
        #[arg(long, default_value_t = 1000)]
        iterations: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Keygen { out, public, sign_with, domain, cert } => keygen(&out, public, sign_with, domain, cert),
        Command::ZoneGen { zone, out, keys } => zone_gen(&zone, &out, &keys),
        Command::Provision { out, domain, port, gmlc_port } => provision(&out, &domain, port, gmlc_port),
        Command::Gmlc { registry, listen, key, relocalize } => {
            let service = GmlcService::new(files::load_registry(&registry)?, files::read_private_key(&key)?, relocalize);
            let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            eprintln!("gmlc listening on {}", listener.local_addr()?);
            Arc::new(service).serve(listener)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { config } => serve(&config),
        Command::Connect { domain, policy, zones, server, request, transcript, timeout_ms } => {
            connect(&domain, &policy, &zones, server, request, transcript, timeout_ms)
        }
        Command::Attack { scenario, topology } => attack(&scenario, topology),
        Command::Bench { mode, concurrency, duration, out, topology, measured } => {
            bench(mode, &concurrency, duration, out, topology, measured)
        }
        Command::Fuzz { iterations, seed } => {
            let report = salve::fuzz::fuzz(Keys::cached(1)?, seed, iterations)?;
            println!("{report:?}");
            Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn generate_key() -> Result<SigningIdentity> {
    Ok(SigningIdentity::generate(&mut OsRng)?)
}

fn keygen(
    out: &Path,
    public: Option<PathBuf>,
    sign_with: Option<PathBuf>,
    domain: Option<String>,
    cert: Option<PathBuf>,
) -> Result<ExitCode> {
    let key = generate_key()?;
    files::write_private_key(out, &key)?;
    if let Some(p) = public {
        files::write_public_key(&p, key.public())?;
    }
    if let (Some(ca), Some(domain), Some(cert)) = (sign_with, domain, cert) {
        let ca = files::read_private_key(&ca)?;
        let c = Certificate::issue(domain.trim_end_matches('.'), key.public(), &ca)?;
        files::write_certificate(&cert, &c)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn zone_key_path(keys: &Path, apex: &Name) -> PathBuf {
    keys.join(format!("{}.key", files::zone_file_name(apex)))
}

fn zone_gen(zone: &Path, out: &Path, keys: &Path) -> Result<ExitCode> {
    std::fs::create_dir_all(keys).with_context(|| format!("creating {}", keys.display()))?;
    let text = files::read_text(zone)?;
    let zones = files::parse_zone_text(&text, |apex| {
        let path = zone_key_path(keys, apex);
        if path.exists() {
            return files::read_private_key(&path);
        }
        let key = SigningIdentity::generate(&mut OsRng)?;
        files::write_private_key(&path, &key)?;
        Ok(key)
    })
    .with_context(|| zone.display().to_string())?;
    let set = ZoneSet::sign_hierarchy(zones, 86_400, Validity::default())?;
    let anchor = files::write_zone_dir(out, &set)?;
    println!("{}", anchor.0.to_hex());
    Ok(ExitCode::SUCCESS)
}

fn provision(out: &Path, domain: &str, port: u16, gmlc_port: u16) -> Result<ExitCode> {
    let mut seed = [0u8; 8];
    rand_core::RngCore::fill_bytes(&mut OsRng, &mut seed);
    let keys = Arc::new(Keys::generate(u64::from_le_bytes(seed))?);
    let topology = Topology { domain: domain.to_owned(), ip: [127, 0, 0, 1], ..Topology::default() };
    let d = Deployment::new(keys.clone(), topology.clone())?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let zone_keys = out.join("zone-keys");
    std::fs::create_dir_all(&zone_keys)?;
    for z in d.zones.zones() {
        files::write_private_key(&zone_key_path(&zone_keys, z.apex()), z.key())?;
    }
    let zones: Vec<_> = d.zones.zones().cloned().collect();
    files::write_file(&out.join("zones.txt"), files::zone_text(&zones))?;
    files::write_zone_dir(&out.join("zones"), &d.zones)?;
    files::write_private_key(&out.join("ca.key"), &keys.ca)?;
    files::write_public_key(&out.join("ca.pub"), keys.ca.public())?;
    files::write_private_key(&out.join("gmlc.key"), &keys.gmlc)?;
    files::write_public_key(&out.join("gmlc.pub"), keys.gmlc.public())?;
    files::write_private_key(&out.join("server.key"), &keys.server)?;
    files::write_certificate(&out.join("server.cert"), &d.server_cert)?;
    files::write_file(&out.join("registry.txt"), files::registry_text(&d.registry))?;

    let mut server = KvFile::default();
    server.push("domain", domain);
    server.push("listen", format!("127.0.0.1:{port}"));
    server.push("gmlc", format!("127.0.0.1:{gmlc_port}"));
    server.push("certificate", "server.cert");
    server.push("key", "server.key");
    for s in &d.server_sims {
        server.push("sims", s);
    }
    server.push("credential", SERVER_CREDENTIAL);
    server.push("batching", "per-connection");
    server.push("modes", "dhe");
    server.push("event_log", "events.csv");
    files::write_file(&out.join("server.conf"), server.to_string())?;

    let mut client = files::policy_kv(&Default::default());
    client.push("ca_key", "ca.pub");
    client.push("gmlc_key", "gmlc.pub");
    client.push("modes", "dhe");
    files::write_file(&out.join("client.conf"), client.to_string())?;
    files::write_file(&out.join("topology.conf"), topology.to_kv().to_string())?;
    println!("{}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn serve(config: &Path) -> Result<ExitCode> {
    let file = ServerFile::load(config)?;
    let tls = ServerTlsConfig {
        certificate: files::read_certificate(&file.certificate)?,
        key: files::read_private_key(&file.key)?,
        modes: file.modes.clone(),
        salve: file.salve,
    };
    let server_config = ServerConfig {
        domain: file.domain.clone(),
        tls: Arc::new(tls),
        sim_ids: file.sim_ids.clone(),
        credential: file.credential.clone(),
        batching: file.batching,
        multi_sim: file.multi_sim,
    };
    let log = match &file.event_log {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            Some(EventLog::new(Box::new(BufWriter::new(f)))?)
        }
        None => None,
    };
    let listener = TcpListener::bind(&file.listen).with_context(|| format!("binding {}", file.listen))?;
    eprintln!("serving {} on {}", file.domain, listener.local_addr()?);
    WebServer::new(server_config, &file.gmlc, log)?.run(listener)?;
    Ok(ExitCode::SUCCESS)
}

fn connect(
    domain: &str,
    policy: &Path,
    zones: &Path,
    server: Option<String>,
    request: Option<String>,
    transcript: Option<PathBuf>,
    timeout_ms: u64,
) -> Result<ExitCode> {
    let client = ClientFile::load(policy)?;
    let (Some(ca), Some(gmlc)) = (&client.ca_key, &client.gmlc_key) else {
        bail!("{}: `ca_key` and `gmlc_key` are required", policy.display());
    };
    let ctx = ClientContext {
        modes: client.modes.clone(),
        ..ClientContext::new(files::read_public_key(ca)?, files::read_public_key(gmlc)?, client.policy)
    };
    let (zone_set, anchor) = files::read_zone_dir(zones)?;
    let name = Name::parse(domain)?;
    let now = net::unix_now();
    let records = match ladns_lookup(&zone_set, &name, &anchor, now.min(u64::from(u32::MAX)) as u32) {
        Ok((r, _)) => r,
        Err(e) => {
            println!("{}", json!({ "domain": domain, "status": "dns-failure", "reason": e.to_string() }));
            return Ok(ExitCode::FAILURE);
        }
    };
    let [a, b, c, d] = records.ip;
    let addr = server.unwrap_or_else(|| format!("{a}.{b}.{c}.{d}:4433"));
    let mut dump = match &transcript {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let result = net::connect(
        &addr,
        &ctx,
        records,
        request.as_deref().map(str::as_bytes),
        Duration::from_millis(timeout_ms),
        dump.as_mut().map(|w| w as &mut dyn Write),
    );
    if let Some(mut w) = dump {
        w.flush()?;
    }
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            println!("{}", json!({ "domain": domain, "status": "error", "reason": e.to_string() }));
            return Ok(ExitCode::FAILURE);
        }
    };
    let responses: Vec<String> = result.responses.iter().map(|r| String::from_utf8_lossy(r).into_owned()).collect();
    let (status, reason, ok) = match result.status {
        ConnectionStatus::Established { verified } => {
            let reason = result.verdict.map(|v| v.reason.as_str().to_owned()).unwrap_or_else(|| "ok".into());
            ("established", reason, verified || result.verdict.is_none())
        }
        ConnectionStatus::Failed(f) => {
            ("rejected", f.reason().map(|r| r.as_str().to_owned()).unwrap_or_else(|| f.to_string()), false)
        }
        ConnectionStatus::Handshaking => ("incomplete", "timed out".into(), false),
    };
    let line = json!({
        "domain": domain,
        "status": status,
        "ok": ok,
        "reason": reason,
        "verified": result.verdict.is_some_and(|v| v.accepted),
        "session_digest": result.session_digest.map(|d| d.to_hex()),
        "elapsed_ms": (result.elapsed_ms * 1000.0).round() / 1000.0,
        "responses": responses,
    });
    println!("{line}");
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn load_topology(path: Option<PathBuf>) -> Result<Topology> {
    match path {
        Some(p) => Ok(Topology::from_kv(&KvFile::load(&p)?).with_context(|| p.display().to_string())?),
        None => Ok(Topology::default()),
    }
}

fn attack(scenario: &str, topology: Option<PathBuf>) -> Result<ExitCode> {
    let topology = load_topology(topology)?;
    let scenarios = if scenario == "all" { Scenario::ALL.to_vec() } else { vec![scenario.parse::<Scenario>()?] };
    let mut all_passed = true;
    for s in scenarios {
        let report = run_attack(s, &topology)?;
        println!("{report}");
        all_passed &= report.passed();
    }
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn bench(
    mode: BenchMode,
    concurrency: &[usize],
    duration: f64,
    out: Option<PathBuf>,
    topology: Option<PathBuf>,
    measured: bool,
) -> Result<ExitCode> {
    let topology = load_topology(topology)?;
    let keys = Keys::cached(topology.seed)?;
    let timing = if measured { Timing::Measured } else { Timing::default() };
    let mut rows = Vec::new();
    for &c in concurrency {
        let config = BenchConfig { mode, concurrency: c, duration_ms: duration * 1_000.0, timing };
        rows.push(run_bench(keys.clone(), &topology, &config)?);
    }
    match out {
        Some(p) => write_csv(File::create(&p).with_context(|| format!("creating {}", p.display()))?, &rows)?,
        None => write_csv(io::stdout().lock(), &rows)?,
    }
    Ok(ExitCode::SUCCESS)
}
