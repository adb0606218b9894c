//! Closed-loop handshake benchmarks on the simulated network.
//!
//! Each of `concurrency` clients opens a connection, completes the
//! handshake, hangs up and immediately starts the next one until the
//! duration runs out. Latency is measured at the server, from receiving
//! ClientHello to sending its final flight.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use salve_core::server::Batching;

use crate::world::{Deployment, Keys, Outcome, Timing, Topology, World, WorldConfig};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    /// Neither side speaks the extension.
    Plain,
    /// One GMLC request per handshake.
    Salve,
    /// Statements aggregated over a Merkle tree.
    SalveMerkle { window_ms: u64, max_batch: usize },
}

impl BenchMode {
    pub const MERKLE_DEFAULT: BenchMode = BenchMode::SalveMerkle { window_ms: 10, max_batch: 32 };

    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Plain => "plain",
            BenchMode::Salve => "salve",
            BenchMode::SalveMerkle { .. } => "salve-merkle",
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(BenchMode::Plain),
            "salve" => Ok(BenchMode::Salve),
            "salve-merkle" => Ok(BenchMode::MERKLE_DEFAULT),
            _ => Err(Error::Parse(format!("unknown mode `{s}`; expected plain, salve or salve-merkle"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub mode: BenchMode,
    pub concurrency: usize,
    pub duration_ms: f64,
    pub timing: Timing,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub mode: BenchMode,
    pub concurrency: usize,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub sigma_ms: f64,
    /// Completed handshakes per second of simulated time.
    pub rps: f64,
    pub handshakes: usize,
    pub gmlc_requests: u64,
    /// LOC and RRSIG bytes the DNS answer carries beyond a plain one.
    pub ladns_extra_bytes: usize,
}

pub const CSV_HEADER: [&str; 8] =
    ["mode", "concurrency", "p50_ms", "p90_ms", "sigma_ms", "rps", "gmlc_requests", "ladns_extra_bytes"];

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn run_bench(keys: Arc<Keys>, topology: &Topology, config: &BenchConfig) -> Result<BenchRow, Error> {
    if config.concurrency == 0 {
        return Err(Error::Parse("concurrency must be at least 1".into()));
    }
    if !(config.duration_ms.is_finite() && config.duration_ms > 0.0) {
        return Err(Error::Parse("duration must be positive".into()));
    }
    let salve = config.mode != BenchMode::Plain;
    let topology = Topology { tap: false, slvreq: salve, ..topology.clone() };
    let deployment = Arc::new(Deployment::new(keys, topology)?);
    let world_config = WorldConfig {
        batching: match config.mode {
            BenchMode::SalveMerkle { window_ms, max_batch } => Batching::Merkle { window_ms, max_batch },
            _ => Batching::PerConnection,
        },
        server_salve: salve,
        client_salve: salve,
        clients: config.concurrency,
        connections_per_client: None,
        duration_ms: Some(config.duration_ms),
        timing: config.timing,
        ..WorldConfig::default()
    };
    let report = World::new(deployment, world_config, None)?.run();
    if let Some(bad) = report.outcomes.iter().find(|o| !o.established() && o.outcome != Outcome::Incomplete) {
        return Err(Error::Parse(format!("benchmark handshake failed: {:?}", bad.outcome)));
    }
    let mut lat = report.latencies_ms.clone();
    lat.sort_by(f64::total_cmp);
    Ok(BenchRow {
        mode: config.mode,
        concurrency: config.concurrency,
        p50_ms: percentile(&lat, 50.0),
        p90_ms: percentile(&lat, 90.0),
        sigma_ms: std_dev(&lat),
        rps: lat.len() as f64 / (config.duration_ms / 1_000.0),
        handshakes: lat.len(),
        gmlc_requests: report.server_stats.gmlc_requests,
        ladns_extra_bytes: if salve { report.ladns_extra_bytes } else { 0 },
    })
}

pub fn write_csv<W: Write>(out: W, rows: &[BenchRow]) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Parse(format!("writing CSV: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.mode.name().to_string(),
            r.concurrency.to_string(),
            format!("{:.3}", r.p50_ms),
            format!("{:.3}", r.p90_ms),
            format!("{:.3}", r.sigma_ms),
            format!("{:.1}", r.rps),
            r.gmlc_requests.to_string(),
            r.ladns_extra_bytes.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
