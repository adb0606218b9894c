use super::*;
use salve_core::client::Reason;

fn deployment(t: Topology) -> Arc<Deployment> {
    Arc::new(Deployment::new(test_keys(), t).unwrap())
}

fn run(t: Topology, config: WorldConfig) -> WorldReport {
    World::new(deployment(t), config, None).unwrap().run()
}

#[test]
fn honest_salve_handshake_is_verified() {
    let r = run(Topology::default(), WorldConfig { clients: 3, connections_per_client: Some(2), ..Default::default() });
    assert_eq!(r.outcomes.len(), 6);
    for o in &r.outcomes {
        assert_eq!(o.outcome, Outcome::Finished(ConnectionStatus::Established { verified: true }), "{o:?}");
        assert_eq!(o.verdict.unwrap().reason, Reason::Ok);
    }
    assert_eq!(r.server_stats.gmlc_requests, 6);
    assert_eq!(r.gmlc_served, 6);
    assert_eq!(r.gmlc_rtts_ms.len(), 6);
}

#[test]
fn plain_handshake_skips_the_gmlc() {
    let t = Topology { slvreq: false, ..Default::default() };
    let config = WorldConfig { server_salve: false, client_salve: false, ..Default::default() };
    let r = run(t, config);
    assert_eq!(r.outcomes[0].outcome, Outcome::Finished(ConnectionStatus::Established { verified: false }));
    assert_eq!(r.server_stats.gmlc_requests, 0);
}

#[test]
fn gmlc_round_trip_adds_to_server_latency() {
    let cost = CostModel::default();
    let base = WorldConfig { timing: Timing::Virtual(cost), ..Default::default() };
    let salve = run(Topology::default(), base.clone());
    let plain = run(
        Topology { slvreq: false, ..Default::default() },
        WorldConfig { server_salve: false, client_salve: false, ..base },
    );
    let delta = salve.latencies_ms[0] - plain.latencies_ms[0];
    // Two 15 ms legs plus request encoding, statement signing and forwarding.
    let expected = 30.0 + 3.0 * cost.mlp_ms + cost.rsa_sign_ms + cost.mlp_ms + cost.message_ms;
    assert!((delta - expected).abs() < 1e-3, "delta {delta} expected {expected}");
}

#[test]
fn linger_exchanges_application_data() {
    let r = run(Topology::default(), WorldConfig { linger_ms: Some(100.0), ..Default::default() });
    assert_eq!(r.outcomes[0].received, vec![SERVER_RESPONSE.to_vec()]);
}

#[test]
fn gmlc_outage_fails_closed() {
    let r = run(Topology::default(), WorldConfig { gmlc_down: true, ..Default::default() });
    let Outcome::Finished(ConnectionStatus::Failed(f)) = r.outcomes[0].outcome else {
        panic!("{:?}", r.outcomes[0]);
    };
    assert!(matches!(f, salve_core::client::Failure::Alert(a) if a.remote && a.code == salve_core::tls::AlertCode::BadLocationStatement));
}

#[test]
fn merkle_window_batches_concurrent_clients() {
    let config = WorldConfig {
        clients: 7,
        batching: Batching::Merkle { window_ms: 50, max_batch: 8 },
        ..Default::default()
    };
    let r = run(Topology::default(), config);
    assert_eq!(r.completed(), 7);
    assert_eq!(r.server_stats.gmlc_requests, 1);
}

#[test]
fn deadline_stops_closed_loop_clients() {
    let config = WorldConfig { connections_per_client: None, duration_ms: Some(1_000.0), ..Default::default() };
    let r = run(Topology::default(), config);
    assert!(r.completed() > 10, "{}", r.completed());
    assert!(r.end_ms <= 1_000.0);
}

#[test]
fn single_location_payload() {
    let t = Topology { sites: vec![GeoLocation::new(47.3769, 8.5417, 408.0)], ..Default::default() };
    let r = run(t, WorldConfig::default());
    assert_eq!(r.completed(), 1);
    assert!((357..=483).contains(&r.ladns_extra_bytes), "{}", r.ladns_extra_bytes);
}

#[test]
fn topology_kv_round_trip() {
    let t = Topology { tap: true, server_sims: 3, seed: 9, ..Default::default() };
    let kv = KvFile::parse(&t.to_kv().to_string()).unwrap();
    let back = Topology::from_kv(&kv).unwrap();
    assert_eq!(back.domain, t.domain);
    assert_eq!(back.sites.len(), 2);
    for (a, b) in back.sites.iter().zip(&t.sites) {
        assert!(salve_core::geo::great_circle_distance(a, b) < 0.1);
    }
    assert_eq!((back.tap, back.server_sims, back.seed), (true, 3, 9));
    assert!(Topology::from_kv(&KvFile::parse("server_site = 5").unwrap()).is_err());
    assert!(Topology::from_kv(&KvFile::parse("tap = sideways").unwrap()).is_err());
}

#[test]
fn runs_are_deterministic() {
    let config = WorldConfig { clients: 4, connections_per_client: Some(3), ..Default::default() };
    let a = run(Topology::default(), config.clone());
    let b = run(Topology::default(), config);
    assert_eq!(a.outcomes, b.outcomes);
    assert_eq!(a.latencies_ms, b.latencies_ms);
}
