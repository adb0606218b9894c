use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::Duration;

fn salve(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salve")).args(args).output().unwrap()
}

fn spawn(args: &[&str]) -> Child {
    Command::new(env!("CARGO_BIN_EXE_salve")).args(args).stderr(Stdio::null()).spawn().unwrap()
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

struct Kill(Vec<Child>);

impl Drop for Kill {
    fn drop(&mut self) {
        for c in &mut self.0 {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn wait_for(port: u16) {
    for _ in 0..200 {
        if std::net::TcpStream::connect(("127.0.0.1", port)).is_ok() {
            return;
        }
        thread::sleep(Duration::from_millis(25));
    }
    panic!("nothing listening on {port}");
}

#[test]
fn provision_serve_and_connect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (port, gmlc_port) = (free_port(), free_port());
    let out = salve(&[
        "provision",
        "--out",
        d.to_str().unwrap(),
        "--port",
        &port.to_string(),
        "--gmlc-port",
        &gmlc_port.to_string(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let p = |f: &str| d.join(f).to_str().unwrap().to_owned();

    // The provisioned zone text signs into an equivalent zone directory.
    let out = salve(&["zone-gen", "--zone", &p("zones.txt"), "--out", &p("resigned"), "--keys", &p("zone-keys")]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let anchor = std::fs::read_to_string(d.join("zones/trust-anchor")).unwrap();
    assert_eq!(text(&out.stdout).trim(), anchor.trim());

    let _children = Kill(vec![
        spawn(&["gmlc", "--registry", &p("registry.txt"), "--listen", &format!("127.0.0.1:{gmlc_port}"), "--key", &p("gmlc.key"), "--relocalize"]),
        spawn(&["serve", "--config", &p("server.conf")]),
    ]);
    wait_for(gmlc_port);
    wait_for(port);
    let server = format!("127.0.0.1:{port}");
    let out = salve(&[
        "connect",
        "--domain",
        "www.salve-demo-bank.com",
        "--policy",
        &p("client.conf"),
        "--zones",
        &p("resigned"),
        "--server",
        &server,
        "--transcript",
        &p("t.hex"),
    ]);
    let line = text(&out.stdout);
    assert!(out.status.success(), "{line} {}", text(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["ok"], true);
    assert_eq!(v["reason"], "ok");
    assert_eq!(v["verified"], true);
    assert!(std::fs::read_to_string(d.join("t.hex")).unwrap().lines().count() >= 8);

    let out = salve(&["connect", "--domain", "mail.salve-demo-bank.com", "--policy", &p("client.conf"), "--zones", &p("zones")]);
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_str(text(&out.stdout).trim()).unwrap();
    assert_eq!(v["status"], "dns-failure");
}

#[test]
fn keygen_issues_a_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| dir.path().join(f).to_str().unwrap().to_owned();
    assert!(salve(&["keygen", "--out", &p("ca.key")]).status.success());
    let out = salve(&["keygen", "--out", &p("s.key"), "--public", &p("s.pub"), "--sign-with", &p("ca.key"), "--domain", "a.example", "--cert", &p("s.cert")]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let cert = salve::files::read_certificate(Path::new(&p("s.cert"))).unwrap();
    let ca = salve::files::read_public_key(Path::new(&p("ca.key"))).unwrap();
    assert_eq!(cert.domain, "a.example");
    assert!(cert.verify(&ca));
    assert_eq!(cert.public, salve::files::read_public_key(Path::new(&p("s.pub"))).unwrap());
}

#[test]
fn attack_exit_codes() {
    let out = salve(&["attack", "--scenario", "relay-statement"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("digest-mismatch"));
    let out = salve(&["attack", "--scenario", "no-such-attack"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("no-such-attack"));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let out = salve(&["bench", "--mode", "salve", "--concurrency", "1,4", "--duration", "0.2", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let body = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "mode,concurrency,p50_ms,p90_ms,sigma_ms,rps,gmlc_requests,ladns_extra_bytes");
    assert!(lines[1].starts_with("salve,1,"));
    assert!(lines[2].starts_with("salve,4,"));
}

#[test]
fn zone_gen_reports_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let zone = dir.path().join("z.txt");
    std::fs::write(&zone, "$ORIGIN .\n$ORIGIN example.\nwww 60 A 10.0.0.300\n").unwrap();
    let out = salve(&[
        "zone-gen",
        "--zone",
        zone.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--keys",
        dir.path().join("keys").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("line 3"), "{}", text(&out.stderr));
}
