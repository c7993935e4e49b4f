//! The command-line tools against each other over real TCP sockets.

use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

fn bin(name: &str) -> &'static str {
    match name {
        "ltca" => env!("CARGO_BIN_EXE_ltca"),
        "pca" => env!("CARGO_BIN_EXE_pca"),
        "ra" => env!("CARGO_BIN_EXE_ra"),
        "directory" => env!("CARGO_BIN_EXE_directory"),
        "vehicle" => env!("CARGO_BIN_EXE_vehicle"),
        "vpki" => env!("CARGO_BIN_EXE_vpki"),
        "sim" => env!("CARGO_BIN_EXE_sim"),
        "privacy" => env!("CARGO_BIN_EXE_privacy"),
        other => panic!("no binary {other}"),
    }
}

fn run(name: &str, args: &[&str]) -> Output {
    Command::new(bin(name)).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout_ok(name: &str, args: &[&str]) -> String {
    let out = run(name, args);
    assert!(
        out.status.success(),
        "{name} {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// A run of `n` consecutive free ports.
fn free_ports(n: u16) -> u16 {
    for _ in 0..50 {
        let base = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        if base > u16::MAX - n {
            continue;
        }
        if (base..base + n).all(|p| TcpListener::bind(("127.0.0.1", p)).is_ok()) {
            return base;
        }
    }
    panic!("no free port range");
}

struct Servers(Vec<(String, Child)>);

impl Servers {
    fn kill(&mut self, listen: &str) {
        let i = self.0.iter().position(|(l, _)| l == listen).expect("server");
        let (_, mut child) = self.0.remove(i);
        child.kill().unwrap();
        child.wait().unwrap();
    }
}

impl Drop for Servers {
    fn drop(&mut self) {
        for (_, c) in &mut self.0 {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn start(commands: &str) -> Servers {
    let mut servers = Servers(Vec::new());
    for line in commands.lines() {
        let mut words = line.split_whitespace();
        let name = words.next().unwrap();
        let args: Vec<&str> = words.collect();
        let listen = args[args.iter().position(|a| *a == "--listen").unwrap() + 1].to_string();
        let child = Command::new(bin(name))
            .args(&args)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .spawn()
            .unwrap();
        servers.0.push((listen, child));
    }
    let deadline = Instant::now() + Duration::from_secs(20);
    for (listen, _) in &servers.0 {
        while TcpStream::connect(listen).is_err() {
            assert!(Instant::now() < deadline, "{listen} never came up");
            thread::sleep(Duration::from_millis(50));
        }
    }
    servers
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn two_domains_over_tcp() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = dir.join("deploy");
    let spec = write(
        dir,
        "spec.json",
        r#"{"domains": [{"name": "a", "pca_replicas": 2}, {"name": "b"}], "seed": 5}"#,
    );
    // directory, then ltca, 2 pca replicas, ra for a and ltca, pca, ra for b
    let base = free_ports(8);
    let commands = stdout_ok(
        "vpki",
        &["init", "--spec", &spec, "--out", out.to_str().unwrap(), "--base-port", &base.to_string()],
    );
    assert_eq!(commands.lines().count(), 8);
    let mut servers = start(&commands);

    let trust = out.join("trust.bin").display().to_string();
    let book = out.join("authorities.json").display().to_string();
    let directory = format!("127.0.0.1:{base}");
    let vehicle = |script: &str, home: &str| {
        let path = write(dir, &format!("{home}-{}.json", script.len()), script);
        stdout_ok(
            "vehicle",
            &["--home", home, "--directory", &directory, "--trust", &trust, "--authorities", &book, "run-scenario", &path],
        )
    };

    let walk = vehicle(
        r#"{"subject": "car-1", "steps": [
            {"native": {"pca": "pca-a-1", "offset": 0, "length": 900, "count": 3}},
            {"roam": {"ltca": "ltca-b", "pca": "pca-b-1", "offset": 3600, "length": 600, "count": 2}},
            {"discover": {"domain": "b"}},
            {"status": {"pca": "pca-a-1"}}
        ]}"#,
        "ltca-a",
    );
    assert!(walk.contains("native pca-a-1: 3 pseudonyms"), "{walk}");
    assert!(walk.contains("roaming pca-b-1: 2 pseudonyms"), "{walk}");
    assert!(walk.contains("directory b: ltca-b LTCA"), "{walk}");
    assert!(walk.contains("Good"), "{walk}");
    let mine: Vec<&str> = walk
        .lines()
        .filter_map(|l| l.strip_prefix("pseudonym "))
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(mine.len(), 5);

    // Native and foreign pseudonyms both lead back to car-1 at ltca-a.
    let ra_a = format!("127.0.0.1:{}", base + 4);
    let ra_b = format!("127.0.0.1:{}", base + 7);
    let native = mine.iter().find(|p| p.starts_with("pca-a-1:")).unwrap();
    let foreign = mine.iter().find(|p| p.starts_with("pca-b-1:")).unwrap();
    for (p, ra, addr) in [(native, "ra-a", &ra_a), (foreign, "ra-b", &ra_b)] {
        let resolved = stdout_ok(
            "ra",
            &["resolve", "--pseudonym", p, "--revoke", "--connect", addr, "--ra", ra, "--trust", &trust],
        );
        assert!(resolved.contains("subject car-1, home ltca-a"), "{resolved}");
    }

    // Revocation is visible to other vehicles, by status query through the
    // balancer and on the CRL.
    let native_serial = native.rsplit_once(':').unwrap().1;
    let check = vehicle(
        &format!(
            r#"{{"subject": "car-2", "steps": [
                {{"native": {{"pca": "pca-a-1", "offset": 0, "length": 300, "count": 1}}}},
                {{"status": {{"pca": "pca-a-1", "serial": {native_serial}}}}},
                {{"crl": {{"pca": "pca-b-1"}}}}
            ]}}"#
        ),
        "ltca-a",
    );
    assert!(check.contains(&format!("status pca-a-1:{native_serial} Revoked")), "{check}");
    assert!(check.contains("crl pca-b-1: 2 revoked"), "{check}");

    // With one replica gone, the balancer still reaches the other.
    servers.kill(&format!("127.0.0.1:{}", base + 3));
    let after = vehicle(
        r#"{"subject": "car-3", "steps": [{"native": {"pca": "pca-a-1", "offset": 0, "length": 600, "count": 2}}]}"#,
        "ltca-a",
    );
    assert!(after.contains("native pca-a-1: 2 pseudonyms"), "{after}");

    // A second registration of the same subject is refused.
    let out = run(
        "vehicle",
        &[
            "--home",
            "ltca-a",
            "--directory",
            &directory,
            "--trust",
            &trust,
            "--authorities",
            &book,
            "run-scenario",
            &write(dir, "again.json", r#"{"subject": "car-1", "steps": []}"#),
        ],
    );
    assert!(!out.status.success());
}

#[test]
fn simulate_then_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let scenario = write(
        dir,
        "scenario.json",
        r#"{"seed": 3, "vehicles": 12, "requests_per_hour": 6, "pseudonyms_per_request": 10,
            "duration_seconds": 1800, "roaming_fraction": 0.3,
            "domains": [
                {"name": "a", "policy": {"ticket_interval_seconds": 600, "pseudonym_lifetime_seconds": 60}},
                {"name": "b", "policy": {"ticket_interval_seconds": 600, "pseudonym_lifetime_seconds": 60}}
            ]}"#,
    );
    let out = dir.join("run");
    let summary = stdout_ok("sim", &["run", &scenario, "--out", out.to_str().unwrap()]);
    assert!(summary.contains(" 0 violations"), "{summary}");
    for f in ["latencies.csv", "summary.json", "transcript.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report = dir.join("report.json");
    let (transcript, snapshots) = (out.join("transcript.json"), out.join("snapshots"));
    let args = [
        "analyze",
        "--transcript",
        transcript.to_str().unwrap(),
        "--snapshots",
        snapshots.to_str().unwrap(),
        "--collude",
        "LTCA_A,PCA_A",
        "--out",
        report.to_str().unwrap(),
    ];
    stdout_ok("privacy", &args);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(report["observations"].as_u64().unwrap() > 0);
    // Home LTCA and its PCAs together tie domain-a pseudonyms to ids.
    assert!(!report["coalition"]["id_links"].as_array().unwrap().is_empty());
    assert!(report["linkage"]["recall"].is_number());
}

#[test]
fn bad_invocations_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path(), "bad.json", r#"{"seed": 1, "vehicles": 0}"#);
    assert!(!run("sim", &["run", &bad, "--out", tmp.path().to_str().unwrap()]).status.success());
    assert!(!run("ra", &["--listen", "127.0.0.1:0"]).status.success());
    assert!(!run("ra", &["resolve", "--pseudonym", "no-serial"]).status.success());
}
