use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_prox-adc");

/// Loose termination that certifies at the first completed level.
const FAST: [&str; 6] = ["--eta-bar", "1", "--beta-bar", "1", "--k-bar", "0"];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn generate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run(&["generate", "--seed", "3", "--constrained", "--out", path(dir.path())]);
        assert_eq!(code(&out), 0);
        assert!(out.stderr.is_empty());
    }
    let name = "instance-constrained-3.json";
    let x = std::fs::read(a.path().join(name)).unwrap();
    let y = std::fs::read(b.path().join(name)).unwrap();
    assert_eq!(x, y);
    let v: serde_json::Value = serde_json::from_slice(&x).unwrap();
    assert_eq!(v["m1"], 8);
}

#[test]
fn certificate_round_trip_and_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = path(dir.path());
    let mut args = vec!["solve", "--seed", "7", "--out", out_dir];
    args.extend(FAST);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stderr.is_empty());
    assert!(String::from_utf8_lossy(&out.stdout).contains("Certified"));

    let cert = dir.path().join("certificate.json");
    let log = dir.path().join("log.csv");
    let ok = run(&["verify", path(&cert), path(&log)]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));

    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    let k0 = v["certificate"]["k0"].as_u64().unwrap();
    v["certificate"]["k0"] = serde_json::json!(k0 + 1);
    let bad = dir.path().join("tampered.json");
    std::fs::write(&bad, v.to_string()).unwrap();
    let rejected = run(&["verify", path(&bad), path(&log)]);
    assert_ne!(code(&rejected), 0);
    assert!(String::from_utf8_lossy(&rejected.stdout).contains("FAIL"));

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "Certified");
    assert_eq!(summary["k0"], k0);
}

#[test]
fn earlier_k0_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["solve", "--seed", "7", "--out", path(dir.path())];
    args.extend(["--eta-bar", "1", "--beta-bar", "1", "--k-bar", "2"]);
    assert_eq!(code(&run(&args)), 0);
    let cert = dir.path().join("certificate.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    let k0 = v["certificate"]["k0"].as_u64().unwrap();
    assert!(k0 >= 2);
    v["certificate"]["k0"] = serde_json::json!(k0 - 1);
    std::fs::write(&cert, v.to_string()).unwrap();
    let out = run(&["verify", path(&cert), path(&dir.path().join("log.csv"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_certificate_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--seed", "7", "--max-outer", "1", "--out", path(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("certificate.json").exists());
    assert!(dir.path().join("log.csv").exists());
}

#[test]
fn seeds_fan_out_into_directories() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["solve", "--seeds", "1,2", "--out", path(dir.path())];
    args.extend(FAST);
    let out = Command::new(BIN).args(&args).env("PROX_ADC_THREADS", "2").output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stderr.is_empty());
    let stdout = String::from_utf8_lossy(&out.stdout);
    for seed in [1, 2] {
        let sub = dir.path().join(format!("seed-{seed}"));
        assert!(stdout.contains(&format!("seed {seed}: Certified")));
        let check = run(&["verify", path(&sub.join("certificate.json")), path(&sub.join("log.csv"))]);
        assert_eq!(code(&check), 0);
    }
}

#[test]
fn instance_file_matches_seeded_solve() {
    let dir = tempfile::tempdir().unwrap();
    let root = path(dir.path());
    assert_eq!(code(&run(&["generate", "--seed", "4", "--out", root])), 0);
    let inst = dir.path().join("instance-unconstrained-4.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let mut from_file = vec!["solve", "--instance-file", path(&inst), "--out", path(&a)];
    from_file.extend(FAST);
    let mut seeded = vec!["solve", "--seed", "4", "--out", path(&b)];
    seeded.extend(FAST);
    assert_eq!(code(&run(&from_file)), 0);
    assert_eq!(code(&run(&seeded)), 0);
    let strip_wall = |p: &Path| {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(13);
                f.join(",")
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip_wall(&a.join("log.csv")), strip_wall(&b.join("log.csv")));
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{").unwrap();
    let out = run(&["verify", path(&junk), path(&junk)]);
    assert_eq!(code(&out), 4);
    assert!(!out.stderr.is_empty());
    let bad_env = Command::new(BIN)
        .args(["solve", "--seeds", "1", "--out", path(dir.path())])
        .env("PROX_ADC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&bad_env), 4);
}
