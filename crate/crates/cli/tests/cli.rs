use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn smvlc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smvlc")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const MI: &str = r#"{
  "kind": "mi-sweep",
  "scenario": { "gains": [0.17e-5, 0.46e-5, 0.919e-5, 0.959e-5, 1.0e-5] },
  "k": 5,
  "noise": { "sigma_sq_dbm": -104, "varsigma": 0 },
  "sweep": { "variable": "snr_db", "start": -10, "stop": 50, "points": 61 }
}"#;

const BER: &str = r#"{
  "kind": "ber-sweep",
  "scenario": { "gains": [0.08, 0.15, 0.13, 0.25, 0.01, 0.22] },
  "k": 4,
  "noise": { "sigma_sq_dbm": -30, "varsigma": 0 },
  "sweep": { "variable": "pt_dbm", "start": 0, "stop": 6, "points": 3 },
  "n_bits": 200000,
  "seed": 7
}"#;

#[test]
fn validate_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.json", MI);
    let out = smvlc(&["validate", &good]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = write(dir.path(), "bad.json", &MI.replace("\"sigma_sq_dbm\": -104, ", ""));
    let out = smvlc(&["validate", &bad]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("noise.sigma_sq_dbm"));

    let broken = write(dir.path(), "broken.json", "{\n \"kind\": \"mi-sweep\",\n \"oops\": 3\n}");
    let out = smvlc(&["run", &broken]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn infeasible_k_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "k.json", &MI.replace("\"k\": 5", "\"k\": 2"));
    let out = smvlc(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("q ≥ 1"));
}

#[test]
fn mi_sweep_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "mi.json", MI);
    let out = smvlc(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 62);
    assert!(csv.starts_with("snr_db,mi_exact,mi_lower,mi_hi_limit,mi_lo_limit\n"));
}

#[test]
fn ber_sweep_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "ber.json", BER);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (path, threads) in [(&a, "1"), (&b, "4")] {
        let out = smvlc(&["run", &cfg, "--out", path.to_str().unwrap(), "--threads", threads]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (a, b) = (fs::read(a).unwrap(), fs::read(b).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("pt_dbm,ber_adaptive,ber_fixed,ci_adaptive,ci_fixed\n"));
    assert_eq!(text.lines().count(), 4);

    let c = dir.path().join("c.csv");
    smvlc(&["run", &cfg, "--seed", "8", "--out", c.to_str().unwrap()]);
    assert_ne!(fs::read(c).unwrap(), b);
}
