use std::path::Path;
use std::process::{Command, Output};

use hyplab::cli::RunManifest;
use hyplab::qe::{flat_mesh, random_basis_eigendata};
use serde_json::Value;

fn hyplab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyplab")).args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn roundtrip_example() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hyplab(&["selberg", "roundtrip", "--kernel", "disc", "--t", "1"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&tmp.path().join("roundtrip.json"));
    assert!(r["sup_error"].as_f64().unwrap() <= 1e-5);
    let m = manifest(tmp.path());
    assert_eq!(m.command, "selberg roundtrip");
    assert_eq!(m.config_hash.len(), 64);
    for f in &m.outputs {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn spectral_action_example() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hyplab(&["spectral-action", "--interval", "1,2", "--T", "50"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&tmp.path().join("spectral_action.json"));
    assert!(v["c_I"].as_f64().unwrap() > 0.0);
    assert!(v["k0"].as_u64().unwrap() <= 50);
    assert!(v["C_I_estimate"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(tmp.path().join("average.csv")).unwrap();
    assert!(csv.starts_with("s,T,avg\n"));
    assert!(!csv.contains('\r'));
}

#[test]
fn qe_example() {
    let tmp = tempfile::tempdir().unwrap();
    let (pts, w) = flat_mesh(8, 2.0);
    let spectrum = (0..20).map(|j| if j == 0 { 0.0 } else { 1.0 + 0.2 * j as f64 }).collect();
    let data = random_basis_eigendata(pts, w, spectrum, 3).unwrap();
    let eigen = tmp.path().join("data.json");
    std::fs::write(&eigen, data.to_json()).unwrap();
    let cell = tmp.path().join("cellfile.json");
    std::fs::write(&cell, r#"{"kind": "cell", "x": [0.0, 0.5], "y": [1.0, 1.5]}"#).unwrap();
    let out_dir = tmp.path().join("out");
    let out = hyplab(
        &["qe", "--eigen", eigen.to_str().unwrap(), "--observable", cell.to_str().unwrap(), "--interval", "1.25,4.25"],
        &out_dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&out_dir.join("qe.json"));
    let n = r["count"].as_u64().unwrap();
    assert!(n > 0);
    let v = r["variance_sum"].as_f64().unwrap();
    assert!(v >= 0.0);
    assert!((r["normalized"].as_f64().unwrap() - v / n as f64).abs() < 1e-15);
    let terms = std::fs::read_to_string(out_dir.join("qe_terms.csv")).unwrap();
    assert_eq!(terms.lines().count() as u64, n + 1);
}

#[test]
fn usage_errors_exit_two_and_name_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hyplab(&["spectral-action", "--interval", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--interval"));
    let out = hyplab(&["group", "ball", "--group", "nowhere.json", "--radius", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--group"));
    let out = hyplab(&["trace", "weyl", "--function", "cubic:1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_hyplab"))
        .args(["geom-check", "--n", "10", "--out"])
        .arg(tmp.path())
        .env("HYPLAB_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("manifest.json").exists());
}

#[test]
fn numerical_failure_exits_one_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hyplab(&["selberg", "roundtrip", "--band", "6", "--tol", "1e-12"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let diag = json(&tmp.path().join("error.json"));
    assert!(diag["error"].as_str().unwrap().contains("BandTooSmall"));
    assert!(!tmp.path().join("manifest.json").exists());
}

#[test]
fn threads_flag_and_env_give_identical_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(hyplab(&["propagator", "lens-volume", "--n", "2000", "--threads", "1"], &a).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_hyplab"))
        .args(["propagator", "lens-volume", "--n", "2000", "--out"])
        .arg(&b)
        .env("HYPLAB_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(a.join("lens.csv")).unwrap(), std::fs::read(b.join("lens.csv")).unwrap());
    assert_eq!(manifest(&a).config_hash, manifest(&b).config_hash);
}
