use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../default.json")
}

fn geodrift(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geodrift"))
        .args(args)
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn wide_bump_is_rejected_as_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg: Value = serde_json::from_slice(&std::fs::read(default_config()).unwrap()).unwrap();
    cfg["perturbation"]["rho"] = Value::from(0.5);
    let path = tmp.path().join("wide.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    let out = geodrift(&["build-fermi"], &path, &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ρ < δ₀"), "{stderr}");
    let m = manifest(&tmp.path().join("out"));
    assert_eq!(m["stages"][0]["status"], "invalid");
}

#[test]
fn missing_config_file_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = geodrift(&["find-geodesic"], &tmp.path().join("absent.json"), tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn chain_outputs_are_reproducible_and_reused() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = geodrift(&["chain"], &default_config(), dir);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["chain.csv", "chain_oscillatory.csv", "homoclinic.json"] {
        let (x, y) = (std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
        assert!(!x.is_empty());
        assert!(x == y, "{name} differs between runs");
    }
    let m = manifest(&a);
    for f in m["files"].as_array().unwrap() {
        let len = std::fs::metadata(a.join(f["path"].as_str().unwrap())).unwrap().len();
        assert_eq!(f["bytes"].as_u64(), Some(len));
    }

    // A rerun loads the upstream artifacts instead of recomputing them.
    let before = std::fs::read(a.join("chain.csv")).unwrap();
    let out = geodrift(&["chain"], &default_config(), &a);
    assert!(out.status.success());
    let m = manifest(&a);
    let status = |name: &str| {
        m["stages"].as_array().unwrap().iter().find(|s| s["name"] == name).map(|s| s["status"].as_str().unwrap().to_string())
    };
    assert_eq!(status("find-homoclinic").as_deref(), Some("loaded"));
    assert_eq!(status("chain").as_deref(), Some("computed"));
    assert_eq!(std::fs::read(a.join("chain.csv")).unwrap(), before);
}
