//! Black-box tests of the `gwspeed` binary: exit codes, artifact
//! integrity, and config validation.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn gwspeed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwspeed"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[walk]\nbeta = 2.0\n[distributions]\ndist = \"2:1\"\n",
    );
    let out = gwspeed(&["speed", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("seed"), "stderr: {msg}");
    // the same run with --seed succeeds
    let out_dir = dir.path().join("out");
    let out = gwspeed(&[
        "speed",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\nwalk_speed = 3\n");
    let out = gwspeed(&["speed", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_method_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 1\n[walk]\nbeta = 2.0\n[distributions]\ndist = \"2:1\"\n[speed]\nmethods = [\"oracle\"]\n",
    );
    let out = gwspeed(&["speed", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("oracle"));
}

#[test]
fn incompatible_method_bias_combos_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    // escape_ratio needs beta > 1
    let cfg = write_config(
        dir.path(),
        "seed = 1\n[walk]\nbeta = 1.0\n[distributions]\ndist = \"2:1\"\n[speed]\nmethods = [\"escape_ratio\"]\n",
    );
    assert_eq!(gwspeed(&["speed", "--config", &cfg]).status.code(), Some(2));
    // closed_form needs a point mass
    let cfg = write_config(
        dir.path(),
        "seed = 1\n[walk]\nbeta = 2.0\n[distributions]\ndist = \"1:0.5,2:0.5\"\n[speed]\nmethods = [\"closed_form\"]\n",
    );
    assert_eq!(gwspeed(&["speed", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn non_dominating_pair_fails_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 1\n[walk]\nbeta = 8.0\n[distributions]\np1 = \"2:1\"\np2 = \"2:1\"\n",
    );
    let out = gwspeed(&["compare", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn manifest_digests_match_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 3\n[walk]\nbetas = [2.0, 4.0]\n[distributions]\ndist = \"2:1\"\n[samples]\nwalks = 8\nsteps = 500\nescape_samples = 50\n",
    );
    let out_dir = dir.path().join("out");
    let out = gwspeed(&[
        "speed",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "speed");
    assert_eq!(manifest["seed"], 3);
    let files = manifest["files"].as_array().unwrap();
    let names: Vec<&str> = files.iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"speed.csv") && names.contains(&"speed.json"));
    for f in files {
        let body = fs::read(out_dir.join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap(), body.len() as u64);
        let digest = Sha256::digest(&body);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(
            f["sha256"].as_str().unwrap(),
            hex,
            "digest of {}",
            f["name"]
        );
    }
}

#[test]
fn coupling_csv_round_trips_through_compare() {
    let dir = tempfile::tempdir().unwrap();
    let coupling_path = dir.path().join("coupling.csv");
    fs::write(&coupling_path, "z1,z2,prob\n3,2,1.0\n").unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "seed = 4\n[walk]\nbeta = 8.0\n[distributions]\np1 = \"3:1\"\np2 = \"2:1\"\ncoupling = {:?}\n[samples]\nblocks = 500\n",
            coupling_path.to_str().unwrap()
        ),
    );
    let out_dir = dir.path().join("out");
    let out = gwspeed(&[
        "compare",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("compare.csv").exists());
}

#[test]
fn ell_check_reports_a_failing_pair_without_erroring() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 5\n[distributions]\np1 = \"2:0.5,5:0.5\"\np2 = \"1:0.5,4:0.5\"\n[ell]\nell = 2\n",
    );
    let out_dir = dir.path().join("out");
    let out = gwspeed(&[
        "ell-check",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("ell.json")).unwrap()).unwrap();
    assert_eq!(summary["holds"], false);
    assert_eq!(summary["draws"], 0);
}

#[test]
fn workers_env_var_is_honored_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 6\n[walk]\nbeta = 2.0\n[distributions]\ndist = \"2:1\"\n[samples]\nwalks = 4\nsteps = 200\nescape_samples = 20\n",
    );
    let out = Command::new(env!("CARGO_BIN_EXE_gwspeed"))
        .args(["speed", "--config", &cfg])
        .env("GWSPEED_WORKERS", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out_dir = dir.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_gwspeed"))
        .args([
            "speed",
            "--config",
            &cfg,
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .env("GWSPEED_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn audit_command_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 7\n[audit]\nz_max = 6\nbetas = [2.0]\nexact_z_max = 4\nexact_betas = [[2, 1]]\n",
    );
    let out_dir = dir.path().join("out");
    let out = gwspeed(&[
        "coupling-audit",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("audit.json")).unwrap()).unwrap();
    assert!(report["float"]["tables_checked"].as_u64().unwrap() > 0);
    assert!(report["float"]["max_marginal_err"].as_f64().unwrap() < 1e-12);
}
