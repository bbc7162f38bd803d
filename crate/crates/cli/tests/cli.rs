use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sbp_dp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbp-dp"))
        .args(args)
        .env("SBP_DP_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const CONVERGE: &str = r#"{
  "experiment": "converge",
  "operator": { "kind": "degree_preserving", "p": 2 },
  "mesh": { "pattern": { "type": "quadrant", "n1": 10, "n2": 12 }, "levels": [1, 2] },
  "t_final": 0.05
}"#;

#[test]
fn converge_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", CONVERGE);
    let mut csv = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = sbp_dp(&["converge", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("manifest.json").exists());
        csv.push(fs::read(out.join("convergence.csv")).unwrap());
    }
    assert_eq!(csv[0], csv[1]);
    let text = String::from_utf8(csv.remove(0)).unwrap();
    assert!(text.starts_with("dofs,l2,eoc\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn build_operator_writes_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "op.json",
        r#"{ "experiment": "build-operator", "operator": { "kind": "degree_preserving", "p": 2, "N": 12 } }"#,
    );
    let out = dir.path().join("out");
    let o = sbp_dp(&["build-operator", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"config_hash\""));
}

#[test]
fn subcommand_mismatch_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", CONVERGE);
    let o = sbp_dp(&["spectrum", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in [
        ("unknown.json", r#"{ "experiment": "converge", "operator": { "kind": "classical", "p": 3 }, "bogus": 1 }"#),
        ("nomesh.json", r#"{ "experiment": "converge", "operator": { "kind": "classical", "p": 3 } }"#),
        (
            "odd.json",
            r#"{ "experiment": "converge", "operator": { "kind": "classical", "p": 3 },
                 "mesh": { "pattern": { "type": "quadrant", "n1": 22, "n2": 24 }, "levels": [0, 1] } }"#,
        ),
    ] {
        let cfg = write(dir.path(), name, body);
        let o = sbp_dp(&["converge", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn infeasible_construction_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "op.json",
        r#"{ "experiment": "build-operator", "operator": { "kind": "degree_preserving", "p": 2, "N": 8 } }"#,
    );
    let o = sbp_dp(&["build-operator", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
