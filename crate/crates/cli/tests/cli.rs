use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ecosystem")
}

fn ecoscen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecoscen"))
        .args(args)
        .output()
        .unwrap()
}

fn with_config(out: &Path, args: &[&str]) -> Output {
    let cfg = fixture().join("ecoscen.toml");
    let mut all = vec![
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    all.extend_from_slice(args);
    ecoscen(&all)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_dataset_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ecoscen(&[
        "--seed",
        "1",
        "--data-dir",
        tmp.path().join("nope").to_str().unwrap(),
        "ingest",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data_dir"), "{}", stderr(&o));
}

#[test]
fn missing_seed_is_a_config_error() {
    let o = ecoscen(&["--data-dir", fixture().to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\ndata_dri = \".\"\n").unwrap();
    let o = ecoscen(&["--config", cfg.to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("data_dri"));
}

#[test]
fn remote_mode_without_key_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ecoscen"))
        .env_remove("ECOSCEN_API_KEY")
        .args(["--config", fixture().join("ecoscen.toml").to_str().unwrap()])
        .args([
            "--out",
            tmp.path().to_str().unwrap(),
            "--llm-mode",
            "remote",
            "ingest",
        ])
        .output()
        .unwrap();
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("ECOSCEN_API_KEY"));
}

#[test]
fn ingest_network_backbone_write_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in [
        &["ingest"][..],
        &["network"],
        &["backbone", "--method", "gt", "--method", "pla"],
    ] {
        let o = with_config(tmp.path(), cmd);
        assert!(o.status.success(), "{cmd:?}: {}", stderr(&o));
    }
    let out = tmp.path();
    let demand = std::fs::read_to_string(out.join("ingest/demand.csv")).unwrap();
    assert_eq!(demand.lines().next(), Some("category,year,calls"));
    assert_eq!(demand.lines().count(), 1 + 4 * 5);
    for y in 2010..2015 {
        assert!(out.join(format!("network/{y}.edges")).is_file());
        assert!(out.join(format!("backbone/gt/{y}.edges")).is_file());
        assert!(out.join(format!("backbone/pla/{y}.edges")).is_file());
    }
    assert!(!out.join("backbone/hss").exists());

    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("network/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["command"], "network");
    assert_eq!(m["seed"], 20_240_601);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let artifacts: Vec<&str> = m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap())
        .collect();
    assert!(artifacts.contains(&"2010.edges"));
    assert!(!artifacts.contains(&"manifest.json"));
}

#[test]
fn synth_writes_a_runnable_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    let o = ecoscen(&[
        "--seed",
        "9",
        "--out",
        dir.to_str().unwrap(),
        "synth",
        "--apis",
        "40",
        "--mashups",
        "60",
        "--years",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["apis.csv", "mashups.csv", "prompts.txt", "ecoscen.toml"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let cfg = dir.join("ecoscen.toml");
    let o = ecoscen(&["--config", cfg.to_str().unwrap(), "network"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("out/network/manifest.json").is_file());
}
