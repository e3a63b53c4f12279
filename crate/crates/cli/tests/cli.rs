use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("beamlab-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn beamlab(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_beamlab"));
    c.args(args).env_remove("BEAMLAB_OUT");
    if let Some(d) = env_out {
        c.env("BEAMLAB_OUT", d);
    }
    c.output().unwrap()
}

#[test]
fn weyl_runs_are_byte_identical() {
    let (a, b) = (scratch("a"), scratch("b"));
    for d in [&a, &b] {
        let o = beamlab(&["weyl", "--out", d.to_str().unwrap(), "--h", "0.125,0.0625"], None);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("PASS weyl_band"));
    }
    for f in ["weyl.csv", "report.json"] {
        assert_eq!(fs::read(a.join("weyl").join(f)).unwrap(), fs::read(b.join("weyl").join(f)).unwrap());
    }
}

#[test]
fn usage_errors_exit_two() {
    let d = scratch("usage");
    let empty = d.join("empty.json");
    fs::write(&empty, "").unwrap();
    assert_eq!(beamlab(&["--config", empty.to_str().unwrap()], None).status.code(), Some(2));
    fs::write(&empty, "{}").unwrap();
    assert_eq!(beamlab(&["--config", empty.to_str().unwrap()], None).status.code(), Some(2));
    assert_eq!(beamlab(&[], None).status.code(), Some(2));
    let bad = d.join("bad.json");
    fs::write(&bad, r#"{"run": {"weyl": {"band": 1, "typo": 3}}}"#).unwrap();
    let o = beamlab(&["--config", bad.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("typo"));
}

#[test]
fn config_file_overrides_flags_and_env_overrides_out() {
    let d = scratch("merge");
    let cfg = d.join("cfg.json");
    fs::write(&cfg, r#"{"seed": 7, "run": {"weyl": {"h": [0.125]}}}"#).unwrap();
    let env_dir = d.join("env");
    let o = beamlab(
        &["--config", cfg.to_str().unwrap(), "--out", d.join("flag").to_str().unwrap(), "weyl", "--h", "0.5,0.25", "--band", "5"],
        Some(&env_dir),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!d.join("flag").exists());
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(env_dir.join("weyl").join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["config"]["run"]["weyl"]["h"], serde_json::json!([0.125]));
    assert_eq!(report["config"]["run"]["weyl"]["band"], 5.0);
}
