use std::path::Path;
use std::process::{Command, Output};

use tomolin::bench::{read_sweep_csv, CSV_HEADER};

fn tomolin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tomolin"))
        .args(args)
        .env_remove("TOMOLIN_WORKERS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_SWEEP: &str = r#"{
  "experiment": "sweep-probes",
  "d": 2,
  "m": [6],
  "M": {"start": 4, "end": 10, "step": 2},
  "ensembles": 3,
  "trials": 20
}"#;

#[test]
fn sweep_writes_csv_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL_SWEEP);
    let out = dir.path().join("run.csv");
    let res = tomolin(&[
        "sweep-probes",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
        "--workers",
        "2",
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    let rows = read_sweep_csv(&out).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.probes).collect::<Vec<_>>(),
        vec![4, 6, 8, 10]
    );
    assert!(rows.iter().all(|r| r.seed == 7 && r.ensemble == 3));
    assert!(dir.path().join("run.ensembles.csv").exists());
    assert!(dir.path().join("run.meta.json").exists());
}

#[test]
fn resume_completes_a_truncated_run_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMALL_SWEEP);
    let full = dir.path().join("full.csv");
    let part = dir.path().join("part.csv");
    for out in [&full, &part] {
        let res = tomolin(&[
            "sweep-probes",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success());
    }
    let text = std::fs::read_to_string(&part).unwrap();
    let kept: Vec<&str> = text.lines().take(3).collect();
    std::fs::write(&part, format!("{}\n{}", kept.join("\n"), "2,3,6,10,20")).unwrap();
    let res = tomolin(&[
        "sweep-probes",
        "--config",
        &cfg,
        "--out",
        part.to_str().unwrap(),
        "--resume",
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&part).unwrap());
}

#[test]
fn invalid_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"experiment": "sweep-probes", "d": 1}"#,
    );
    assert_eq!(
        tomolin(&["sweep-probes", "--config", &bad]).status.code(),
        Some(1)
    );
    let unknown = write(dir.path(), "unknown.json", r#"{"no_such_field": 3}"#);
    assert_eq!(
        tomolin(&["sweep-probes", "--config", &unknown])
            .status
            .code(),
        Some(1)
    );
    let missing = dir.path().join("missing.json");
    assert_eq!(
        tomolin(&["sweep-probes", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
    let cfg = write(dir.path(), "c.json", SMALL_SWEEP);
    assert_eq!(
        tomolin(&["sweep-probes", "--config", &cfg, "--workers", "0"])
            .status
            .code(),
        Some(1)
    );
}

const SMALL_SELFTEST: &str = r#"{
  "experiment": "selftest",
  "selftest": {"matrices": 20, "gw_pairs": 5, "admissible_samples": 5, "setups": 5}
}"#;

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", SMALL_SELFTEST);
    let res = tomolin(&["selftest", "--config", &cfg]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stdout)
    );
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout
        .lines()
        .any(|l| l.starts_with("penrose") && l.contains("PASS")));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn corrupted_pinv_fails_selftest_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        r#"{"experiment": "selftest", "selftest": {"matrices": 20, "gw_pairs": 2, "admissible_samples": 2, "setups": 2, "pinv_rtol": 0.5}}"#,
    );
    let res = tomolin(&["selftest", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout
        .lines()
        .any(|l| l.starts_with("penrose") && l.contains("FAIL")));
}
