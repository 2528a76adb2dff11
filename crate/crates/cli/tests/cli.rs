use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_defragsim"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn validate_accepts_shipped_configs() {
    for name in ["desk.toml", "smoke.toml"] {
        let out = bin().arg("validate").arg(config(name)).output().unwrap();
        assert_eq!(code(&out), 0, "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok:"));
    }
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = fs::read_to_string(config("smoke.toml")).unwrap().replace("racks = 10", "racks = 10\nrakcs = 3");
    fs::write(&bad, text).unwrap();
    assert_eq!(code(&bin().arg("validate").arg(&bad).output().unwrap()), 2);
    assert_eq!(code(&bin().arg("validate").arg(dir.path().join("missing.toml")).output().unwrap()), 2);
    let bad_axis = bin().args(["sweep", "--axis", "colour"]).arg(config("smoke.toml")).output().unwrap();
    assert_ne!(code(&bad_axis), 0);
}

#[test]
fn oracle_agrees_on_a_small_instance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.json");
    // two jobs split across three racks of capacity 2, threshold 1
    let inst = serde_json::json!({
        "racks": 3,
        "capacity": 2,
        "threshold": 1,
        "jobs": [
            {"id": 0, "size": 2, "weight": 1, "initial": [1, 1, 0]},
            {"id": 1, "size": 2, "weight": 1, "initial": [0, 1, 1]},
        ],
    });
    fs::write(&path, inst.to_string()).unwrap();
    let out = bin().arg("oracle").arg(&path).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("solver: 1 moves") && stdout.contains("exhaustive: 1 moves"), "{stdout}");
}

#[test]
fn run_writes_per_run_tables_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("run")
        .arg(config("smoke.toml"))
        .args(["--algorithms", "monkeytree,ecmp", "--event-log", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let agg = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3, "{agg}");
    for alg in ["monkeytree", "ecmp"] {
        let run = dir.path().join(alg).join("load-0.90").join("seed-7");
        for f in ["jobs.csv", "defrag.csv", "migrations.csv", "solver.csv", "fragmentation.csv", "summary.json", "events.log"] {
            assert!(run.join(f).exists(), "{alg}: missing {f}");
        }
    }
}
