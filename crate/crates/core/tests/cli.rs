use std::path::Path;
use std::process::Command;

fn rwre() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rwre"))
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, r#"{"replicas": 150, "blocks": 80, "seed": 4}"#).unwrap();
    p
}

#[test]
fn unknown_experiment_exits_with_usage_error() {
    let out = rwre().arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"replica": 3}"#).unwrap();
    let out = rwre().args(["speed", "--config"]).arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = rwre().args(["speed", "--config"]).arg(dir.path().join("missing.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_schedule_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sched.json");
    std::fs::write(&p, r#"{"schedule": {"k_max": 6}}"#).unwrap();
    let out = rwre().args(["gaussian-t", "--config"]).arg(&p).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut files = Vec::new();
    for threads in ["1", "8"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let st = rwre()
            .args(["stable-et", "--threads", threads, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap()
            .status;
        assert!(st.code() == Some(0) || st.code() == Some(1));
        files.push((
            std::fs::read(out_dir.join("stable-et.csv")).unwrap(),
            std::fs::read(out_dir.join("metrics.csv")).unwrap(),
        ));
        assert!(out_dir.join("report.json").exists());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("o");
    rwre()
        .args(["stable-et", "--seed", "99", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 99);
    assert_eq!(report["config"]["replicas"], 150);
    assert_eq!(report["experiment"], "stable-et");
}
