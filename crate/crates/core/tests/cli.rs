use std::process::Command;

fn strata() -> Command {
    Command::new(env!("CARGO_BIN_EXE_strata"))
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(strata().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(strata().arg("frobnicate").output().unwrap().status.code(), Some(2));
    assert_eq!(strata().args(["bench", "--ablate", "nothing"]).output().unwrap().status.code(), Some(2));
}

#[test]
fn bad_config_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "colour=red\n").unwrap();
    let out = strata()
        .arg("selftest")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let out = strata().arg("selftest").arg("--config").arg(dir.path().join("missing.conf")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selftest_writes_manifest_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = strata().args(["selftest", "--seed", "5", "--out"]).arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("preservation checks passed: 6/6"));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("# command=selftest"));
    assert!(manifest.contains("seed=5\n"));
    let csv = std::fs::read_to_string(out_dir.join("selftest.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    let stress = std::fs::read_to_string(out_dir.join("stress.csv")).unwrap();
    assert!(stress.starts_with("trial,violations\n"));
    assert!(stress.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn ablated_selftest_fails_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = strata()
        .args(["selftest", "--ablate", "cas", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
