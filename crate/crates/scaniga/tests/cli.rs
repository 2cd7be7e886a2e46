use std::process::Command;

fn scaniga() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scaniga"))
}

#[test]
fn kernel_table_has_six_rows() {
    let out = scaniga().arg("analyze-kernel").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().nth(1).unwrap().ends_with("true"));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "input = phantom:bridge\ndegree = 7\n").unwrap();
    let out = scaniga()
        .args(["segment", "--config", cfg.to_str().unwrap(), "--degree", "2", "--output"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/report.json").is_file());
}

#[test]
fn errors_exit_nonzero_with_stage() {
    let out = scaniga().args(["ingest-info", "/nonexistent.voxel"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[ingest]"));
    let out = scaniga().args(["segment", "phantom:bridge", "--set", "colour=red"]).output().unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("[config]"));
}
