use std::fs;
use std::process::Command;

fn nvlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nvlab"))
}

#[test]
fn list_presets_names_every_preset() {
    let out = nvlab().arg("list-presets").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in nvlab::experiment::preset_names() {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn check_scan_preset_prints_the_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nvlab()
        .args(["check", "--preset", "dalang-scan", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("wellposed"));
    assert_eq!(text.lines().filter(|l| l.contains("heat") || l.contains("wave")).count(), 12);
}

#[test]
fn check_reports_smallness_time() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nvlab()
        .args(["check", "--preset", "heat1d-white-arctan", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("well-posed: true") && text.contains("smallness T0 ="), "{text}");
}

#[test]
fn invalid_config_exits_nonzero_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = nvlab::experiment::preset("heat1d-white-b0").unwrap();
    let text = cfg.to_toml().unwrap().replace("points = 256", "points = 100");
    let path = tmp.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let out = nvlab().args(["run", "--config"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert!(!tmp.path().join("runs").exists());

    let out = nvlab().args(["run", "--preset", "no-such-preset"]).output().unwrap();
    assert!(!out.status.success());
    let out = nvlab().args(["run", "--config", "x.toml", "--preset", "dalang-scan"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn tiny_run_finishes_and_writes_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nvlab()
        .args(["run", "--preset", "heat1d-white-b0", "--paths", "1000", "--workers", "1", "--seed", "3", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("empirical T0"), "{text}");
    let dirs: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "cache")
        .collect();
    assert_eq!(dirs.len(), 1);
    assert!(dirs[0].join("manifest.json").exists());
}
