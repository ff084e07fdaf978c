use std::process::{Command, Output};

fn mgvi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgvi")).args(args).output().unwrap()
}

#[test]
fn list_presets_names_every_preset() {
    let out = mgvi(&["list-presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in mgvi::problems::preset_names() {
        assert!(text.contains(name), "{name} missing from {text}");
    }
}

#[test]
fn bad_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[mgvi]\nglobal_iterations = 3\nwarp_factor = 9\n").unwrap();
    let out = mgvi(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("warp_factor"), "{err}");
}

#[test]
fn run_writes_a_report_that_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = mgvi(&["run", "--preset", "linear_gaussian", "--seed", "2", "--out", first.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let second = dir.path().join("second");
    let config = first.join("config.toml");
    let mut text = std::fs::read_to_string(&config).unwrap();
    text = text.replace(first.to_str().unwrap(), second.to_str().unwrap());
    std::fs::write(&config, text).unwrap();
    let out = mgvi(&["run", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(first.join("report.toml")).unwrap(),
        std::fs::read(second.join("report.toml")).unwrap()
    );
}

#[test]
fn compare_refuses_different_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.toml");
    let b = dir.path().join("b.toml");
    std::fs::write(&a, "preset = \"zero_data\"\nseed = 1\n").unwrap();
    std::fs::write(&b, "preset = \"zero_data\"\nseed = 2\nmethod = \"map\"\n").unwrap();
    let out = mgvi(&["compare", "--config", a.to_str().unwrap(), "--config", b.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_self_test_fails_and_default_passes() {
    let out = mgvi(&["oracle-check", "--draws", "2000", "--self-test"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("FAIL"));
    let out = mgvi(&["oracle-check", "--draws", "2000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
