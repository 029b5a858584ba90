use std::path::Path;
use std::process::{Command, Output};

fn jeffreys(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jeffreys"))
        .args(args)
        .env("JEFFREYS_OUTPUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn negative_tau_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = jeffreys(&["experiment", "coin", "--tau", "-0.1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ConfigError"));
    assert!(!dir.path().join("coin").exists());
}

#[test]
fn unwritable_output_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = jeffreys(&["experiment", "coin", "--iters", "100", "--realizations", "1"], &blocker);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("IoError") && err.contains("file"), "{err}");
}

#[test]
fn coin_artifacts_are_thread_count_independent() {
    let one = tempfile::tempdir().unwrap();
    let eight = tempfile::tempdir().unwrap();
    let args = ["experiment", "coin", "--iters", "2000", "--realizations", "4"];
    let a = jeffreys(&[&["--threads", "1"], &args[..]].concat(), one.path());
    let b = jeffreys(&[&["--threads", "8"], &args[..]].concat(), eight.path());
    assert!(a.status.success() && b.status.success());
    let fa = csv_files(&one.path().join("coin"));
    assert_eq!(fa.len(), 5);
    assert_eq!(fa, csv_files(&eight.path().join("coin")));
    let header = String::from_utf8_lossy(&fa[1].1);
    assert!(header.starts_with("phi\n"));
    assert_eq!(header.lines().count(), 2001);
}

#[test]
fn metadata_records_defaults_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = jeffreys(&["experiment", "coin", "--iters", "500", "--realizations", "2"], dir.path());
    assert!(out.status.success());
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("coin/metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["bins"], 50);
    assert_eq!(meta["config"]["realizations"], 2);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(meta["blocks"][0]["chains"].as_array().unwrap().len(), 2);
}

#[test]
fn config_file_values_sit_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"iters": 300, "realizations": 3, "tau": 0.02}"#).unwrap();
    let out = jeffreys(
        &["experiment", "coin", "--config", cfg.to_str().unwrap(), "--realizations", "2"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("coin/metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["realizations"], 2);
    assert_eq!(meta["config"]["tau"], 0.02);
    assert_eq!(meta["config"]["sample_sizes"][0], 300);

    std::fs::write(&cfg, r#"{"iters": 300, "typo": 1}"#).unwrap();
    let out = jeffreys(&["experiment", "coin", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quick_validation_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = jeffreys(&["validate", "--quick"], dir.path());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn sample_writes_named_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = jeffreys(&["sample", "--model", "weibull", "--tau", "2", "--iters", "200"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("sample_weibull/samples.csv")).unwrap();
    assert!(text.starts_with("eta,gamma\n"));
    assert_eq!(text.lines().count(), 201);
}
