use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use occutrend::experiment::write_synthetic_project;
use occutrend::manifest::RunManifest;
use occutrend_core::synth::SynthConfig;

fn occutrend(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occutrend"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn project() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = write_synthetic_project(dir.path(), &SynthConfig::default()).unwrap();
    (dir, config)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stage_line<'a>(out: &'a str, stage: &str) -> &'a str {
    out.lines()
        .find(|l| l.split_whitespace().next() == Some(stage))
        .unwrap_or_else(|| panic!("no `{stage}` line in {out}"))
}

#[test]
fn evaluate_before_training_is_a_missing_artifact() {
    let (_dir, config) = project();
    let cfg = config.to_str().unwrap();
    let o = occutrend(&["--config", cfg, "evaluate"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing artifact"));
    assert_eq!(occutrend(&["--config", cfg, "train"]).status.code(), Some(4));
}

#[test]
fn config_errors_exit_with_two() {
    let (dir, config) = project();
    let o = occutrend(&["--config", dir.path().join("absent.toml").to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(2));
    let text = std::fs::read_to_string(&config).unwrap().replace("n_trees = 200", "n_trees = \"many\"");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, text).unwrap();
    assert_eq!(occutrend(&["--config", bad.to_str().unwrap(), "ingest"]).status.code(), Some(2));
    assert_eq!(occutrend(&["ingest"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_three() {
    let (dir, config) = project();
    std::fs::write(dir.path().join("meters.csv"), "building_id,meter,timestamp,meter_reading\n").unwrap();
    let o = occutrend(&["--config", config.to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

fn rewrite_one_reading(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let line = &mut lines[1];
    let comma = line.rfind(',').unwrap();
    let value: f64 = line[comma + 1..].parse().unwrap();
    *line = format!("{},{}", &line[..comma], value + 1.0);
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn cache_follows_content_not_timestamps() {
    let (dir, config) = project();
    let cfg = config.to_str().unwrap();
    let run = |stage: &str| {
        let o = occutrend(&["--config", cfg, stage]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    assert!(stage_line(&run("ingest"), "ingest").contains("done"));
    assert!(stage_line(&run("screen"), "screen").contains("done"));
    assert!(stage_line(&run("ingest"), "ingest").contains("up to date"));

    // a touch keeps the bytes, so nothing reruns
    let meters = dir.path().join("meters.csv");
    let later = std::time::SystemTime::now() + std::time::Duration::from_secs(3600);
    std::fs::File::options()
        .write(true)
        .open(&meters)
        .unwrap()
        .set_modified(later)
        .unwrap();
    assert!(stage_line(&run("ingest"), "ingest").contains("up to date"));

    rewrite_one_reading(&meters);
    assert!(stage_line(&run("ingest"), "ingest").contains("done"));
    // screening consumes the new dataset hash
    assert!(stage_line(&run("screen"), "screen").contains("done"));

    // a tampered output forces a rerun too
    let report = dir.path().join("run/ingest/cleaning_report.csv");
    std::fs::write(&report, "tampered\n").unwrap();
    assert!(stage_line(&run("ingest"), "ingest").contains("done"));

    let manifest = RunManifest::load(&dir.path().join("run/ingest")).unwrap();
    assert_eq!(manifest.stage, "ingest");
    assert_eq!(manifest.counts["meters"], 10);
    assert!(manifest.inputs.contains_key("meters"));
    assert!(dir.path().join("run/config.toml").is_file());
    assert!(!dir.path().join("run/.lock").exists());
}

#[test]
fn settings_changes_rerun_only_affected_stages() {
    let (dir, config) = project();
    let cfg = config.to_str().unwrap();
    assert!(occutrend(&["--config", cfg, "screen"]).status.code() == Some(4));
    assert!(occutrend(&["--config", cfg, "ingest"]).status.success());
    assert!(occutrend(&["--config", cfg, "screen"]).status.success());
    let text = std::fs::read_to_string(&config).unwrap() + "\n[screening]\nmin_overlap_days = 200\n";
    let changed = dir.path().join("changed.toml");
    std::fs::write(&changed, text).unwrap();
    let out = stdout(&occutrend(&["--config", changed.to_str().unwrap(), "ingest"]));
    assert!(stage_line(&out, "ingest").contains("up to date"));
    let out = stdout(&occutrend(&["--config", changed.to_str().unwrap(), "screen"]));
    assert!(stage_line(&out, "screen").contains("done"));
}

#[test]
fn locked_run_directory_is_refused() {
    let (dir, config) = project();
    std::fs::create_dir_all(dir.path().join("run")).unwrap();
    std::fs::write(dir.path().join("run/.lock"), "1\n").unwrap();
    let o = occutrend(&["--config", config.to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(".lock"));
}

#[test]
fn synth_writes_a_runnable_project() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("corpus");
    let o = occutrend(&["synth", "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success());
    for f in ["config.toml", "meters.csv", "metadata.csv", "weather.csv", "trends.csv", "topics.csv", "day_types.csv", "site_geo.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let o = occutrend(&["--config", out.join("config.toml").to_str().unwrap(), "--out", dir.path().join("elsewhere").to_str().unwrap(), "ingest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("elsewhere/ingest/dataset.json").is_file());
    assert_eq!(occutrend(&["synth"]).status.code(), Some(2));
}
