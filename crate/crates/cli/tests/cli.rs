//! End-to-end tests of the slopelab binary: output formats, determinism,
//! exit codes, and the manifest round trip.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slopelab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn slopelab")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/three_arm_synthetic.csv")
}

#[test]
fn truth_matches_reference_slopes() {
    let out = run(&["truth"]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "setting,arm_slope_trt,arm_slope_ctl,difference"
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    let table = [
        [-1.50, -2.25, 0.75],
        [-1.39, -2.14, 0.75],
        [-1.50, -2.25, 0.75],
        [-1.25, -2.50, 1.25],
    ];
    for (row, want) in rows.iter().zip(table) {
        for (got, expect) in row.iter().zip(want) {
            assert!(
                (got - expect).abs() <= 0.0055,
                "{got} vs {expect} in {row:?}"
            );
        }
    }
}

#[test]
fn truth_chronic_window_for_negative_acute_setting() {
    let out = run(&["truth", "--t1", "0.5", "--t2", "3"]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    let s3: Vec<&str> = text
        .lines()
        .find(|l| l.starts_with("3,"))
        .unwrap()
        .split(',')
        .collect();
    let diff: f64 = s3[3].parse().unwrap();
    assert!((diff - 1.25).abs() < 1e-6);
}

#[test]
fn truth_empty_interval_is_usage_error() {
    let out = run(&["truth", "--t1", "1", "--t2", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_counts_and_determinism() {
    let out = run(&[
        "generate",
        "--setting",
        "1",
        "--n-per-arm",
        "2",
        "--seed",
        "7",
        "--censoring",
        "none",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 7);

    let again = run(&[
        "generate", "--setting", "1", "--n-per-arm", "2", "--seed", "7",
        "--censoring", "none",
    ]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn generate_rejects_bad_setting() {
    let out = run(&["generate", "--setting", "5", "--n-per-arm", "2", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_noiseless_linear_data_gives_exact_effect() {
    use slopelab_core::simgen::{generate, GenConfig};
    use slopelab_core::trajectories::Setting;

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("noiseless.csv");
    let ds = generate(&GenConfig::noiseless(Setting::S1, 5, 1)).unwrap();
    let mut buf = Vec::new();
    ds.to_csv_writer(&mut buf).unwrap();
    fs::write(&csv, buf).unwrap();

    let out = run(&["fit", "--data", csv.to_str().unwrap(), "--method", "lme"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout_str(&out);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let diff: f64 = row[6].parse().unwrap();
    assert!((diff - 0.75).abs() < 1e-6);
    assert_eq!(row[10], "true");
}

#[test]
fn fit_two_slope_requires_tau0() {
    let out = run(&[
        "fit",
        "--data",
        fixture_path().to_str().unwrap(),
        "--method",
        "two-slope",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_three_arm_fixture_emits_two_contrast_rows() {
    let out = run(&[
        "fit",
        "--data",
        fixture_path().to_str().unwrap(),
        "--method",
        "mmrm",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout_str(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("mmrm,1,"));
    assert!(rows[1].starts_with("mmrm,2,"));
}

#[test]
fn fit_missing_file_is_input_error() {
    let out = run(&["fit", "--data", "/nonexistent.csv", "--method", "lm"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn study_runs_manifest_round_trip_and_worker_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("study.toml");
    fs::write(
        &config_path,
        "settings = [1]\nmethods = [\"lm\", \"two-stage\"]\n\
         n_per_arm = 30\nn_reps = 12\nmaster_seed = 4242\nworkers = 2\n",
    )
    .unwrap();
    let out_path = dir.path().join("summary.csv");

    let out = bin()
        .args([
            "study",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let summary = fs::read_to_string(&out_path).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2, "one row per method");

    // Worker override must not change the bytes.
    let out_b = dir.path().join("summary_b.csv");
    let status = bin()
        .args([
            "study",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out_b.to_str().unwrap(),
        ])
        .env("SLOPELAB_WORKERS", "8")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(summary, fs::read_to_string(&out_b).unwrap());

    // The manifest embeds the resolved config; re-running from it
    // reproduces the summary bytes.
    let manifest_path = dir.path().join("summary.manifest.toml");
    let manifest = fs::read_to_string(&manifest_path).unwrap();
    let config_section = manifest.split("[config]").nth(1).unwrap();
    let config_section = config_section.split("[[rows]]").next().unwrap();
    let rerun_config = dir.path().join("rerun.toml");
    fs::write(&rerun_config, config_section).unwrap();
    let out_c = dir.path().join("summary_c.csv");
    let status = bin()
        .args([
            "study",
            "--config",
            rerun_config.to_str().unwrap(),
            "--out",
            out_c.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(summary, fs::read_to_string(&out_c).unwrap());
}

#[test]
fn study_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.toml");
    fs::write(&config_path, "n_rep = 10\n").unwrap();
    let out = bin()
        .args(["study", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("n_rep"), "error names the offending key: {err}");
}

#[test]
fn study_dump_replicates_has_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("study.toml");
    fs::write(
        &config_path,
        "settings = [2]\nmethods = [\"lm\"]\nn_per_arm = 20\nn_reps = 6\nmaster_seed = 1\nworkers = 1\n",
    )
    .unwrap();
    let dump_path = dir.path().join("reps.csv");
    let out_path = dir.path().join("summary.csv");
    let status = bin()
        .args([
            "study",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
            "--dump-replicates",
            dump_path.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let dump = fs::read_to_string(&dump_path).unwrap();
    assert_eq!(dump.lines().next().unwrap(), "setting,method,rep,estimate,se,converged");
    assert_eq!(dump.lines().count(), 1 + 6);
}

#[test]
fn version_flag_prints_tool_and_format() {
    let out = run(&["--version"]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.contains("slopelab"), "{text}");
}
