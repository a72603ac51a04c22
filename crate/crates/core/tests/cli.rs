//! Drives the `hems-ddt` binary on a small configuration.

use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set", "episodes=30",
    "--set", "teacher_batch_size=32",
    "--set", "buffer_size=500",
    "--set", "student_epochs=5",
    "--set", "eval_days=2",
    "--set", "heatmap_resolution=11",
    "--days", "4",
    "--seeds", "1,2",
];

fn run(sub: &str, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hems-ddt"))
        .arg(sub)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary starts")
}

fn run_small(sub: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<&str> = SMALL.to_vec();
    args.extend_from_slice(extra);
    let o = run(sub, out, &args);
    assert!(
        o.status.success(),
        "{sub} failed with {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn pipeline(out: &Path) {
    for sub in ["gen-data", "train-teacher", "distill", "export-tree", "evaluate", "heatmap"] {
        run_small(sub, out, &[]);
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// `# output` lines of a manifest: relative path plus sha256.
fn output_hashes(out: &Path, command: &str) -> Vec<String> {
    std::fs::read_to_string(out.join(format!("manifest-{command}.txt")))
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("# output"))
        .map(String::from)
        .collect()
}

const STAGES: [&str; 6] = ["gen-data", "train-teacher", "distill", "export-tree", "evaluate", "heatmap"];

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline(out);
    for p in [
        "data/train.csv",
        "data/eval.csv",
        "checkpoints/teacher.bin",
        "students/seed-1/tree.txt",
        "students/seed-2/tree.dot",
        "students/seed-2/tree.json",
        "students/summary.csv",
        "reports/comparison_summary.csv",
        "reports/comparison.json",
        "reports/optimality.csv",
        "heatmaps/regions.csv",
        "heatmaps/dqn-demand-0.50.svg",
        "heatmaps/ddt-seed-1-demand-0.10.csv",
    ] {
        assert!(out.join(p).is_file(), "missing {p}");
    }
    for stage in STAGES {
        assert!(!output_hashes(out, stage).is_empty(), "{stage} manifest lists no outputs");
    }
    let rules = std::fs::read_to_string(out.join("students/seed-1/tree.txt")).unwrap();
    assert!(rules.starts_with("if "), "unexpected rules:\n{rules}");
}

#[test]
fn identical_seeds_give_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for stage in STAGES {
        assert_eq!(output_hashes(a.path(), stage), output_hashes(b.path(), stage), "{stage} differs");
    }
}

#[test]
fn manifest_reruns_a_stage_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline(out);
    for stage in ["train-teacher", "distill", "evaluate"] {
        let manifest = out.join(format!("manifest-{stage}.txt"));
        let before = std::fs::read_to_string(&manifest).unwrap();
        let copy = out.join(format!("rerun-{stage}.txt"));
        std::fs::copy(&manifest, &copy).unwrap();
        let o = run(stage, out, &["--config", copy.to_str().unwrap()]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
        assert_eq!(std::fs::read_to_string(&manifest).unwrap(), before, "{stage} rerun differs");
    }
}

#[test]
fn depth_four_is_rejected_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("distill", dir.path(), &["--depth", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("depth"), "{}", stderr(&o));
}

#[test]
fn missing_upstream_artifact_names_producer() {
    let dir = tempfile::tempdir().unwrap();
    run_small("gen-data", dir.path(), &[]);
    let o = run("distill", dir.path(), SMALL);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("train-teacher"), "{}", stderr(&o));

    let empty = tempfile::tempdir().unwrap();
    let o = run("train-teacher", empty.path(), SMALL);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("gen-data"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_lists_valid_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("gen-data", dir.path(), &["--set", "learning_rat=0.1"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("learning_rat") && msg.contains("teacher_learning_rate"), "{msg}");
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("train-everything", dir.path(), &[]).status.code(), Some(2));
    assert_eq!(run("gen-data", dir.path(), &["--bogus"]).status.code(), Some(2));
}

#[test]
fn rbc_only_evaluation_has_one_row_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    run_small("gen-data", dir.path(), &[]);
    run_small("evaluate", dir.path(), &["--policies", "rbc"]);
    let csv = std::fs::read_to_string(dir.path().join("reports/comparison_summary.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "{csv}");
    assert!(rows[0].starts_with("rbc,"));
    let improvement: f64 = rows[0].rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(improvement, 0.0);
}

#[test]
fn missing_profile_file_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "train-teacher",
        dir.path(),
        &["--price-mode", "file", "--set", "train_profiles=/nonexistent/prices.csv"],
    );
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("/nonexistent/prices.csv"), "{}", stderr(&o));
}

#[test]
fn malformed_profile_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "hour,price,demand,pv\n0,0.1,1.0\n").unwrap();
    let o = run(
        "train-teacher",
        dir.path(),
        &["--price-mode", "file", "--set", &format!("train_profiles={}", path.display())],
    );
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("bad.csv:2"), "{}", stderr(&o));
}
