use std::path::Path;
use std::process::{Command, Output};

use psvgp::experiment::{read_results, read_summary, TrainRun};

fn psvgp(args: &[&str], dir: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_psvgp"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "psvgp {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: &[&str] = &["--synth-size", "12", "--grid", "2,2", "--iters", "30", "--m", "3"];

#[test]
fn train_writes_every_artifact_and_metrics_recompute() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--delta", "0.5", "--procs", "2", "--out", "run"];
    args.extend_from_slice(SMALL);
    let stdout = String::from_utf8(psvgp(&args, tmp.path()).stdout).unwrap();
    let run = tmp.path().join("run");
    for f in ["results.csv", "summary.csv", "resolved-config.txt", "transport-audit.csv", "report.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert_eq!(std::fs::read_dir(run.join("models")).unwrap().count(), 4);

    let resolved = TrainRun::from_file(&run.join("resolved-config.txt")).unwrap();
    assert_eq!((resolved.nx, resolved.ny, resolved.m, resolved.iterations), (2, 2, 3, 30));
    assert_eq!(resolved.delta, 0.5);

    let rows = read_results(&run.join("results.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(stdout.contains(&format!("rmspe {}", rows[0].rmspe)));

    let json = String::from_utf8(psvgp(&["metrics", "--run-dir", "run"], tmp.path()).stdout).unwrap();
    let report = psvgp::experiment::RunReport::from_json(&json).unwrap();
    assert_eq!(report.rmspe, rows[0].rmspe);
    assert_eq!(report.boundary_rmsd, rows[0].boundary_rmsd);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("base.txt"), "m = 2\ndelta = 0.25\niters = 10\n").unwrap();
    let mut args = vec!["train", "--config", "base.txt", "--delta", "1", "--out", "o"];
    args.extend_from_slice(&SMALL[..4]);
    psvgp(&args, tmp.path());
    let resolved = TrainRun::from_file(&tmp.path().join("o/resolved-config.txt")).unwrap();
    assert_eq!((resolved.m, resolved.iterations, resolved.delta), (2, 10, 1.0));
}

#[test]
fn sweep_and_scaling_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--deltas", "0,1", "--ms", "2,3", "--reps", "2", "--out", "sw"];
    args.extend_from_slice(&SMALL[..6]);
    psvgp(&args, tmp.path());
    let rows = read_results(&tmp.path().join("sw/results.csv")).unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(read_summary(&tmp.path().join("sw/summary.csv")).unwrap().len(), 4);

    let mut args = vec!["scaling", "--deltas", "0,1", "--proc-counts", "1,4", "--out", "sc"];
    args.extend_from_slice(SMALL);
    psvgp(&args, tmp.path());
    let table = psvgp::experiment::read_scaling(&tmp.path().join("sc/scaling.csv")).unwrap();
    assert_eq!(table.len(), 4);
    assert_eq!(table[0].rmspe, table[1].rmspe);
}

#[test]
fn synth_output_trains_from_csv() {
    let tmp = tempfile::tempdir().unwrap();
    psvgp(&["synth", "--synth-size", "10", "--seed", "3", "--out", "s"], tmp.path());
    let text = std::fs::read_to_string(tmp.path().join("s/benchmark.csv")).unwrap();
    assert!(text.starts_with("lon,lat,value\n"));
    assert_eq!(text.lines().count(), 101);
    psvgp(
        &["train", "--data", "s/benchmark.csv", "--grid", "2,2", "--iters", "10", "--m", "2", "--out", "t"],
        tmp.path(),
    );
    assert!(tmp.path().join("t/models/partition-0000.txt").is_file());
}

#[test]
fn invalid_flags_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["train", "--grid", "3"][..],
        &["train", "--delta", "1.5"],
        &["train", "--wraparound", "maybe"],
        &["sweep", "--ms", "two"],
    ] {
        let out = Command::new(env!("CARGO_BIN_EXE_psvgp"))
            .args(args)
            .current_dir(tmp.path())
            .output()
            .unwrap();
        assert!(!out.status.success(), "{args:?} succeeded");
    }
}
