use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mpin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpin"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = mpin(dir, args);
    assert!(
        out.status.success(),
        "mpin {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

/// 4 streams × 40 steps × 5 attributes with 10% missing.
fn generated(dir: &Path) -> PathBuf {
    ok(dir, &["gen", "-o", "g.csv", "--streams", "4", "--length", "40", "--dim", "5", "--seed", "3"]);
    dir.join("g.csv")
}

#[test]
fn impute_mean_matches_column_means() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("toy.csv"), "a,b\n1,\n3,4\n,8\n").unwrap();
    ok(dir.path(), &["impute", "-i", "toy.csv", "--method", "mean", "-o", "out.csv"]);
    assert_eq!(read(dir.path(), "out.csv"), "a,b\n1,6\n3,4\n2,8\n");
}

#[test]
fn impute_mpin_is_deterministic_and_complete() {
    let dir = TempDir::new().unwrap();
    generated(dir.path());
    let args = |o| ["impute", "-i", "g.csv", "--method", "mpin", "--seed", "7", "--epochs", "30", "-o", o];
    ok(dir.path(), &args("a.csv"));
    ok(dir.path(), &args("b.csv"));
    let a = read(dir.path(), "a.csv");
    assert_eq!(a, read(dir.path(), "b.csv"));
    let input = read(dir.path(), "g.csv");
    assert_eq!(a.lines().count(), input.lines().count());
    assert!(a.lines().skip(1).all(|l| !l.split(',').any(str::is_empty)));
}

#[test]
fn missing_input_exits_with_usage_code() {
    let dir = TempDir::new().unwrap();
    let out = mpin(dir.path(), &["impute", "-i", "absent.csv", "--method", "mean"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn exit_codes_separate_usage_from_computation() {
    let dir = TempDir::new().unwrap();
    generated(dir.path());
    let bad_flag = mpin(dir.path(), &["impute", "-i", "g.csv", "--epochs", "0"]);
    assert_eq!(bad_flag.status.code(), Some(2));
    let diverged = mpin(dir.path(), &["impute", "-i", "g.csv", "--learning-rate", "1e300", "--epochs", "5"]);
    assert_eq!(diverged.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&diverged.stderr).contains("diverged"));
}

#[test]
fn every_variant_writes_a_report() {
    let dir = TempDir::new().unwrap();
    generated(dir.path());
    for variant in ["P", "D", "M", "DM"] {
        let json = format!("{variant}.json");
        ok(
            dir.path(),
            &["stream", "-i", "g.csv", "--window-length", "10", "--epochs", "15", "--variant", variant, "-o", "out.csv", "--report-json", &json],
        );
        let report: serde_json::Value = serde_json::from_str(&read(dir.path(), &json)).unwrap();
        assert_eq!(report["config"]["command"], "stream");
        assert_eq!(report["config"]["continuous"]["variant"], variant);
        assert_eq!(report["records"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn resumed_stream_matches_uninterrupted_stream() {
    let dir = TempDir::new().unwrap();
    generated(dir.path());
    let base = ["stream", "-i", "g.csv", "--window-length", "10", "--epochs", "15", "--eta", "0.3"];
    let with = |extra: &[&'static str]| base.iter().copied().chain(extra.iter().copied()).collect::<Vec<_>>();

    ok(dir.path(), &with(&["-o", "full.csv"]));
    ok(dir.path(), &with(&["-o", "head.csv", "--max-windows", "2", "--checkpoint", "run.ckpt"]));
    ok(dir.path(), &with(&["-o", "tail.csv", "--resume", "run.ckpt"]));

    let full = read(dir.path(), "full.csv");
    let head = read(dir.path(), "head.csv");
    let tail = read(dir.path(), "tail.csv");
    let joined: Vec<&str> = head.lines().chain(tail.lines().skip(1)).collect();
    assert_eq!(joined, full.lines().collect::<Vec<_>>());
}

#[test]
fn stream_survives_empty_windows() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("gap.csv"), "timestamp,a,b\n0,1,2\n1,2,\n2,,3\n9,4,5\n9.5,5,6\n").unwrap();
    ok(dir.path(), &["stream", "-i", "gap.csv", "--window-length", "3", "--epochs", "5", "-o", "out.csv", "--report-csv", "r.csv"]);
    let report = read(dir.path(), "r.csv");
    assert_eq!(report.lines().count(), 1 + 4);
    assert_eq!(read(dir.path(), "out.csv").lines().count(), 1 + 5);
}

#[test]
fn eval_reports_every_requested_method_reproducibly() {
    let dir = TempDir::new().unwrap();
    generated(dir.path());
    let run = |name: &str| {
        let out = ok(
            dir.path(),
            &["eval", "-i", "g.csv", "--window-length", "10", "--epochs", "15", "--seed", "5", "--report-csv", name],
        );
        String::from_utf8(out.stdout).unwrap()
    };
    let table = run("a.csv");
    for label in ["MEAN", "KNN", "FeaProp", "MPIN-DM"] {
        assert!(table.lines().any(|l| l.starts_with(label)), "{label} missing from\n{table}");
    }
    run("b.csv");
    // everything but the timing column must match
    let strip = |s: String| -> Vec<String> {
        s.lines()
            .map(|l| {
                let mut cells: Vec<&str> = l.split(',').collect();
                cells.remove(4);
                cells.join(",")
            })
            .collect()
    };
    assert_eq!(strip(read(dir.path(), "a.csv")), strip(read(dir.path(), "b.csv")));
}

#[test]
fn gen_is_deterministic_and_round_trips_through_impute() {
    let dir = TempDir::new().unwrap();
    let first = String::from_utf8(ok(dir.path(), &["gen", "--length", "15", "--seed", "9"]).stdout).unwrap();
    let second = String::from_utf8(ok(dir.path(), &["gen", "--length", "15", "--seed", "9"]).stdout).unwrap();
    assert_eq!(first, second);
    fs::write(dir.path().join("g.csv"), &first).unwrap();
    ok(dir.path(), &["impute", "-i", "g.csv", "--method", "mean", "-o", "out.csv"]);
    let out = read(dir.path(), "out.csv");
    for (a, b) in first.lines().zip(out.lines()) {
        for (x, y) in a.split(',').zip(b.split(',')) {
            if !x.is_empty() {
                assert_eq!(x, y);
            }
        }
    }
}

#[test]
fn gen_rejects_full_missingness() {
    let dir = TempDir::new().unwrap();
    let out = mpin(dir.path(), &["gen", "--missing-rate", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn echoed_spec_replays_the_run() {
    let dir = TempDir::new().unwrap();
    generated(dir.path());
    let out = ok(dir.path(), &["impute", "-i", "g.csv", "--epochs", "10", "--seed", "4", "-o", "first.csv"]);
    let spec = String::from_utf8(out.stderr).unwrap().lines().next().unwrap().to_string();
    fs::write(dir.path().join("spec.json"), spec.replace("first.csv", "second.csv")).unwrap();
    ok(dir.path(), &["run", "--spec", "spec.json"]);
    assert_eq!(read(dir.path(), "first.csv"), read(dir.path(), "second.csv"));
}
