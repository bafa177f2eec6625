use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use coad::cli::run;
use coad::experiments::CSV_HEADER;
use serde_json::Value;
use tempfile::TempDir;

fn manifest(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn coad(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("coad").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_matches_golden() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("records.csv");
    let (code, _, err) = coad(&["generate", "--n", "5", "--seed", "7", "-o", path_str(&out)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        read(&out),
        read(&manifest("tests/golden/lowdim_n5_seed7.csv"))
    );
    assert_eq!(
        read(&dir.path().join("records.catalog.json")),
        read(&manifest("tests/golden/lowdim_n5_seed7.catalog.json"))
    );
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("env.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_coad"))
        .args(["generate", "--n", "5", "-o", path_str(&out)])
        .env("COAD_SEED", "7")
        .output()
        .unwrap();
    assert!(status.status.success());
    assert_eq!(
        read(&out),
        read(&manifest("tests/golden/lowdim_n5_seed7.csv"))
    );
}

#[test]
fn ingest_matches_golden() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("ingested.csv");
    let input = manifest("tests/fixtures/bid_log.csv");
    let (code, stdout, err) = coad(&["ingest", "--input", path_str(&input), "-o", path_str(&out)]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("4 records in 3 groups"), "{stdout}");
    assert_eq!(
        read(&out),
        read(&manifest("tests/golden/bid_log_ingested.csv"))
    );
    assert_eq!(
        read(&dir.path().join("ingested.catalog.json")),
        read(&manifest("tests/golden/bid_log_ingested.catalog.json"))
    );
}

#[test]
fn ingest_can_drop_bidders_without_history() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("dropped.csv");
    let input = manifest("tests/fixtures/bid_log.csv");
    let (code, _, err) = coad(&[
        "ingest",
        "--input",
        path_str(&input),
        "--missing-history",
        "drop",
        "-o",
        path_str(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = read(&out);
    assert_eq!(text.lines().count(), 4, "{text}");
    assert!(!text.contains("172.5"));
}

#[test]
fn worked_auction_matches_golden() {
    let (code, out, err) = coad(&[
        "auction",
        "--predictor",
        path_str(&manifest("tests/fixtures/worked_predictor.json")),
        "--bidders",
        path_str(&manifest("tests/fixtures/worked_bidders.csv")),
        "--group",
        "0",
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out, read(&manifest("tests/golden/worked_auction.json")));
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["outcome"]["winner"], 0);
    assert_eq!(v["outcome"]["payments"], serde_json::json!([6.0, 0.0]));
}

#[test]
fn baselines_on_the_worked_bids() {
    let pred = manifest("tests/fixtures/worked_predictor.json");
    let bidders = manifest("tests/fixtures/worked_bidders.csv");
    let base = [
        "auction",
        "--predictor",
        path_str(&pred),
        "--bidders",
        path_str(&bidders),
        "--group",
        "0",
    ];
    let revenue = |extra: &[&str]| {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        let (code, out, err) = coad(&args);
        assert_eq!(code, 0, "{err}");
        serde_json::from_str::<Value>(&out).unwrap()["revenue"]
            .as_f64()
            .unwrap()
    };
    assert_eq!(revenue(&["--mechanism", "second-price"]), 4.0);
    assert_eq!(
        revenue(&["--mechanism", "uniform-reserve", "--reserve", "5"]),
        5.0
    );
    assert_eq!(
        revenue(&["--mechanism", "uniform-reserve", "--reserve", "11"]),
        0.0
    );
}

#[test]
fn fit_calibrate_auction_pipeline() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("d.csv");
    let est = dir.path().join("est.json");
    let pred = dir.path().join("pred.json");
    let bidders = dir.path().join("bidders.csv");
    assert_eq!(
        coad(&[
            "generate",
            "--n",
            "600",
            "--seed",
            "3",
            "-o",
            path_str(&data)
        ])
        .0,
        0
    );
    let (code, _, err) = coad(&[
        "fit",
        "--data",
        path_str(&data),
        "--kind",
        "joint",
        "--degree",
        "4",
        "-o",
        path_str(&est),
    ]);
    assert_eq!(code, 0, "{err}");
    let (code, out, err) = coad(&[
        "calibrate",
        "--data",
        path_str(&data),
        "--estimator",
        path_str(&est),
        "--alpha",
        "0.2",
        "-o",
        path_str(&pred),
    ]);
    assert_eq!(code, 0, "{err}");
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["alpha"], 0.2);
    assert_eq!(report["groups"].as_array().unwrap().len(), 3);

    fs::write(&bidders, "x_0,bid\n0.5,12\n-0.2,9\n1.1,15\n").unwrap();
    let (code, out, err) = coad(&[
        "auction",
        "--predictor",
        path_str(&pred),
        "--bidders",
        path_str(&bidders),
        "--group",
        "2",
    ]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    let revenue = v["revenue"].as_f64().unwrap();
    assert!((0.0..=15.0).contains(&revenue), "{revenue}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(coad(&["audit", "--cases", "0"]).0, 2);
    assert_eq!(coad(&["frobnicate"]).0, 2);
    assert_eq!(coad(&["generate", "--n", "5"]).0, 2);
    assert_eq!(
        coad(&[
            "auction",
            "--predictor",
            path_str(&manifest("tests/fixtures/worked_predictor.json")),
            "--group",
            "0"
        ])
        .0,
        2
    );
    assert_eq!(
        coad(&[
            "auction",
            "--predictor",
            path_str(&manifest("tests/fixtures/worked_predictor.json")),
            "--bidders",
            path_str(&manifest("tests/fixtures/worked_bidders.csv")),
            "--group",
            "3",
        ])
        .0,
        2
    );
    assert_eq!(
        coad(&["experiment", "--name", "coverage", "--alpha", "1.5"]).0,
        2
    );
    assert_eq!(coad(&["experiment", "--name", "nonsense"]).0, 2);
}

#[test]
fn help_and_version_exit_0() {
    let (code, out, _) = coad(&["--help"]);
    assert_eq!(code, 0);
    for sub in [
        "generate",
        "ingest",
        "fit",
        "calibrate",
        "auction",
        "experiment",
        "audit",
    ] {
        assert!(out.contains(sub), "{sub} missing from help");
    }
    assert_eq!(coad(&["--version"]).0, 0);
}

#[test]
fn runtime_errors_exit_1() {
    let (code, _, err) = coad(&[
        "fit",
        "--data",
        "/nonexistent/data.csv",
        "-o",
        "/tmp/never.json",
    ]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error:"), "{err}");
}

#[test]
fn audit_exit_codes() {
    let (code, out, _) = coad(&["audit", "--cases", "20", "--seed", "1"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("PASS: 0 anomalies over 20 cases"));
    let (code, out, _) = coad(&[
        "audit",
        "--cases",
        "40",
        "--seed",
        "1",
        "--inject",
        "strict-gt",
    ]);
    assert_eq!(code, 1, "{out}");
    assert!(out.contains("FAIL"));
}

#[test]
fn binary_exit_codes_match() {
    let bin = env!("CARGO_BIN_EXE_coad");
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(code(&["audit", "--cases", "0"]), Some(2));
    assert_eq!(code(&["audit", "--cases", "5"]), Some(0));
    assert_eq!(
        code(&[
            "audit",
            "--cases",
            "40",
            "--seed",
            "1",
            "--inject",
            "strict-gt"
        ]),
        Some(1)
    );
}

fn experiment(dir: &Path, extra: &[&str]) -> (String, Value) {
    let mut args = vec![
        "experiment",
        "--name",
        "coverage",
        "--n",
        "300",
        "--m",
        "40",
        "--reps",
        "6",
        "--seed",
        "9",
        "--out-dir",
        path_str(dir),
    ];
    args.extend_from_slice(extra);
    let (code, _, err) = coad(&args);
    assert_eq!(code, 0, "{err}");
    let summary: Value = serde_json::from_str(&read(&dir.join("coverage_summary.json"))).unwrap();
    (read(&dir.join("coverage.csv")), summary)
}

#[test]
fn experiment_outputs_do_not_depend_on_threads() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let (csv_a, sum_a) = experiment(a.path(), &["--single-thread"]);
    let (csv_b, sum_b) = experiment(b.path(), &["--threads", "3"]);
    assert_eq!(csv_a, csv_b);
    assert_eq!(sum_a["summary"], sum_b["summary"]);

    assert_eq!(csv_a.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csv_a.lines().count(), 1 + 6 * 3);
    for key in [
        "experiment",
        "seed",
        "git_describe",
        "config",
        "replications",
        "rows",
        "invariant_violations",
        "summary",
    ] {
        assert!(sum_a.get(key).is_some(), "summary missing {key}");
    }
    assert_eq!(sum_a["seed"], 9);
    assert_eq!(sum_a["rows"], 18);
}

#[test]
fn every_experiment_runs_from_the_cli() {
    let dir = TempDir::new().unwrap();
    for (name, m) in [
        ("revenue_vs_n", "10"),
        ("revenue_vs_m", "1,2,5"),
        ("gap", "10"),
        ("bound", "1"),
        ("consistency", "1"),
    ] {
        let (code, _, err) = coad(&[
            "experiment",
            "--name",
            name,
            "--n",
            "200,400",
            "--m",
            m,
            "--reps",
            "3",
            "--out-dir",
            path_str(dir.path()),
        ]);
        assert_eq!(code, 0, "{name}: {err}");
        let csv = read(&dir.path().join(format!("{name}.csv")));
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER, "{name}");
        let summary: Value =
            serde_json::from_str(&read(&dir.path().join(format!("{name}_summary.json")))).unwrap();
        assert_eq!(summary["experiment"], name);
    }
}

#[test]
fn malformed_bidders_file_is_rejected() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "feature,bid\n1,2\n").unwrap();
    let (code, _, err) = coad(&[
        "auction",
        "--predictor",
        path_str(&manifest("tests/fixtures/worked_predictor.json")),
        "--bidders",
        path_str(&bad),
        "--group",
        "0",
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("x_0,bid"), "{err}");
}

#[test]
fn format_docs_match_the_code() {
    let doc = read(&manifest("../../docs/formats.md"));
    assert!(doc.contains(CSV_HEADER), "experiment header not documented");
    assert!(doc.contains("x_0,group_id,value"));
    assert!(doc.contains("auction_id,bidder_id,seller_id,bid_amount,bid_time_days,bidder_rating"));
    for word in doc.split_whitespace() {
        let word = word.trim_matches(|c: char| c == '`' || c == '.' || c == ',');
        if let Some(rel) = word.strip_prefix("tests/") {
            assert!(manifest(&format!("tests/{rel}")).exists(), "{word} named in docs but missing");
        }
    }
}
