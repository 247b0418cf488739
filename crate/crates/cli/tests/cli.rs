use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TRACE_HEADER: &str =
    "global_iter,task,log10_c,log10_gamma,c,gamma,raw_loss,transformed_loss,best_so_far,wall_time_ms,flags";

fn mtbo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtbo")).args(args).env("MTBO_THREADS", "1").output().expect("spawn mtbo")
}

fn ok(args: &[&str]) -> String {
    let out = mtbo(args);
    assert!(out.status.success(), "mtbo {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small cohort plus its nine datasets.
fn cohort(dir: &Path) -> (PathBuf, PathBuf) {
    let ph = dir.join("phantoms");
    let ds = dir.join("datasets");
    ok(&[
        "phantom-gen",
        "--cases",
        "20",
        "--size",
        "12",
        "--radius-min",
        "2.5",
        "--radius-max",
        "4",
        "--effect",
        "2",
        "--seed",
        "3",
        "--out",
        s(&ph),
    ]);
    ok(&["build-datasets", "--phantoms", s(&ph), "--out", s(&ds)]);
    (ph, ds)
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let (ph, ds) = cohort(tmp.path());
    assert!(ph.join("cases.csv").exists() && ph.join("spec.json").exists());

    let index: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ds.join("datasets.json")).unwrap()).unwrap();
    assert_eq!(index["datasets"].as_array().unwrap().len(), 9);
    let d0 = ds.join("dataset_0.csv");
    let d8 = ds.join("dataset_8.csv");
    let header = fs::read_to_string(&d0).unwrap().lines().next().unwrap().to_string();
    assert!(header.starts_with("case_id,label,"));
    assert_eq!(header.split(',').count(), 2 + 48);

    let loss: serde_json::Value = serde_json::from_str(&ok(&[
        "cv-loss",
        "--data",
        s(&d0),
        "--c",
        "1",
        "--gamma",
        "0.01",
        "--folds",
        "5",
        "--seed",
        "7",
    ]))
    .unwrap();
    let l = loss["loss"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&l));

    let trace = tmp.path().join("mtbo.csv");
    let tune = ["tune", "--mode", "mtbo", "--datasets", s(&d0), s(&d8), "--iter1", "3", "--iter2", "9", "--folds", "3"];
    let tune_tail = ["--seed", "5", "--restarts", "1", "--no-timing", "--out", s(&trace)];
    ok(&[&tune[..], &tune_tail[..]].concat());
    let text = fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(TRACE_HEADER));
    let rows: Vec<&str> = lines.collect();
    // 3 shared iterations on both tasks, then 6 round-robin
    assert_eq!(rows.len(), 2 * 3 + 6);
    assert!(rows[0].starts_with("0,1,0,0,1,1,"));
    assert!(rows[1].starts_with("0,2,0,0,1,1,"));

    // rerun is byte-identical
    let again = tmp.path().join("mtbo2.csv");
    let tune_tail2 = ["--seed", "5", "--restarts", "1", "--no-timing", "--out", s(&again)];
    ok(&[&tune[..], &tune_tail2[..]].concat());
    assert_eq!(fs::read(&trace).unwrap(), fs::read(&again).unwrap());

    let stbo = tmp.path().join("stbo.csv");
    ok(&[
        "tune",
        "--mode",
        "stbo",
        "--datasets",
        s(&d0),
        s(&d8),
        "--stbo-iters",
        "4",
        "--folds",
        "3",
        "--restarts",
        "1",
        "--out",
        s(&stbo),
    ]);
    assert_eq!(fs::read_to_string(&stbo).unwrap().lines().count(), 1 + 8);
}

#[test]
fn report_and_projection_from_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("report");
    let common = [
        "--synthetic",
        "2",
        "--iter1",
        "3",
        "--iter2",
        "7",
        "--stbo-iters",
        "5",
        "--restarts",
        "1",
        "--seed",
        "4",
        "--no-timing",
    ];
    ok(&[&["report"][..], &common[..], &["--out", s(&out)][..]].concat());
    for f in ["report.json", "stbo_trace.csv", "mtbo_trace.csv", "curves.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["num_tasks"], 2);
    assert_eq!(report["tasks"].as_array().unwrap().len(), 2);
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().next(), Some("method,task,evaluation,best_so_far"));
    // STBO 2×5 rows, MTBO 2×3 + 4 rows
    assert_eq!(curves.lines().count(), 1 + 10 + 10);

    // the report is a pure projection of the traces
    let rebuilt = tmp.path().join("rebuilt");
    let (st, mt) = (out.join("stbo_trace.csv"), out.join("mtbo_trace.csv"));
    let from = ["--from-traces", s(&st), s(&mt), "--out", s(&rebuilt)];
    ok(&[&["report"][..], &common[..], &from[..]].concat());
    assert_eq!(fs::read(out.join("report.json")).unwrap(), fs::read(rebuilt.join("report.json")).unwrap());
}

#[test]
fn discretize_extract_and_landscape() {
    let tmp = tempfile::tempdir().unwrap();
    let (ph, ds) = cohort(tmp.path());
    let vol = ph.join("case_0000_image.json");
    let mask = ph.join("case_0000_mask.json");

    let levels = tmp.path().join("levels.u16");
    ok(&["discretize", "--volume", s(&vol), "--mask", s(&mask), "--strategy-index", "4", "--out", s(&levels)]);
    assert_eq!(fs::read(&levels).unwrap().len(), 2 * 12 * 12 * 12);
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(levels.with_extension("json")).unwrap()).unwrap();
    assert_eq!(side["N_g"], 32);
    assert!(side["q0"].as_f64().unwrap() < side["qN"].as_f64().unwrap());

    let feats = tmp.path().join("features.csv");
    ok(&["extract", "--volume", s(&vol), "--mask", s(&mask), "--all-strategies", "--out", s(&feats)]);
    let text = fs::read_to_string(&feats).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 9);
    assert!(lines[0].starts_with("case_id,strategy_index,"));
    assert_eq!(lines[0].split(',').count(), 50);
    assert!(lines[9].starts_with("case_0000_image,8,"));

    let land = tmp.path().join("landscape.csv");
    ok(&[
        "landscape",
        "--datasets",
        s(&ds.join("dataset_0.csv")),
        s(&ds.join("dataset_1.csv")),
        "--grid-side",
        "3",
        "--folds",
        "3",
        "--out",
        s(&land),
    ]);
    let text = fs::read_to_string(&land).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 9);
    assert!(text.lines().nth(1).unwrap().starts_with("1,-3,-3,0.001,0.001,"));
    assert!(text.lines().last().unwrap().starts_with("2,3,3,1000,1000,"));
}

#[test]
fn rejects_bad_input() {
    assert!(!mtbo(&["discretize", "--volume", "a", "--mask", "b", "--strategy-index", "9", "--out", "c"])
        .status
        .success());
    assert!(!mtbo(&["cv-loss", "--data", "/nonexistent.csv", "--c", "1", "--gamma", "1"]).status.success());
    assert!(!mtbo(&[
        "tune",
        "--mode",
        "mtbo",
        "--datasets",
        "x.csv",
        "--iter1",
        "5",
        "--iter2",
        "5",
        "--out",
        "t.csv"
    ])
    .status
    .success());
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_mtbo"))
        .args(["report", "--synthetic", "1", "--out", "x"])
        .env("MTBO_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!bad_threads.status.success());
    assert!(String::from_utf8_lossy(&bad_threads.stderr).contains("MTBO_THREADS"));
}
