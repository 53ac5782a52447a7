use std::fs;
use std::path::Path;
use std::process::Command;

use hdt_core::cli::{main_with_args, EXIT_DATA, EXIT_USAGE};
use hdt_core::listops::{read_dataset, Expr};

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("hdt").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn gen_listops_writes_exact_splits_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let code = run(&["gen-listops", "--train", "100", "--val", "10", "--test", "10", "--seed", "1", "--out", s(out)]);
        assert_eq!(code, 0);
    }
    for (split, n) in [("train", 100), ("val", 10), ("test", 10)] {
        let text = fs::read_to_string(a.join(format!("{split}.tsv"))).unwrap();
        assert_eq!(text.lines().count(), n);
    }
    assert_eq!(dir_files(&a), dir_files(&b));
}

#[test]
fn gen_listops_respects_depth() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["gen-listops", "--train", "500", "--val", "1", "--test", "1", "--depth", "3", "--out", s(tmp.path())]), 0);
    let samples = read_dataset(&tmp.path().join("train.tsv")).unwrap();
    assert!(samples.iter().all(|x| x.expr.depth() <= 3));
    assert!(samples.iter().any(|x| x.expr.depth() == 3));
    // the file format round-trips through the expression parser
    let first = fs::read_to_string(tmp.path().join("train.tsv")).unwrap();
    let line = first.lines().next().unwrap();
    let tokens = hdt_core::listops::parse_tokens(line.split('\t').nth(1).unwrap()).unwrap();
    assert_eq!(Expr::parse(&tokens).unwrap().eval().to_string(), line.split('\t').next().unwrap());
}

#[test]
fn mask_stats_records() {
    let tmp = tempfile::tempdir().unwrap();
    let docs = tmp.path().join("docs.jsonl");
    fs::write(&docs, "[[[1,2]]]\n[[[4,5,6],[7]],[[8,9]]]\n[[[4,5,6],[7]],[[8,9]]]\n").unwrap();
    let out = tmp.path().join("o");
    assert_eq!(run(&["mask-stats", s(&docs), "--out", s(&out)]), 0);
    let text = fs::read_to_string(out.join("mask_stats.jsonl")).unwrap();
    let recs: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 3);
    assert_eq!(recs[0]["n"], 5);
    assert_eq!(recs[0]["nnz"], 15);
    assert_eq!(recs[0]["diameter"], 3);
    let strip = |v: &serde_json::Value| {
        let mut v = v.clone();
        v.as_object_mut().unwrap().remove("doc");
        v
    };
    assert_eq!(strip(&recs[1]), strip(&recs[2]));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("mask_stats_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["docs"], 3);

    let csv_out = tmp.path().join("c");
    assert_eq!(run(&["mask-stats", s(&docs), "--format", "csv", "--out", s(&csv_out)]), 0);
    let csv = fs::read_to_string(csv_out.join("mask_stats.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "doc,n,nnz,density,diameter,s_max");
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn mask_stats_rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert_eq!(run(&["mask-stats", s(&empty), "--out", s(&tmp.path().join("o"))]), EXIT_DATA);
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "[[[1]]]\n[[[1,2]\n").unwrap();
    assert_eq!(run(&["mask-stats", s(&bad), "--out", s(&tmp.path().join("o"))]), EXIT_DATA);
    assert_eq!(run(&["mask-stats", s(&tmp.path().join("nope")), "--out", s(&tmp.path().join("o"))]), EXIT_DATA);
}

fn bench_rows(out: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(out.join("bench.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), hdt_core::cli::BENCH_HEADER);
    lines.map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn bench_attention_rows() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["bench-attention", "--n", "512", "--shape", "4x8x14", "--out", s(tmp.path())]), 0);
    let rows = bench_rows(tmp.path());
    assert_eq!(rows.len(), 3);
    let orders: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(orders, ["sorted", "unsorted", "window"]);
    assert!(rows.iter().all(|r| r[6].is_empty()));
    let skip = |r: &Vec<String>| r[5].parse::<f64>().unwrap();
    assert!(skip(&rows[0]) >= skip(&rows[1]));
}

#[test]
fn bench_attention_doubling() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["bench-attention", "--n", "1024,2048,4096", "--timing", "--fp", "32", "--out", s(tmp.path())]), 0);
    let rows = bench_rows(tmp.path());
    let sorted: Vec<f64> = rows.iter().filter(|r| r[1] == "sorted").map(|r| r[4].parse().unwrap()).collect();
    for w in sorted.windows(2) {
        assert!(w[1] / w[0] <= 3.0, "{sorted:?}");
    }
    assert!(rows.iter().filter(|r| r[1] != "window").all(|r| r[6].parse::<f64>().is_ok()));
}

fn tiny_data(dir: &Path) {
    let code = run(&["gen-listops", "--train", "40", "--val", "10", "--test", "10", "--depth", "3", "--seed", "2", "--out", s(dir)]);
    assert_eq!(code, 0);
}

const TINY_MODEL: [&str; 8] = ["--layers", "1", "--d-model", "8", "--heads", "2", "--d-ff", "16"];

#[test]
fn train_eval_and_replay_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_data(&data);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut args = vec!["train", "--data", s(&data), "--variant", "gb", "--steps", "6", "--batch-size", "8", "--eval-every", "3"];
    args.extend(TINY_MODEL);
    let mut a_args = args.clone();
    a_args.extend(["--out", s(&a)]);
    assert_eq!(run(&a_args), 0);
    let names: Vec<String> = dir_files(&a).into_iter().map(|f| f.0).collect();
    assert_eq!(names, ["checkpoint.json", "manifest.json", "metrics.json", "trace.json"]);
    let trace: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(a.join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace.len(), 2);

    assert_eq!(run(&["replay", s(&a.join("manifest.json")), "--out", s(&b)]), 0);
    assert_eq!(dir_files(&a), dir_files(&b));

    let c = tmp.path().join("c");
    let test_file = data.join("test.tsv");
    let ck = a.join("checkpoint.json");
    assert_eq!(run(&["eval", "--checkpoint", s(&ck), "--data", s(&test_file), "--variant", "gb", "--out", s(&c)]), 0);
    let ev: serde_json::Value = serde_json::from_str(&fs::read_to_string(c.join("eval.json")).unwrap()).unwrap();
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(ev["accuracy"], metrics["test_accuracy"]);
    assert_eq!(ev["samples"], 10);
}

#[test]
fn zero_steps_only_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_data(&data);
    let out = tmp.path().join("o");
    let mut args = vec!["train", "--data", s(&data), "--steps", "0", "--out", s(&out)];
    args.extend(TINY_MODEL);
    assert_eq!(run(&args), 0);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["final_loss"].is_null());
    assert!(metrics["test_accuracy"].is_number());
    assert_eq!(fs::read_to_string(out.join("trace.json")).unwrap().trim(), "[]");
}

#[test]
fn ablation_variants_share_a_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    tiny_data(&data);
    let out = tmp.path().join("o");
    let mut args = vec!["ablation", "--data", s(&data), "--steps", "4", "--batch-size", "8", "--eval-every", "2", "--format", "csv", "--fp", "32", "--out", s(&out)];
    args.extend(TINY_MODEL);
    assert_eq!(run(&args), 0);
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let variants: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["dense", "rgb", "gb", "b"]);
    let curves = fs::read_to_string(out.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 4 * 2);
}

#[test]
fn usage_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let o = s(tmp.path());
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&["train", "--data", o, "--variant", "red", "--out", o]), EXIT_USAGE);
    assert_eq!(run(&["gen-listops", "--depth", "0", "--out", o]), EXIT_USAGE);
    assert_eq!(run(&["bench-attention", "--shape", "4x8", "--out", o]), EXIT_USAGE);
    assert_eq!(run(&["train", "--data", s(&tmp.path().join("missing")), "--out", o]), EXIT_DATA);
    let bad = tmp.path().join("bad");
    fs::create_dir(&bad).unwrap();
    fs::write(bad.join("train.tsv"), "7\t[SM 1 2 ]\n").unwrap();
    assert_eq!(run(&["train", "--data", s(&bad), "--out", o]), EXIT_DATA);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_hdt");
    assert_eq!(Command::new(bin).arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(Command::new(bin).arg("--bogus").output().unwrap().status.code(), Some(EXIT_USAGE));
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("none.jsonl");
    let out = Command::new(bin).args(["mask-stats", s(&missing), "--out", s(tmp.path())]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_DATA));
    assert!(String::from_utf8_lossy(&out.stderr).contains("none.jsonl"));
}

#[test]
fn replay_detects_changed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let docs = tmp.path().join("docs.jsonl");
    fs::write(&docs, "[[[1,2]]]\n").unwrap();
    let a = tmp.path().join("a");
    assert_eq!(run(&["mask-stats", s(&docs), "--out", s(&a)]), 0);
    fs::write(&docs, "[[[1,2,3]]]\n").unwrap();
    assert_eq!(run(&["replay", s(&a.join("manifest.json")), "--out", s(&tmp.path().join("b"))]), EXIT_DATA);
}
