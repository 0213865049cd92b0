//! End-to-end tests of the `flashmeans` binary. Golden files live in
//! `tests/golden`; set `UPDATE_GOLDEN=1` to rewrite them.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flashmeans::format::{read_assignments, read_dataset, write_dataset};
use flashmeans::DataMatrix;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_flashmeans"));
    c.env_remove("FLASHMEANS_WORKERS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn golden(name: &str, actual: &[u8]) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from its golden file");
}

fn p(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Report without its wall-time field.
fn report(path: &Path) -> Value {
    let mut v: Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("wall_time_ns");
    v
}

fn two_blobs(dir: &tempfile::TempDir) -> PathBuf {
    let path = p(dir, "blobs.fkm");
    let x = DataMatrix::from_rows(&[vec![0.0f64], vec![0.1], vec![10.0], vec![10.1]]).unwrap();
    write_dataset(&path, &x).unwrap();
    path
}

#[test]
fn gen_info_golden() {
    let dir = tempfile::tempdir().unwrap();
    let a = p(&dir, "a.fkm");
    let b = p(&dir, "b.fkm");
    let args = |out: &str| {
        vec![
            "gen", "--out", out, "--points", "10", "--true-clusters", "2", "--dims", "2", "--seed", "7",
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()
    };
    for out in [&a, &b] {
        let v = args(s(out));
        ok(&v.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes.len(), 112);
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    golden("gen_small.fkm", &bytes);
    golden("gen_small_info.txt", ok(&["info", s(&a)]).as_bytes());

    let x = read_dataset::<f32>(&a).unwrap();
    let c = p(&dir, "c.fkm");
    write_dataset(&c, &x).unwrap();
    assert_eq!(std::fs::read(&c).unwrap(), bytes);
}

#[test]
fn two_blob_cluster_golden() {
    let dir = tempfile::tempdir().unwrap();
    let x = two_blobs(&dir);
    let (a, r) = (p(&dir, "a.fka"), p(&dir, "r.json"));
    ok(&[
        "cluster", "--in", s(&x), "-k", "2", "--seed", "1",
        "--assignments-out", s(&a), "--report-out", s(&r),
    ]);
    let rep = report(&r);
    let obj = rep["final_objective"][0].as_f64().unwrap();
    assert!((obj - 0.01).abs() <= 1e-9, "{obj}");
    let mut cs: Vec<f64> = rep["centroids"][0]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c[0].as_f64().unwrap())
        .collect();
    cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!((cs[0] - 0.05).abs() < 1e-12 && (cs[1] - 10.05).abs() < 1e-12);
    let ids = read_assignments(&a, 2).unwrap().into_vec();
    assert_eq!(ids[0], ids[1]);
    assert_eq!(ids[2], ids[3]);
    assert_ne!(ids[0], ids[2]);
    golden("two_blob.fka", &std::fs::read(&a).unwrap());
    golden(
        "two_blob_report.json",
        serde_json::to_string_pretty(&rep).unwrap().as_bytes(),
    );
}

#[test]
fn pipeline_engines_write_identical_assignments() {
    let dir = tempfile::tempdir().unwrap();
    let x = p(&dir, "x.fkm");
    ok(&[
        "gen", "--out", s(&x), "--batch", "2", "--points", "3000", "--true-clusters", "6",
        "--dims", "5", "--spread", "2", "--seed", "11", "--dtype", "double",
    ]);
    let info = ok(&["info", s(&x)]);
    assert!(info.contains("dtype: double") && info.contains("points: 3000"));
    let mut files = Vec::new();
    for engine in ["baseline", "flash"] {
        let a = p(&dir, &format!("{engine}.fka"));
        let r = p(&dir, &format!("{engine}.json"));
        ok(&[
            "cluster", "--in", s(&x), "-k", "9", "--seed", "4", "--engine", engine,
            "--assignments-out", s(&a), "--report-out", s(&r),
        ]);
        files.push((std::fs::read(&a).unwrap(), report(&r)));
    }
    assert_eq!(files[0].0, files[1].0);
    assert_eq!(files[0].1["objective_history"], files[1].1["objective_history"]);
    assert_eq!(files[0].1["centroids"], files[1].1["centroids"]);
    // Batch elements converge separately, so traffic follows each one's history.
    let passes: u64 = files[0].1["objective_history"]
        .as_array()
        .unwrap()
        .iter()
        .map(|h| h.as_array().unwrap().len() as u64)
        .sum();
    assert_eq!(files[0].1["counters"]["intermediate_bytes_written"], 2 * passes * 3000 * 9 * 8);
    assert_eq!(files[1].1["counters"]["intermediate_bytes_written"], 0);
    golden("pipeline.fka", &files[0].0);
}

#[test]
fn out_of_core_report_matches_in_core() {
    let dir = tempfile::tempdir().unwrap();
    let x = p(&dir, "x.fkm");
    ok(&[
        "gen", "--out", s(&x), "--points", "5000", "--true-clusters", "7", "--dims", "3", "--seed", "2",
    ]);
    let run_with = |extra: &[&str], tag: &str| {
        let a = p(&dir, &format!("{tag}.fka"));
        let r = p(&dir, &format!("{tag}.json"));
        let mut args = vec!["cluster", "--in", s(&x), "-k", "12", "--seed", "5"];
        args.extend_from_slice(&["--assignments-out", s(&a), "--report-out", s(&r)]);
        args.extend_from_slice(extra);
        ok(&args);
        (std::fs::read(&a).unwrap(), report(&r))
    };
    let (a_in, mut r_in) = run_with(&[], "in");
    let (a_whole, mut r_whole) = run_with(&["--out-of-core", "--chunk-points", "5000"], "whole");
    let (a_split, r_split) = run_with(&["--out-of-core", "--chunk-points", "777"], "split");
    assert_eq!(a_in, a_whole);
    assert_eq!(a_in, a_split);
    assert_eq!(r_in["centroids"], r_split["centroids"]);
    let iters = r_in["iterations_run"].as_u64().unwrap();
    assert_eq!(r_in["counters"]["elements_streamed"], 0);
    assert_eq!(r_whole["counters"]["elements_streamed"], (iters + 1) * 5000);
    r_in["counters"].as_object_mut().unwrap().remove("elements_streamed");
    r_whole["counters"].as_object_mut().unwrap().remove("elements_streamed");
    assert_eq!(r_in, r_whole);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let x = two_blobs(&dir);
    assert_eq!(code(&["cluster", "--in", s(&x), "-k", "5"]), 1);
    assert_eq!(code(&["cluster", "--in", s(&x)]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["gen", "--out", s(&p(&dir, "z.fkm")), "--points", "5", "--true-clusters", "1", "--dims", "0"]), 1);
    assert_eq!(code(&["--help"]), 0);

    let mut bytes = std::fs::read(&x).unwrap();
    bytes[8] = 7;
    let bad = p(&dir, "bad.fkm");
    std::fs::write(&bad, &bytes).unwrap();
    let out = run(&["cluster", "--in", s(&bad), "-k", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dtype"));
    std::fs::write(&bad, &bytes[..20]).unwrap();
    assert_eq!(code(&["info", s(&bad)]), 2);

    let out = run(&["cluster", "--in", s(&x), "-k", "2", "--engine", "baseline", "--mem-limit", "16"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of memory"));
    assert_eq!(code(&["cluster", "--in", s(&x), "-k", "2", "--engine", "flash", "--mem-limit", "16"]), 0);
    assert_eq!(code(&["cluster", "--in", s(&x), "-k", "2", "--engine", "baseline", "--out-of-core"]), 1);

    let out = run(&["gen", "--out", "/nonexistent-dir/x.fkm", "--points", "4", "--true-clusters", "1", "--dims", "1"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent-dir/x.fkm"));

    let out = bin().env("FLASHMEANS_WORKERS", "zero").args(["info", s(&x)]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().env("FLASHMEANS_WORKERS", "2").args(["info", s(&x)]).output().unwrap();
    assert!(out.status.success());
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        flashmeans_cli::bench::COLUMNS.to_vec()
    );
    r.records().map(Result::unwrap).collect()
}

#[test]
fn bench_rows_and_counter_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(&dir, "bench.csv");
    ok(&[
        "bench", "--points", "2048", "--clusters", "32", "--dims", "8", "--batch", "2",
        "--iters", "3", "--out", s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(!text.contains('\r'));
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 6);
    let (b, n, k, e) = (2u64, 2048u64, 32u64, 4u64);
    for r in &rows {
        let col = |i: usize| r[i].parse::<u64>().unwrap();
        assert_eq!(&r[13], "ok");
        match (&r[0], &r[1]) {
            ("baseline", "assign") => {
                assert_eq!(col(9), 2 * b * n * k * e);
                assert_eq!(col(10), 2 * b * n * k * e);
            }
            ("flash", "assign") => assert_eq!(col(9) + col(10), 0),
            ("baseline", "update") => assert_eq!(col(11), b * n),
            ("flash", "update") => {
                let chunk = 256u64;
                assert!(col(11) <= b * (k + n.div_ceil(chunk) - 1), "{}", col(11));
            }
            _ => {}
        }
    }
}

#[test]
fn bench_marks_out_of_memory_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(&dir, "bench.csv");
    ok(&[
        "bench", "--points", "1024", "--clusters", "64", "--dims", "4", "--iters", "3",
        "--mem-limit", "1000", "--out", s(&out),
    ]);
    let rows = csv_rows(&out);
    let status: Vec<(&str, &str, &str)> = rows.iter().map(|r| (&r[0], &r[1], &r[13])).collect();
    assert!(status.contains(&("baseline", "assign", "oom")));
    assert!(status.contains(&("baseline", "e2e", "oom")));
    assert!(status.contains(&("baseline", "update", "ok")));
    assert!(status.iter().filter(|s| s.0 == "flash").all(|s| s.2 == "ok"));
}

#[test]
fn tune_trivial_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(&dir, "tune.csv");
    let line = ok(&[
        "tune", "--points", "8", "--clusters", "8", "--dims", "2", "--workers", "1", "--out", s(&out),
    ]);
    assert!(line.starts_with("candidates=1 "), "{line}");
    assert!(line.contains("heuristic=[b_n=8 b_k=8 update_chunk=8] tuned=[b_n=8 b_k=8 update_chunk=8]"));

    let configs = |path: &Path| -> Vec<String> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    let args = |o: &Path| {
        ok(&[
            "tune", "--points", "512", "--clusters", "64", "--dims", "4", "--workers", "1", "--seed", "3",
            "--out", s(o),
        ])
    };
    let (o1, o2) = (p(&dir, "t1.csv"), p(&dir, "t2.csv"));
    let l1 = args(&o1);
    args(&o2);
    assert_eq!(configs(&o1), configs(&o2));
    assert_eq!(configs(&o1)[0], "b_n,b_k,update_chunk");
    let n: usize = l1.split_whitespace().next().unwrap().trim_start_matches("candidates=").parse().unwrap();
    assert_eq!(n, configs(&o1).len() - 1);
    assert!(n >= 16);
    let ratio: f64 = l1.rsplit_once("time_ratio=").unwrap().1.trim().parse().unwrap();
    assert!(ratio >= 10.0, "{l1}");
}
