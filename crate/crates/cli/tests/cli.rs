//! End-to-end runs of the `issr` binary.

use std::path::Path;
use std::process::{Command, Output};

fn issr(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_issr")).args(args).env("ISSR_OUTPUT_DIR", out_dir).output().expect("binary runs")
}

fn records(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn spvv_sweep_has_one_row_per_point_and_rising_issr_utilization() {
    let dir = tempfile::tempdir().unwrap();
    let out = issr(&["sweep", "spvv", "--nnz", "1,2,5,10,50,100,1000"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = records(&dir.path().join("spvv.csv"));
    assert_eq!(rows.len(), 7 * 3 * 2);
    for w in ["16", "32"] {
        let util: Vec<f64> =
            rows.iter().filter(|r| &r[1] == "issr" && &r[2] == w).map(|r| r[6].parse().unwrap()).collect();
        assert_eq!(util.len(), 7);
        assert!(util.windows(2).all(|p| p[0] < p[1]), "W{w}: {util:?}");
    }
}

#[test]
fn empty_fiber_reports_zero_utilization() {
    let dir = tempfile::tempdir().unwrap();
    let out = issr(&["spvv", "--nnz", "0"], dir.path());
    assert!(out.status.success());
    let rows = records(&dir.path().join("spvv.csv"));
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| &r[5] == "0" && r[6].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn matrix_file_run_has_speedup_column() {
    let dir = tempfile::tempdir().unwrap();
    let mtx = dir.path().join("g-set.mtx");
    let mut text = String::from("%%MatrixMarket matrix coordinate pattern symmetric\n40 40 60\n");
    for k in 0..60u32 {
        let (r, c) = (1 + (k * 7) % 40, 1 + (k * 3) % 40);
        text.push_str(&format!("{} {}\n", r.max(c), r.min(c)));
    }
    std::fs::write(&mtx, text).unwrap();
    let csv = dir.path().join("out.csv");
    let out = issr(
        &[
            "csrmv",
            "--matrix",
            mtx.to_str().unwrap(),
            "--variant",
            "base,issr",
            "--w",
            "16",
            "-o",
            csv.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = records(&csv);
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][3], "g-set");
    let speedup: f64 = rows[1][8].parse().unwrap();
    let cycles: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert_eq!(speedup, cycles[0] / cycles[1]);
}

#[test]
fn identical_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let out = issr(&["csrmm", "--nnz-per-row", "3,20", "--rows", "40", "-o", path.to_str().unwrap()], dir.path());
        assert!(out.status.success());
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.mtx");
    std::fs::write(&bad, "%%MatrixMarket matrix coordinate real general\n3 3 2\n1 1 1.5\nnot a line\n").unwrap();
    let out = issr(&["csrmv", "--matrix", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
    assert_eq!(issr(&["spvv", "--variant", "fast"], dir.path()).status.code(), Some(2));
    assert_eq!(issr(&["csrmm", "--ncols", "3"], dir.path()).status.code(), Some(2));
    assert_eq!(issr(&["spvv", "--nnz", "10", "--dim", "5"], dir.path()).status.code(), Some(2));
}

#[test]
fn accumulator_override_still_matches_reference() {
    let dir = tempfile::tempdir().unwrap();
    for k in ["1", "2", "7"] {
        let out = issr(&["spvv", "--nnz", "37,300", "--variant", "issr", "--accumulators", k, "-o", "-"], dir.path());
        assert!(out.status.success(), "K={k}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn stream_kernels_and_cluster_run() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["codebook", "--count", "0,50"][..],
        &["scatter", "--count", "50", "--len", "16"][..],
        &["cluster-csrmv", "--nnz-per-row", "4", "--rows", "300", "--variant", "base,issr", "--w", "16", "--per-core"]
            [..],
    ] {
        let out = issr(args, dir.path());
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let cluster = records(&dir.path().join("cluster-csrmv.csv"));
    assert_eq!(cluster.len(), 2 * 9);
}

#[test]
fn verify_reports_every_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let out = issr(&["verify", "--json", "--instances", "20", "--allow-known-gaps"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 10);
}

#[test]
fn verify_with_unit_latency_keeps_functional_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = issr(&["verify", "--json", "--instances", "20", "--latency", "1"], dir.path());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let functional = report.as_array().unwrap().iter().find(|r| r["id"] == 9).unwrap();
    assert_eq!(functional["passed"], true, "{functional}");
}
