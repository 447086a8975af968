//! End-to-end subcommand tests over temporary files.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_stratest")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn fully_coded_csv(path: &Path) {
    let mut body = String::from("id,arm,y_hat,y,stratum,wc\n");
    for arm in [0, 1] {
        for i in 0..30 {
            let stratum = if i < 15 { "lo" } else { "hi" };
            let y = 1.0 + 0.15 * f64::from(i) + 0.5 * f64::from(arm);
            let y_hat = y + 0.3 + 0.05 * f64::from(i % 7);
            body.push_str(&format!(
                "a{arm}u{i:02},{arm},{y_hat},{y},{stratum},{}\n",
                100 + i * 10
            ));
        }
    }
    std::fs::write(path, body).unwrap();
}

#[test]
fn estimate_full_coding_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.csv");
    fully_coded_csv(&pop);
    let pop_str = pop.to_str().unwrap();
    let common = [
        "--input",
        pop_str,
        "--arm-col",
        "arm",
        "--stratum-col",
        "stratum",
        "--format",
        "csv",
    ];
    let strat = run(&[&["estimate", "--method", "ma-stratified"], &common[..]].concat());
    assert!(strat.status.success());
    let oracle = run(&[&["estimate", "--method", "oracle"], &common[..]].concat());
    assert!(oracle.status.success());
    let pick = |out: &Output| -> f64 {
        let text = String::from_utf8_lossy(&out.stdout).to_string();
        let row = text.lines().nth(1).unwrap().to_string();
        row.split(',').nth(4).unwrap().parse().unwrap()
    };
    let diff = (pick(&strat) - pick(&oracle)).abs();
    assert!(
        diff < 1e-10,
        "full-coding stratified estimate differs from oracle by {diff}"
    );
}

#[test]
fn allocate_neyman_summary_example() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.csv");
    std::fs::write(&summary, "arm,stratum,N,sd\n0,1,100,1\n0,2,100,3\n").unwrap();
    let out = run(&[
        "allocate",
        "--input",
        summary.to_str().unwrap(),
        "--summary",
        "--budget",
        "40",
        "--method",
        "neyman",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "arm,stratum,N,n");
    assert_eq!(rows[1], "0,1,100,10");
    assert_eq!(rows[2], "0,2,100,30");
}

#[test]
fn allocation_report_feeds_decompose() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.csv");
    fully_coded_csv(&pop);
    let alloc = dir.path().join("alloc.csv");
    let out = run(&[
        "allocate",
        "--input",
        pop.to_str().unwrap(),
        "--arm-col",
        "arm",
        "--stratum-col",
        "stratum",
        "--budget",
        "10",
        "--method",
        "neyman",
        "--output",
        alloc.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(alloc.exists());
    let out = run(&[
        "decompose",
        "--input",
        pop.to_str().unwrap(),
        "--arm-col",
        "arm",
        "--stratum-col",
        "stratum",
        "--alloc",
        alloc.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.lines().count() >= 4); // arm0, arm1, total
    assert!(text.starts_with("scope,bs,ws,delta"));
}

#[test]
fn stratify_ranks_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.csv");
    // Larger table so candidates clear the default min-size filter.
    let mut body = String::from("id,y_hat,y,wc\n");
    for i in 0..1200 {
        let y_hat = (f64::from(i % 97)).sqrt() * 2.0 + f64::from(i % 11) * 0.3;
        body.push_str(&format!("u{i:04},{y_hat},,{}\n", 80 + i % 400));
    }
    std::fs::write(&pop, body).unwrap();
    let report = dir.path().join("candidates.csv");
    let out = run(&[
        "stratify",
        "--input",
        pop.to_str().unwrap(),
        "--feature-col",
        "wc",
        "--vars",
        "y_hat,wc",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&report).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "name,K,var_of_stratum_means,balance_ratio,min_size"
    );
    let vars: Vec<f64> = lines
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(!vars.is_empty());
    assert!(
        vars.windows(2).all(|w| w[0] >= w[1]),
        "not sorted: {vars:?}"
    );
    assert!(report
        .with_file_name("candidates.csv.manifest.json")
        .exists());
}

#[test]
fn power_curve_over_grid() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("design.csv");
    std::fs::write(
        &design,
        "arm,stratum,N,resid_mean,resid_var,y_var\n\
         0,1,250,-0.8,1.0,9.0\n0,2,250,0.8,1.0,9.0\n\
         1,1,250,-0.8,1.0,9.0\n1,2,250,0.8,1.0,9.0\n",
    )
    .unwrap();
    let out = run(&[
        "power",
        "--design",
        design.to_str().unwrap(),
        "--alpha",
        "0.05",
        "--power",
        "0.8",
        "--h-grid",
        "0.05:0.95:0.05",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 19);
    for row in rows {
        let cells: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        assert!(
            cells[2] < cells[1],
            "stratified not below SRS at h = {}",
            cells[0]
        );
    }
}

#[test]
fn usage_error_exits_two_and_data_error_exits_one() {
    let out = run(&["estimate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,arm,y_hat,y\nu1,0,1.0,\nu1,1,2.0,\n").unwrap();
    let out = run(&[
        "estimate",
        "--input",
        bad.to_str().unwrap(),
        "--arm-col",
        "arm",
        "--method",
        "oracle",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate"));

    // Two-arm file with an empty arm: a validation finding, also exit 1.
    let empty_arm = dir.path().join("empty_arm.csv");
    std::fs::write(&empty_arm, "id,arm,y_hat,y\nu1,1,1.0,1.0\nu2,1,2.0,2.0\n").unwrap();
    let out = run(&[
        "estimate",
        "--input",
        empty_arm.to_str().unwrap(),
        "--arm-col",
        "arm",
        "--method",
        "oracle",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("arm 0"));
}

#[test]
fn inputs_are_never_mutated() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.csv");
    fully_coded_csv(&pop);
    let before = std::fs::read(&pop).unwrap();
    let out_alloc = dir.path().join("alloc.csv");
    run(&[
        "allocate",
        "--input",
        pop.to_str().unwrap(),
        "--arm-col",
        "arm",
        "--stratum-col",
        "stratum",
        "--budget",
        "8",
        "--method",
        "proportional",
        "--output",
        out_alloc.to_str().unwrap(),
    ]);
    run(&[
        "estimate",
        "--input",
        pop.to_str().unwrap(),
        "--arm-col",
        "arm",
        "--method",
        "ma-srs",
    ]);
    assert_eq!(before, std::fs::read(&pop).unwrap());
}

#[test]
fn estimand_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.csv");
    std::fs::write(&pop, "id,y_hat,y\nu1,1.0,1.5\nu2,2.0,2.5\n").unwrap();
    let out = run(&[
        "estimate",
        "--input",
        pop.to_str().unwrap(),
        "--method",
        "oracle",
        "--estimand",
        "ate",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&[
        "estimate",
        "--input",
        pop.to_str().unwrap(),
        "--method",
        "oracle",
        "--estimand",
        "mean",
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed["estimand"], "mean");
    assert_eq!(parsed["estimate"], 2.0);
}

#[test]
fn simulate_repeats_mode_produces_rows() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.csv");
    fully_coded_csv(&pop);
    let out_path = dir.path().join("repeats.csv");
    let out = run(&[
        "simulate",
        "--repeats",
        "5",
        "--input",
        pop.to_str().unwrap(),
        "--arm-col",
        "arm",
        "--stratum-col",
        "stratum",
        "--budget-fraction",
        "0.4",
        "--seed",
        "9",
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 * 4);
    assert!(text.starts_with("repeat,method,estimate,se"));
}
