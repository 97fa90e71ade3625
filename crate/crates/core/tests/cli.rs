// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_ingarch-cpt");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("CPT_CACHE_DIR", dir.join("cache"))
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn simulate(dir: &Path, name: &str, after: Option<&str>) {
    let mut args = vec![
        "--seed",
        "5",
        "simulate",
        "--model",
        "poisson-ingarch",
        "--theta",
        "1,0.2,0.15",
        "--n",
        "300",
        "--output",
        name,
    ];
    if let Some(a) = after {
        args.extend(["--theta-after", a]);
    }
    let o = run(dir, &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes_follow_the_decision() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "h1.csv", Some("5,0.2,0.15"));
    simulate(d.path(), "h0.csv", None);
    let t = |input: &str, c: &str| {
        run(
            d.path(),
            &[
                "test",
                "--input",
                input,
                "--model",
                "poisson-ingarch",
                "--critical-value",
                c,
                "--output",
                "r.json",
            ],
        )
    };
    assert_eq!(code(&t("h1.csv", "3.0")), 3);
    assert_eq!(code(&t("h0.csv", "1000")), 0);
}

#[test]
fn usage_and_data_errors() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.csv"), "count\n1\n2.5\n").unwrap();
    std::fs::write(d.path().join("three.csv"), "0\n1\n3\n").unwrap();
    assert_eq!(code(&run(d.path(), &["frobnicate"])), 1);
    assert_eq!(
        code(&run(d.path(), &["test", "--model", "poisson-ingarch"])),
        1
    );
    assert_eq!(
        code(&run(
            d.path(),
            &["test", "--input", "bad.csv", "--model", "no-such"]
        )),
        1
    );
    let o = run(
        d.path(),
        &["fit", "--input", "bad.csv", "--model", "poisson-ingarch"],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 3"));
    let o = run(
        d.path(),
        &[
            "fit",
            "--input",
            "three.csv",
            "--model",
            "bernoulli-ingarch",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("support"));
    assert_eq!(
        code(&run(
            d.path(),
            &[
                "fit",
                "--input",
                "missing.csv",
                "--model",
                "poisson-ingarch"
            ]
        )),
        2
    );
    assert_eq!(code(&run(d.path(), &["--help"])), 0);
}

#[test]
fn outputs_are_deterministic() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "a.csv", Some("3,0.2,0.15"));
    simulate(d.path(), "b.csv", Some("3,0.2,0.15"));
    assert_eq!(
        std::fs::read(d.path().join("a.csv")).unwrap(),
        std::fs::read(d.path().join("b.csv")).unwrap()
    );
    for out in ["c1", "c2"] {
        let o = run(
            d.path(),
            &[
                "test",
                "--input",
                "a.csv",
                "--model",
                "poisson-ingarch",
                "--critical-value",
                "3",
                "--output",
                &format!("{out}.json"),
                "--curve-csv",
                &format!("{out}.csv"),
            ],
        );
        assert_eq!(code(&o), 3);
    }
    for ext in ["json", "csv"] {
        let a = std::fs::read(d.path().join(format!("c1.{ext}"))).unwrap();
        let b = std::fs::read(d.path().join(format!("c2.{ext}"))).unwrap();
        assert_eq!(a, b, "{ext}");
    }
    let curve = std::fs::read_to_string(d.path().join("c1.csv")).unwrap();
    assert!(curve.starts_with("k,C_nk,valid\n"));
}

#[test]
fn critval_uses_the_cache() {
    let d = tempfile::tempdir().unwrap();
    let args = [
        "--seed", "3", "critval", "--d", "1", "--table", "--paths", "4000", "--grid", "256",
    ];
    let a = run(d.path(), &args);
    assert_eq!(code(&a), 0);
    let files: Vec<_> = std::fs::read_dir(d.path().join("cache")).unwrap().collect();
    assert_eq!(files.len(), 1);
    let b = run(d.path(), &args);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("alpha,c_alpha\n0.1,"));
}

#[test]
fn fit_reports_summary() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "s.csv", None);
    let o = run(
        d.path(),
        &[
            "fit",
            "--input",
            "s.csv",
            "--model",
            "poisson-ingarch",
            "--column",
            "y",
            "--from",
            "1",
            "--to",
            "200",
        ],
    );
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["series"]["n"], 300);
    assert_eq!(v["fit"]["segment"], serde_json::json!([1, 200]));
    assert_eq!(v["fit"]["theta"].as_array().unwrap().len(), 3);
}

#[test]
fn bench_plan_file() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("plan.txt"),
        "label = tiny\nmodel = poisson-ingarch\ntheta0 = 1,0.2,0.15\ntheta1 = 5,0.2,0.15\nn = 200\nreplications = 4\ncritical_value = 3.0\n",
    )
    .unwrap();
    let o = run(
        d.path(),
        &["bench", "--plan", "plan.txt", "--output", "out.csv"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.path().join("out.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scenario,n,r_or_model,rate,wilson_lo,wilson_hi,median_abs_that_err,seconds"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "tiny");
    assert_eq!(row[1], "200");
    assert_eq!(row[3], "1.000000");
}
