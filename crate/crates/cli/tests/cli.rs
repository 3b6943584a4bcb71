use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn spherelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spherelab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write(dir: &Path, name: &str, content: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, content).unwrap();
    p.to_str().unwrap().to_string()
}

fn circle_csv(n: usize) -> String {
    let mut s = String::from("d0,d1\n");
    for k in 0..n {
        let a = std::f64::consts::TAU * k as f64 / n as f64;
        s.push_str(&format!("{},{}\n", a.cos(), a.sin()));
    }
    s
}

#[test]
fn bounds_prints_report() {
    let out = spherelab(&["bounds", "--dim", "2", "--t", "2", "--batch", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let lower = v["population_lower"].as_f64().unwrap();
    assert!((lower + 1.57502).abs() < 1e-5, "{lower}");
    assert_eq!(v["population_upper"].as_f64(), Some(0.0));
    assert!(v["pdist_lower"].is_number());
    assert_eq!(v["params"]["m"].as_u64(), Some(2));
}

#[test]
fn usage_errors_exit_2_with_one_line() {
    let out = spherelab(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(
        String::from_utf8_lossy(&out.stderr).trim().lines().count(),
        1
    );
    assert_eq!(spherelab(&["bounds"]).status.code(), Some(2));
    assert_eq!(spherelab(&["bounds", "--dim", "x"]).status.code(), Some(2));
    assert_eq!(spherelab(&["bounds", "--dim", "1"]).status.code(), Some(2));
    assert_eq!(spherelab(&[]).status.code(), Some(2));
    assert_eq!(spherelab(&["--help"]).status.code(), Some(0));
}

#[test]
fn in_process_run_matches_binary_codes() {
    assert_eq!(spherelab_cli::run(["spherelab", "bounds", "--dim", "3"]), 0);
    assert_eq!(spherelab_cli::run(["spherelab", "nope"]), 2);
}

#[test]
fn entropy_check_on_valid_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "f.csv", &circle_csv(16));
    let out = spherelab(&["entropy-check", "--features", &f, "--tau", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["name"], "entropy-check");
    assert_eq!(v["verdict"], "pass");
    for k in ["name", "params", "measurements", "verdict", "tolerance"] {
        assert!(v.get(k).is_some(), "missing {k}");
    }
}

#[test]
fn bad_inputs_fail_fast() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.csv", "d0,d1\n1,0\n0.9,0\n");
    let out = spherelab(&["entropy-check", "--features", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 1"));

    let f = write(dir.path(), "f.csv", &circle_csv(4));
    let pairs = write(dir.path(), "p.csv", "left_index,right_index\n0,9\n");
    let out = spherelab(&["metrics", "--features", &f, "--pairs", &pairs]);
    assert_eq!(out.status.code(), Some(2));

    let labels = write(dir.path(), "l.csv", "label\n0\n1\n");
    let out = spherelab(&["knn", "--features", &f, "--labels", &labels]);
    assert_eq!(out.status.code(), Some(2));

    // a missing report directory is caught before any work
    let report = dir.path().join("missing/r.json");
    let out = spherelab(&["bounds", "--dim", "2", "--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn metrics_keys_follow_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "f.csv", &circle_csv(6));
    let out = spherelab(&["metrics", "--features", &f]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, vec!["resub_entropy", "unif_cdist", "unif_pdist"]);

    let pairs = write(
        dir.path(),
        "p.csv",
        "left_index,right_index\n0,0\n1,1\n2,3\n",
    );
    let labels = write(dir.path(), "l.csv", "label\n0\n0\n0\n1\n1\n1\n");
    let out = spherelab(&[
        "metrics",
        "--features",
        &f,
        "--pairs",
        &pairs,
        "--labels",
        &labels,
        "--tau",
        "0.5",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    for k in [
        "align",
        "unif_pdist",
        "unif_cdist",
        "contrastive_minibatch",
        "limit_first_term",
        "limit_second_term",
        "resub_entropy",
        "class_concentration",
    ] {
        assert!(v[k].is_number(), "missing {k}");
    }
    // one of three pairs is at squared distance 1 (60 degrees apart)
    assert!((v["align"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn optimize_points_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("points.csv");
    let rep = dir.path().join("report.json");
    let out = spherelab(&[
        "optimize-points",
        "--n",
        "4",
        "--dim",
        "3",
        "--t",
        "1",
        "--steps",
        "200",
        "--seed",
        "3",
        "--out",
        pts.to_str().unwrap(),
        "--report",
        rep.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    for k in [
        "final_objective",
        "final_unif_pdist",
        "grad_norm",
        "steps_taken",
        "trajectory",
    ] {
        assert!(v.get(k).is_some(), "missing {k}");
    }
    assert!(v["trajectory"].as_array().unwrap().len() >= 2);
    let f = spherelab::io::load_features(&pts).unwrap();
    assert_eq!((f.n_points(), f.dim()), (4, 3));
}

#[test]
fn optimize_embed_from_json() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write(
        dir.path(),
        "data.json",
        r#"{"n_items": 6, "views_per_item": 2, "dim": 3, "labels": [0,0,0,1,1,1], "seed": 2}"#,
    );
    let spec = write(
        dir.path(),
        "spec.json",
        r#"{"w_align": 0.98, "w_unif": 0.96}"#,
    );
    let l = dir.path().join("l.csv");
    let r = dir.path().join("r.csv");
    let out = spherelab(&[
        "optimize-embed",
        "--dataset",
        &ds,
        "--spec",
        &spec,
        "--steps",
        "50",
        "--out-left",
        l.to_str().unwrap(),
        "--out-right",
        r.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = json(&out);
    assert!(v["final_align"].is_number());
    assert_eq!(spherelab::io::load_features(&l).unwrap().n_points(), 6);

    let bad = write(dir.path(), "bad.json", r#"{"n_items": 6}"#);
    let out = spherelab(&["optimize-embed", "--dataset", &bad, "--spec", &spec]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn experiment_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "f.csv", &circle_csv(12));
    let labels = write(
        dir.path(),
        "l.csv",
        "label\n0\n0\n0\n0\n0\n0\n1\n1\n1\n1\n1\n1\n",
    );

    let out = spherelab(&["bruteforce", "--n", "2", "--grid", "4"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["verdict"], "pass");

    let out = spherelab(&["gradcheck", "--objective", "unif_pdist", "--n", "6"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        spherelab(&["gradcheck", "--objective", "bogus"])
            .status
            .code(),
        Some(2)
    );

    let out = spherelab(&["knn", "--features", &f, "--labels", &labels, "--k", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["verdict"], "informational");

    let curve = dir.path().join("kde.csv");
    let out = spherelab(&[
        "kde",
        "--features",
        &f,
        "--kappa",
        "4",
        "--resolution",
        "64",
        "--out",
        curve.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&curve).unwrap();
    assert!(text.starts_with("angle,density\n"));
    assert_eq!(text.lines().count(), 65);

    let hist = dir.path().join("hist.csv");
    let out = spherelab(&[
        "pairhist",
        "--features",
        &f,
        "--features-right",
        &f,
        "--bins",
        "4",
        "--out",
        hist.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&hist).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "0.25,12");

    let out = spherelab(&[
        "asymptotics",
        "--n",
        "64",
        "--m-min-exp",
        "3",
        "--m-max-exp",
        "6",
        "--trials",
        "8",
    ]);
    assert!(matches!(out.status.code(), Some(0) | Some(1)));
    assert_eq!(json(&out)["name"], "asymptotics");
}

#[test]
fn failing_verdict_exits_1() {
    // central differences at the smallest allowed step are dominated by
    // roundoff on a 40-point energy
    let out = spherelab(&[
        "gradcheck",
        "--objective",
        "point_energy",
        "--eps",
        "1e-8",
        "--n",
        "40",
    ]);
    assert_eq!(json(&out)["verdict"], "fail");
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn strict_runs_are_byte_identical() {
    let args = [
        "asymptotics",
        "--n",
        "128",
        "--m-min-exp",
        "4",
        "--m-max-exp",
        "8",
        "--trials",
        "16",
        "--seed",
        "7",
        "--strict",
    ];
    let a = spherelab(&args);
    let b = spherelab(&args);
    assert_eq!(a.stdout, b.stdout);
    let parallel = spherelab(&args[..args.len() - 1]);
    assert_eq!(a.stdout, parallel.stdout);

    let args = [
        "optimize-points",
        "--n",
        "10",
        "--dim",
        "3",
        "--steps",
        "40",
        "--seed",
        "1",
        "--strict",
    ];
    assert_eq!(spherelab(&args).stdout, spherelab(&args).stdout);
}
