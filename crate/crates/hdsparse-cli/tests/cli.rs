use std::path::Path;
use std::process::{Command, Output};

fn hdsparse(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hdsparse"));
    c.current_dir(dir);
    for (k, _) in std::env::vars() {
        if k.starts_with("HDSL_") {
            c.env_remove(k);
        }
    }
    c
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut c = hdsparse(dir);
    c.args(["--out-dir", "sim", "simulate", "--n", "100", "--p", "20", "--signal", "four-fixed"]);
    c.args(extra);
    ok(c.output().unwrap());
}

#[test]
fn simulate_writes_data_and_truth() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), &[]);
    let data = std::fs::read_to_string(d.path().join("sim/data.csv")).unwrap();
    let header = data.lines().next().unwrap();
    assert!(header.starts_with("x1,x2,") && header.ends_with(",y"));
    assert_eq!(data.lines().count(), 101);
    let rep = json(d.path().join("sim/report.json"));
    assert_eq!(rep["support"].as_array().unwrap().len(), 4);
    assert!(std::fs::read_to_string(d.path().join("sim/beta.csv")).unwrap().starts_with("feature,beta\n"));
}

#[test]
fn seed_precedence_flag_env_config() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("cfg.json"), r#"{"seed": 5, "simulate": {"n": 30}}"#).unwrap();
    let seed = |env: Option<&str>, flag: Option<&str>| {
        let mut c = hdsparse(d.path());
        c.args(["--config", "cfg.json", "--out-dir", "o", "simulate", "--p", "60"]);
        if let Some(e) = env {
            c.env("HDSL_SEED", e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        ok(c.output().unwrap());
        let rep = json(d.path().join("o/report.json"));
        (rep["spec"]["seed"].as_u64().unwrap(), rep["spec"]["n"].as_u64().unwrap())
    };
    assert_eq!(seed(None, None), (5, 30));
    assert_eq!(seed(Some("6"), None), (6, 30));
    assert_eq!(seed(Some("6"), Some("7")), (7, 30));
}

#[test]
fn screen_ranks_every_feature() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), &[]);
    ok(hdsparse(d.path())
        .args(["--out-dir", "scr", "screen", "--data", "sim/data.csv", "--method", "pearson"])
        .output()
        .unwrap());
    let csv = std::fs::read_to_string(d.path().join("scr/metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("feature,score,rank,method"));
    let ranks: Vec<usize> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(ranks, (1..=20).collect::<Vec<_>>());
}

#[test]
fn fit_with_each_solver() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), &[]);
    let mut objectives = Vec::new();
    for solver in ["ag", "ag-orig", "pg", "pcg"] {
        let out = format!("fit_{solver}");
        ok(hdsparse(d.path())
            .args(["--out-dir", &out, "fit", "--data", "sim/data.csv", "--penalty", "l1", "--lambda", "0.3"])
            .args(["--solver", solver, "--tol", "1e-9", "--max-iter", "20000"])
            .output()
            .unwrap());
        let rep = json(d.path().join(&out).join("report.json"));
        assert_eq!(rep["converged"], true, "{solver}");
        assert_eq!(rep["coefficients"].as_array().unwrap().len(), 21);
        assert!(d.path().join(&out).join("traces/objective.csv").exists());
        objectives.push(rep["objective"].as_f64().unwrap());
    }
    // convex problem: every solver reaches the same minimum
    for o in &objectives {
        assert!((o - objectives[0]).abs() <= 1e-6 * objectives[0].abs(), "{objectives:?}");
    }
}

#[test]
fn fit_selects_lambda_when_not_given() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), &[]);
    ok(hdsparse(d.path())
        .args(["--out-dir", "f", "fit", "--data", "sim/data.csv", "--path-len", "10"])
        .output()
        .unwrap());
    let rep = json(d.path().join("f/report.json"));
    let lambdas = rep["path"]["lambdas"].as_array().unwrap();
    assert_eq!(lambdas.len(), 10);
    let chosen = rep["penalty"]["lambda"].as_f64().unwrap();
    assert!(lambdas.iter().any(|l| l.as_f64().unwrap() == chosen));
}

#[test]
fn qfit_writes_model() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), &[]);
    ok(hdsparse(d.path())
        .args(["--out-dir", "q", "qfit", "--data", "sim/data.csv", "--psi", "identity", "--outer-tol", "1e-10"])
        .output()
        .unwrap());
    let m = json(d.path().join("q/model.json"));
    for k in ["theta", "sigma2", "q_train", "n_train", "penalty"] {
        assert!(m.get(k).is_some(), "{k}");
    }
    assert_eq!(m["n_train"], 100);
}

#[test]
fn bench_is_reproducible_across_workers() {
    let d = tempfile::tempdir().unwrap();
    let run = |workers: &str, out: &str| {
        ok(hdsparse(d.path())
            .args(["--seed", "3", "--workers", workers, "--out-dir", out, "bench", "signal-recovery"])
            .args(["--n", "50", "--p", "80", "--replications", "3", "--taus", "0.1,0.5", "--path-len", "5"])
            .output()
            .unwrap());
        std::fs::read_to_string(d.path().join(out).join("metrics.csv")).unwrap()
    };
    let a = run("1", "a");
    let b = run("3", "b");
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 1 + 2 * 3 * 4);
    let rep = json(d.path().join("a/report.json"));
    assert_eq!(rep["kind"], "signal_recovery");
}

#[test]
fn bad_input_fails_with_message() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.csv"), "a,y\n1,2\n3,NaN\n").unwrap();
    let out = hdsparse(d.path())
        .args(["--out-dir", "o", "fit", "--data", "bad.csv", "--lambda", "0.1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3"), "{err}");
    let out = hdsparse(d.path()).args(["fit", "--lambda", "0.1"]).output().unwrap();
    assert!(!out.status.success());
}
