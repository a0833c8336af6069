use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cohortbayes::chain_io::read_chain;
use cohortbayes::core::baselines::{build_weighted_view, newton_solve, WeightScheme, DEFAULT_MAX_ITER, DEFAULT_TOL};
use cohortbayes::csv_io::read_cohort_path;
use cohortbayes::manifest::RunManifest;
use serde_json::json;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cohortbayes"))
        .args(args)
        .env_remove("COHORTBAYES_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_json(dir: &Path, name: &str, v: serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, design: serde_json::Value, out: &str) -> PathBuf {
    let cfg = write_json(dir, &format!("{out}.json"), design);
    let out = dir.join(out);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    out.join("cohort.csv")
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn simulate_is_reproducible_and_complete() {
    let tmp = TempDir::new().unwrap();
    let design = json!({"design": "weibull", "n": 500, "subcohort_p": 1.0, "seed": 3});
    let a = simulate(tmp.path(), design.clone(), "a");
    let b = simulate(tmp.path(), design, "b");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let table = rows(&a);
    assert_eq!(table.len(), 500);
    let header = csv::Reader::from_path(&a).unwrap().headers().unwrap().clone();
    let z = header.iter().position(|h| h == "z1").unwrap();
    assert!(table.iter().all(|r| !r[z].is_empty()));

    let m: RunManifest = serde_json::from_str(&fs::read_to_string(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.command, "simulate");
    assert_eq!(m.seed, Some(3));
    assert_eq!(m.outputs, vec![a.clone()]);

    let cfg = tmp.path().join("a.json");
    let c = tmp.path().join("c");
    ok(&["simulate", "--config", s(&cfg), "--seed", "4", "--out", s(&c)]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(c.join("cohort.csv")).unwrap());
}

#[test]
fn fit_writes_reproducible_chains() {
    let tmp = TempDir::new().unwrap();
    let data = simulate(tmp.path(), json!({"design": "weibull", "n": 300, "subcohort_p": 0.25, "beta0": 0.3, "seed": 1}), "sim");
    let cfg = write_json(
        tmp.path(),
        "fit.json",
        json!({
            "data": "sim/cohort.csv",
            "model": "bootstrap",
            "split_rhat": true,
            "chain": {"algorithm": "alg1", "n_iters": 400, "burn_in": 100, "proposal_cov": [[0.1]],
                      "prior": {"kind": "improper_uniform"}, "seed": 11}
        }),
    );
    assert!(data.exists());
    let one = tmp.path().join("one");
    let two = tmp.path().join("two");
    ok(&["fit", "--config", s(&cfg), "--chains", "3", "--out", s(&one)]);
    ok(&["fit", "--config", s(&cfg), "--chains", "3", "--workers", "2", "--out", s(&two)]);
    for k in 0..3 {
        let name = format!("chain_{k}.jsonl");
        let a = fs::read(one.join(&name)).unwrap();
        assert_eq!(a, fs::read(two.join(&name)).unwrap(), "{name}");
        let (header, records) = read_chain(&a[..]).unwrap();
        assert_eq!(header.chain, k);
        assert_eq!(header.seed, 11);
        assert_eq!(header.parameters, vec!["z1".to_string()]);
        assert_eq!(records.len(), 400);
        assert_eq!(records[0].iter, 1);
    }
    assert_ne!(fs::read(one.join("chain_0.jsonl")).unwrap(), fs::read(one.join("chain_1.jsonl")).unwrap());
    assert_eq!(fs::read(one.join("summary.csv")).unwrap(), fs::read(two.join("summary.csv")).unwrap());

    let summary = rows(&one.join("summary.csv"));
    assert_eq!(summary.len(), 1);
    assert_eq!(&summary[0][0], "z");
    let hr: f64 = summary[0][2].parse().unwrap();
    assert!(hr > 0.0 && hr.is_finite());
    let diag = rows(&one.join("diagnostics.csv"));
    let rhat: f64 = diag[0][2].parse().unwrap();
    assert!(rhat.is_finite() && rhat > 0.9);
    assert!(!diag[0][3].is_empty());
}

#[test]
fn alg3_runs_on_the_application_analogue() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), json!({"design": "analogue", "n": 1500, "seed": 2}), "sim");
    let dim = 16;
    let cov: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| if i == j { 0.002 } else { 0.0 }).collect()).collect();
    let cfg = write_json(
        tmp.path(),
        "fit.json",
        json!({
            "data": "sim/cohort.csv",
            "model": "conjugate",
            "chain": {"algorithm": "alg3", "n_iters": 200, "burn_in": 50, "rho_xi": 0.995, "rho_z": 0.995,
                      "proposal_cov": cov, "prior": {"kind": "student_t", "df": 3.0, "scale": [2.5]}, "seed": 5}
        }),
    );
    let out = tmp.path().join("fit");
    ok(&["fit", "--config", s(&cfg), "--chains", "2", "--out", s(&out)]);
    let summary = rows(&out.join("summary.csv"));
    assert_eq!(summary.len(), dim);
    assert_eq!(summary.iter().filter(|r| &r[0] == "z").count(), 9);
    assert_eq!(summary.iter().filter(|r| &r[0] == "w").count(), 7);
}

#[test]
fn alg3_with_the_bootstrap_model_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), json!({"design": "weibull", "n": 200, "subcohort_p": 0.3, "seed": 1}), "sim");
    let cfg = write_json(
        tmp.path(),
        "fit.json",
        json!({
            "data": "sim/cohort.csv",
            "model": "bootstrap",
            "chain": {"algorithm": "alg3", "n_iters": 10, "proposal_cov": [[0.1]],
                      "prior": {"kind": "improper_uniform"}}
        }),
    );
    let out = run(&["fit", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

fn study_config(dir: &Path, name: &str, estimators: serde_json::Value) -> PathBuf {
    write_json(
        dir,
        name,
        json!({
            "sim": {"n": 400, "subcohort_p": 0.2, "replicates": 3, "seed": 9},
            "estimators": estimators,
            "chain": {"burn_in": 100, "kept": 300, "b_copies": 1, "proposal_scale": 4.0}
        }),
    )
}

#[test]
fn study_is_deterministic_across_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = study_config(tmp.path(), "study.json", json!(["full", "bayes", "post_strat"]));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["study", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["study", "--config", s(&cfg), "--workers", "3", "--out", s(&b)]);
    assert_eq!(fs::read(a.join("table.csv")).unwrap(), fs::read(b.join("table.csv")).unwrap());
    let t = rows(&a.join("table.csv"));
    assert_eq!(t.iter().map(|r| r[0].to_string()).collect::<Vec<_>>(), ["full", "bayes", "post_strat"]);
    assert_eq!(&t[0][6], "3");
}

#[test]
fn full_only_study_has_unit_efficiency() {
    let tmp = TempDir::new().unwrap();
    let cfg = study_config(tmp.path(), "study.json", json!(["full"]));
    let out = tmp.path().join("o");
    ok(&["study", "--config", s(&cfg), "--out", s(&out)]);
    let t = rows(&out.join("table.csv"));
    assert_eq!(t.len(), 1);
    assert_eq!(t[0][4].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn baselines_agree_on_a_fully_sampled_cohort() {
    let tmp = TempDir::new().unwrap();
    let data = simulate(tmp.path(), json!({"design": "weibull", "n": 400, "subcohort_p": 1.0, "beta0": 0.3, "seed": 4}), "sim");
    let cfg = write_json(tmp.path(), "b.json", json!({"data": "sim/cohort.csv", "sampling_prob": 1.0}));
    let out = tmp.path().join("o");
    ok(&["baselines", "--config", s(&cfg), "--out", s(&out)]);
    let t = rows(&out.join("estimates.csv"));
    assert_eq!(t.iter().map(|r| r[0].to_string()).collect::<Vec<_>>(), ["full", "prentice", "ipw", "post_strat"]);
    let est: Vec<f64> = t.iter().map(|r| r[3].parse().unwrap()).collect();
    for e in &est {
        assert!((e - est[0]).abs() < 1e-8, "{est:?}");
    }
    assert!(t.iter().all(|r| &r[7] == "true"));

    let cohort = read_cohort_path(&data).unwrap().cohort;
    let view = build_weighted_view(&cohort, &WeightScheme::FULL).unwrap();
    let fit = newton_solve(&view, &vec![0.0; view.dim()], DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    assert_eq!(est[0], fit.beta_hat[0]);
    assert_eq!(t[0][4].parse::<f64>().unwrap(), fit.robust_se[0]);
}

#[test]
fn baselines_reject_a_stray_sampling_probability() {
    let tmp = TempDir::new().unwrap();
    simulate(tmp.path(), json!({"design": "weibull", "n": 200, "subcohort_p": 0.3, "seed": 1}), "sim");
    let cfg = write_json(
        tmp.path(),
        "b.json",
        json!({"data": "sim/cohort.csv", "schemes": [{"kind": "prentice", "sampling_prob": 0.3}]}),
    );
    let out = run(&["baselines", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn alr_round_trips_through_the_cli() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("fa.csv");
    fs::write(&input, "id,a,b,c,ref\n1,20,30,10,1\n2,0,45,5,1\n3,15,15,15,0\n4,10,50,20,1\n").unwrap();
    let comps = json!(["a", "b", "c"]);
    let fwd = write_json(
        tmp.path(),
        "fwd.json",
        json!({"input": "fa.csv", "components": comps, "percent": true, "detection_half": 5e-5, "reference_column": "ref"}),
    );
    let f = tmp.path().join("f");
    ok(&["alr", "--config", s(&fwd), "--out", s(&f)]);
    let coords = rows(&f.join("alr.csv"));
    assert_eq!(coords.len(), 4);
    let inv = write_json(
        tmp.path(),
        "inv.json",
        json!({"input": "f/alr.csv", "components": comps, "percent": true, "sd_file": "f/alr_sd.csv"}),
    );
    let i = tmp.path().join("i");
    ok(&["alr", "--config", s(&inv), "--inverse", "--out", s(&i)]);
    let back = rows(&i.join("composition.csv"));
    let original = rows(&input);
    for (o, b) in original.iter().zip(&back) {
        assert_eq!(&o[0], &b[0]);
        let parts: Vec<f64> = (1..4).map(|k| o[k].parse().unwrap()).collect();
        let rest = 100.0 - parts.iter().sum::<f64>();
        // zero parts come back at the replacement value, closed to 100
        let total = 100.0 + if parts.contains(&0.0) { 5e-3 } else { 0.0 };
        let expect: Vec<f64> = parts.iter().chain([&rest]).map(|&v| if v == 0.0 { 5e-3 } else { v } * 100.0 / total).collect();
        let got: Vec<f64> = [1, 2, 3, 5].iter().map(|&k| b[k].parse().unwrap()).collect();
        for (e, g) in expect.iter().zip(&got) {
            assert!((e - g).abs() < 1e-9, "{expect:?} vs {got:?}");
        }
    }
}

#[test]
fn exit_codes_separate_input_from_runtime_failures() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(&["simulate"]).status.code(), Some(2));
    assert_eq!(run(&["nonsense"]).status.code(), Some(2));
    let missing = tmp.path().join("missing.json");
    assert_eq!(run(&["simulate", "--config", s(&missing)]).status.code(), Some(2));
    let bad = write_json(tmp.path(), "bad.json", json!({"design": "weibull", "n": 0}));
    assert_eq!(run(&["simulate", "--config", s(&bad)]).status.code(), Some(2));

    let cfg = write_json(tmp.path(), "good.json", json!({"design": "weibull", "n": 50, "seed": 1}));
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = run(&["simulate", "--config", s(&cfg), "--out", s(&blocker.join("sub"))]);
    assert_eq!(out.status.code(), Some(1));
}
