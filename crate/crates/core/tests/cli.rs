//! End-to-end runs of the `fairbary` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairbary::measures::EmpiricalMeasure;
use fairbary::regression::{measure_fingerprint, split_group, Bundle, Dataset};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fairbary"));
    c.env_remove("FAIRBARY_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated translation data and a fitted bundle in a temp dir.
struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(n: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let f = Self { dir };
        let ns = format!("{n},{n}");
        ok(&["simulate", "--seed", "11", "--n", &ns, "--out", s(&f.path("sim"))]);
        ok(&["fit", "--seed", "11", "--data", s(&f.path("sim/data.csv")), "--out", s(&f.path("model"))]);
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn simulate_writes_rows_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        ok(&["simulate", "--seed", "5", "--n", "100,100", "--out", s(&dir.path().join(name))]);
    }
    let a = std::fs::read(dir.path().join("a/data.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b/data.csv")).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a/truth.json")).unwrap(),
        std::fs::read(dir.path().join("b/truth.json")).unwrap()
    );
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert_eq!(text.lines().next().unwrap(), "group,y,x1");
}

#[test]
fn fitted_translation_maps_are_shifts_and_reruns_match() {
    let f = Fixture::new(4000);
    let bundle = Bundle::load(&f.path("model")).unwrap();
    let maps = bundle.regressor.maps();
    // groups are U[0.3,1.3] and U[0.7,1.7]; the barycenter sits in between
    let (mut d0, mut d1) = (0.0f64, 0.0f64);
    for i in 0..=100 {
        let z = 0.35 + 0.9 * i as f64 / 100.0;
        d0 = d0.max((maps.eval(0, z) - (z + 0.2)).abs());
        d1 = d1.max((maps.eval(1, z + 0.4) - (z + 0.2)).abs());
    }
    assert!(d0.powi(2) <= 1e-2 && d1.powi(2) <= 1e-2, "{d0} {d1}");

    // rerun from the resolved snapshot
    ok(&["fit", "--config", s(&f.path("model/resolved_config.json")), "--out", s(&f.path("again"))]);
    assert_eq!(
        std::fs::read(f.path("model/maps.json")).unwrap(),
        std::fs::read(f.path("again/maps.json")).unwrap()
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.path("model/fit_report.json")).unwrap()).unwrap();
    assert!(f.path("model").join(report["trace_file"].as_str().unwrap()).exists());
}

#[test]
fn transform_reproduces_fit_time_pushforwards() {
    let f = Fixture::new(500);
    let pred = f.path("pred.csv");
    ok(&["transform", "--bundle", s(&f.path("model")), "--data", s(&f.path("sim/data.csv")), "--out", s(&pred)]);
    let rows = read_csv(&pred);
    let data = Dataset::read_path(&f.path("sim/data.csv"), None).unwrap();
    assert_eq!(rows.len(), data.rows.len());
    let bundle = Bundle::load(&f.path("model")).unwrap();
    let seed = bundle.manifest.config.seed;
    for (s_idx, sample) in data.samples.iter().enumerate() {
        let mut base_by_pos = vec![f64::NAN; sample.len()];
        for (row, &(g, i)) in rows.iter().zip(&data.rows) {
            assert_eq!(row[1], data.labels[g]);
            if g == s_idx {
                base_by_pos[i] = row[2].parse().unwrap();
                let fair: f64 = row[3].parse().unwrap();
                assert_eq!(fair, bundle.regressor.maps().eval(g, base_by_pos[i]));
            }
        }
        let split = split_group(sample, seed);
        let m = EmpiricalMeasure::new(split.maps.iter().map(|&i| base_by_pos[i]).collect()).unwrap();
        assert_eq!(measure_fingerprint(&m), bundle.manifest.pushforward_sha256[s_idx]);
    }
}

#[test]
fn evaluate_reports_metrics_and_fairness_gain() {
    let f = Fixture::new(10_000);
    ok(&[
        "evaluate",
        "--bundle",
        s(&f.path("model")),
        "--data",
        s(&f.path("sim/data.csv")),
        "--truth",
        s(&f.path("sim/truth.json")),
        "--out",
        s(&f.path("eval")),
    ]);
    let rows = read_csv(&f.path("eval/metrics.csv"));
    let get = |metric: &str| -> f64 { rows.iter().find(|r| r[0] == metric).unwrap()[2].parse().unwrap() };
    assert!(get("unfairness_upper_bound_fair") < get("unfairness_upper_bound_base"));
    assert!(get("pairwise_max_w2_fair") < get("pairwise_max_w2_base"));
    assert!(get("truth_error") < 1e-3);
    assert_eq!(rows.iter().filter(|r| r[0] == "mse_fair").count(), 2);
    let meta = std::fs::read_to_string(f.path("eval/metrics.meta.json")).unwrap();
    assert!(meta.contains("w2_convention"));
}

#[test]
fn identical_groups_evaluate_near_fair() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let spec = fairbary::synth::ScenarioSpec::identical(2, 4).unwrap();
    std::fs::write(&cfg, serde_json::json!({ "scenario": spec, "n": [4000, 4000] }).to_string()).unwrap();
    let p = |r: &str| dir.path().join(r);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&p("sim"))]);
    ok(&["fit", "--data", s(&p("sim/data.csv")), "--out", s(&p("model"))]);
    ok(&["evaluate", "--bundle", s(&p("model")), "--data", s(&p("sim/data.csv")), "--out", s(&p("eval"))]);
    let rows = read_csv(&p("eval/metrics.csv"));
    let ub: f64 = rows.iter().find(|r| r[0] == "unfairness_upper_bound_fair").unwrap()[2].parse().unwrap();
    // two independent samples of 4000 differ in W2 by roughly 1/sqrt(n)
    assert!(ub < 1e-2, "{ub}");
}

#[test]
fn exit_codes() {
    let f = Fixture::new(200);
    let data = f.path("sim/data.csv");
    let text = std::fs::read_to_string(&data).unwrap();

    let single = f.path("single.csv");
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with("g1")).collect();
    std::fs::write(&single, lines.join("\n") + "\n").unwrap();
    assert_eq!(code(&["fit", "--data", s(&single), "--out", s(&f.path("x"))]), 2);

    let nogroup = f.path("nogroup.csv");
    std::fs::write(&nogroup, "y,x1\n0.5,0.1\n").unwrap();
    assert_eq!(code(&["fit", "--data", s(&nogroup), "--out", s(&f.path("x"))]), 2);

    assert_eq!(code(&["fit", "--data", s(&data), "--omega", "0,0.5", "--out", s(&f.path("x"))]), 3);
    assert_eq!(code(&["fit", "--data", s(&data), "--lipschitz", "1", "--out", s(&f.path("x"))]), 4);

    let unknown = f.path("unknown.csv");
    std::fs::write(&unknown, "group,y,x1\nzz,0.5,0.1\n").unwrap();
    assert_eq!(code(&["transform", "--bundle", s(&f.path("model")), "--data", s(&unknown), "--out", s(&f.path("p.csv"))]), 5);

    let bad_truth = f.path("truth.json");
    std::fs::write(&bad_truth, "{\"theta_star\": 3}").unwrap();
    let (model, ev) = (f.path("model"), f.path("ev"));
    assert_eq!(
        code(&["evaluate", "--bundle", s(&model), "--data", s(&data), "--truth", s(&bad_truth), "--out", s(&ev)]),
        6
    );

    let out = run(&["sweep", "--n-values", "2,3", "--replicates", "2", "--out", s(&f.path("sw"))]);
    assert_eq!(out.status.code(), Some(7));
    let rates = read_csv(&f.path("sw/rates.csv"));
    assert_eq!(rates.len(), 4);
    assert!(rates.iter().all(|r| r[2] == "error"));
}

#[test]
fn degenerate_sweep_has_one_row_and_no_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sw");
    ok(&["sweep", "--n-values", "256", "--replicates", "1", "--seed", "2", "--out", s(&out)]);
    let rates = read_csv(&out.join("rates.csv"));
    assert_eq!(rates.len(), 1);
    assert_eq!(rates[0][0], "256");
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.meta.json")).unwrap()).unwrap();
    assert!(meta["fitted_slope"].is_null());
    assert!((meta["theoretical_slope"].as_f64().unwrap() + 2.0 / 3.0).abs() < 1e-15);
    let svg = std::fs::read_to_string(out.join("plot.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("theoretical"));
}

#[test]
fn sweep_rows_are_complete_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |name: &str, threads: &str| {
        vec![
            "sweep".to_string(),
            "--n-values".into(),
            "128,256".into(),
            "--replicates".into(),
            "3".into(),
            "--seed".into(),
            "9".into(),
            "--threads".into(),
            threads.into(),
            "--out".into(),
            dir.path().join(name).to_str().unwrap().into(),
        ]
    };
    for (name, threads) in [("a", "1"), ("b", "3")] {
        let out = bin().args(args(name, threads)).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a/rates.csv")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b/rates.csv")).unwrap());
    let rows = read_csv(&dir.path().join("a/rates.csv"));
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    let expected: Vec<(String, String)> =
        ["128", "256"].iter().flat_map(|n| (0..3).map(move |r| (n.to_string(), r.to_string()))).collect();
    assert_eq!(keys, expected);
}

#[test]
fn env_seed_is_a_default_that_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let snap = |name: &str| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(name).join("resolved_config.json")).unwrap())
            .unwrap()
    };
    let status = bin()
        .env("FAIRBARY_SEED", "77")
        .args(["simulate", "--n", "10,10", "--out", s(&dir.path().join("env"))])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(snap("env")["seed"], 77);
    let status = bin()
        .env("FAIRBARY_SEED", "77")
        .args(["simulate", "--n", "10,10", "--seed", "3", "--out", s(&dir.path().join("flag"))])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(snap("flag")["seed"], 3);
}
