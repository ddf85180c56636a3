use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctm_core::sim;
use ctm_core::*;
use tempfile::TempDir;

fn ctm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctm"))
        .args(args)
        .env("CTM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn reals<'a>(d: &'a Dataset, name: &str) -> &'a [f64] {
    match &d.frame().column(name).unwrap().data {
        ColumnData::Real(v) => v,
        ColumnData::Levels(_) => panic!("real column expected"),
    }
}

/// Writes simulated `y, x1, x2` data and returns its path.
fn write_data(dir: &TempDir, name: &str, n: usize, seed: u64) -> PathBuf {
    let d = sim::simulate_hvc(n, 0, seed).unwrap();
    let mut text = String::from("y,x1,x2\n");
    for i in 0..n {
        writeln!(text, "{},{},{}", d.response()[i], reals(&d, "x1")[i], reals(&d, "x2")[i]).unwrap();
    }
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn config(iterations: usize, resampling: &str) -> String {
    format!(
        r#"version = 1

[data]
response = "y"

[fit]
link = "probit"
loss = "bin"
max_iterations = {iterations}
df = 4.0
seed = 3
resampling = {resampling}

[response_basis]
basis = {{ kind = "bspline", interior_knots = 10 }}
penalty = {{ kind = "difference", order = 2 }}

[[learner]]
covariate = "x1"
basis = {{ kind = "bspline", interior_knots = 8 }}
penalty = {{ kind = "difference", order = 2 }}

[[learner]]
covariate = "x2"
basis = {{ kind = "bspline", interior_knots = 8 }}
penalty = {{ kind = "difference", order = 2 }}
"#
    )
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn fit_model(dir: &TempDir, iterations: usize) -> (PathBuf, PathBuf) {
    let data = write_data(dir, "train.csv", 150, 5);
    let cfg = write(dir, "model.toml", &config(iterations, r#"{ kind = "none" }"#));
    let out = dir.path().join("model.json");
    let o = ctm(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    (data, out)
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn fit_writes_model_and_one_trace_row_per_iteration() {
    let dir = TempDir::new().unwrap();
    let data = write_data(&dir, "train.csv", 150, 5);
    let cfg = write(&dir, "model.toml", &config(40, r#"{ kind = "bootstrap", replications = 3 }"#));
    let out = dir.path().join("fitted.json");
    let o = ctm(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("selected mstop:"), "{}", stdout(&o));

    let model = CtmModel::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(model.response_name(), Some("y"));
    let trace = fs::read_to_string(dir.path().join("fitted.trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,selected,risk,oob_risk"));
    assert_eq!(csv_rows(&trace).len(), 41);
}

#[test]
fn absent_column_is_a_config_error_naming_it() {
    let dir = TempDir::new().unwrap();
    let data = write_data(&dir, "train.csv", 50, 1);
    let cfg = write(&dir, "model.toml", &config(10, r#"{ kind = "none" }"#).replace("\"x2\"", "\"age\""));
    let out = dir.path().join("m.json");
    let o = ctm(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(78));
    assert!(stderr(&o).contains("age"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn bad_config_version_and_missing_file_exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = write_data(&dir, "train.csv", 50, 1);
    let cfg = write(&dir, "model.toml", &config(10, r#"{ kind = "none" }"#).replace("version = 1", "version = 7"));
    let out = dir.path().join("m.json");
    let o = ctm(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(78));
    let cfg = write(&dir, "model.toml", &config(10, r#"{ kind = "none" }"#));
    let missing = dir.path().join("nowhere.csv");
    let o = ctm(&["fit", "--data", s(&missing), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(74), "{}", stderr(&o));
}

#[test]
fn missing_values_are_rejected_with_row_numbers() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "train.csv", "y,x1,x2\n0.1,0.2,0.3\n0.4,NA,0.1\n0.5,0.3,\n0.2,0.9,-1\n");
    let cfg = write(&dir, "model.toml", &config(10, r#"{ kind = "none" }"#));
    let out = dir.path().join("m.json");
    let o = ctm(&["fit", "--data", s(&data), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(65));
    let err = stderr(&o);
    assert!(err.contains('2') && err.contains('3'), "{err}");
}

#[test]
fn zero_iterations_predict_one_half() {
    let dir = TempDir::new().unwrap();
    let (data, model) = fit_model(&dir, 0);
    let o = ctm(&["predict", "--model", s(&model), "--data", s(&data), "--grid", "-2:2:5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 150 * 5);
    assert!(rows.iter().all(|r| r[2] == "0.5"));
}

#[test]
fn predict_agrees_with_the_library() {
    let dir = TempDir::new().unwrap();
    let (_, model_path) = fit_model(&dir, 60);
    // New rows inside the training range of both covariates.
    let x1s = sim::linspace(0.1, 0.9, 5);
    let x2s = sim::linspace(-1.5, 1.5, 4);
    let mut text = String::from("x1,x2\n");
    for a in &x1s {
        for b in &x2s {
            writeln!(text, "{a},{b}").unwrap();
        }
    }
    let newdata = write(&dir, "new.csv", &text);
    let out = dir.path().join("pred.csv");
    let o = ctm(&[
        "predict", "--model", s(&model_path), "--data", s(&newdata), "--grid", "-1,0,0.5,1.5", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let model = CtmModel::from_json(&fs::read_to_string(&model_path).unwrap()).unwrap();
    let rows = csv_rows(&fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 80);
    for r in rows {
        let i: usize = r[0].parse::<usize>().unwrap() - 1;
        let v: f64 = r[1].parse().unwrap();
        let x = sim::hvc_covariates(x1s[i / 4], x2s[i % 4], 0);
        assert_eq!(r[2].parse::<f64>().unwrap(), model.cdf(&x, v).unwrap());
    }
}

#[test]
fn out_of_domain_rows_abort_unless_skipped() {
    let dir = TempDir::new().unwrap();
    let (_, model) = fit_model(&dir, 20);
    let newdata = write(&dir, "new.csv", "x1,x2\n0.5,0\n7,0\n0.2,1\n");
    let o = ctm(&["predict", "--model", s(&model), "--data", s(&newdata), "--grid", "0:1:3"]);
    assert_eq!(o.status.code(), Some(65));
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));
    let o = ctm(&["predict", "--model", s(&model), "--data", s(&newdata), "--grid", "0:1:3", "--skip-bad"]);
    assert!(o.status.success());
    let rows = csv_rows(&stdout(&o));
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r[0] != "2"));
}

/// `h(v) = v` under the probit link: a standard normal response.
fn standard_normal_model(dir: &TempDir) -> PathBuf {
    let mut l = TensorLearner::new(
        "v",
        None,
        Marginal::intercept(),
        Marginal::new(BasisSpec::Linear { lo: -6.0, hi: 6.0 }, PenaltySpec::None),
    );
    l.gamma = vec![0.0, 1.0];
    let meta = FitMeta {
        observations: 0,
        iterations: 0,
        initial_risk: 0.0,
        final_risk: 0.0,
    };
    let grid = Grid::new(sim::linspace(-6.0, 6.0, 121), GridKind::Equidistant).unwrap();
    let model = CtmModel::new(
        LossLink::new(LossKind::Bin, Link::Probit),
        grid,
        vec![l],
        BoostConfig::default(),
        meta,
    )
    .unwrap();
    write(dir, "normal.json", &model.to_json().unwrap())
}

#[test]
fn quantiles_and_intervals_of_a_standard_normal_model() {
    let dir = TempDir::new().unwrap();
    let model = standard_normal_model(&dir);
    let data = write(&dir, "rows.csv", "id\n1\n2\n");
    let o = ctm(&["quantile", "--model", s(&model), "--data", s(&data), "--taus", "0.5,0.9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("row,q0.5,q0.9"));
    for r in csv_rows(&text) {
        let q50: f64 = r[1].parse().unwrap();
        let q90: f64 = r[2].parse().unwrap();
        assert!(q50.abs() < 1e-6, "{q50}");
        assert!((q90 - 1.281552).abs() < 1e-5, "{q90}");
    }

    let o = ctm(&["quantile", "--model", s(&model), "--data", s(&data), "--interval", "0.025"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("row,lower,upper"));
    for r in csv_rows(&text) {
        let lo: f64 = r[1].parse().unwrap();
        let hi: f64 = r[2].parse().unwrap();
        assert!((lo + 1.959964).abs() < 1e-5 && (hi - 1.959964).abs() < 1e-5, "{lo} {hi}");
    }

    // The 1e-12 quantile lies far outside the grid.
    let o = ctm(&["quantile", "--model", s(&model), "--data", s(&data), "--taus", "1e-12"]);
    assert_eq!(o.status.code(), Some(70), "{}", stderr(&o));
    assert!(stderr(&o).contains("row 1"));
}

#[test]
fn diagnose_reports_fit_statistics_and_residuals() {
    let dir = TempDir::new().unwrap();
    let (data, model) = fit_model(&dir, 200);
    let residuals = dir.path().join("res.csv");
    let o = ctm(&["diagnose", "--model", s(&model), "--data", s(&data), "--residuals", s(&residuals)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("ks statistic:"), "{text}");
    assert!(text.contains("rank correlation"), "{text}");
    assert!(text.contains("monotone on checked sample") || text.contains("monotonicity violations"));
    let res = fs::read_to_string(&residuals).unwrap();
    assert!(res.starts_with("row,response,residual"));
    assert_eq!(csv_rows(&res).len(), 150);
}

#[test]
fn simulate_is_deterministic_and_sweeps_noise_levels() {
    let dir = TempDir::new().unwrap();
    let args = |out: &Path| {
        vec![
            "simulate".to_string(),
            "--out-dir".into(),
            s(out).into(),
            "--replications".into(),
            "1".into(),
            "--noise-sweep".into(),
            "--observations".into(),
            "60".into(),
            "--iterations".into(),
            "30".into(),
            "--bootstrap".into(),
            "2".into(),
            "--seed".into(),
            "9".into(),
        ]
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let argv = args(out);
        let o = ctm(&argv.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).matches("p=").count(), 6);
    }
    let mad = fs::read_to_string(a.join("mad.csv")).unwrap();
    assert_eq!(mad, fs::read_to_string(b.join("mad.csv")).unwrap());
    assert_eq!(
        fs::read_to_string(a.join("quantiles.csv")).unwrap(),
        fs::read_to_string(b.join("quantiles.csv")).unwrap()
    );
    let rows = csv_rows(&mad);
    assert_eq!(rows.len(), 6);
    let ps: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(ps, ["0", "1", "2", "3", "4", "5"]);
}
