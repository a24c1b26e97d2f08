use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use intformer::cli::{engine_predictor, evaluate};
use intformer::dataio::{load_model, read_csv, rmse};
use intformer::model::ModelConfig;
use intformer::reference::FloatModel;

fn intformer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intformer")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn kv(o: &Output, key: &str) -> String {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no `{key}` in {}", stdout(o)))
        .to_string()
}

fn series_csv(path: &Path, rows: usize) {
    let mut body = String::from("a,b,c,d,e,f,y\n");
    for i in 0..rows {
        let t = i as f64;
        let cells: Vec<String> = (0..7).map(|j| format!("{:.3}", (t * 0.1 + j as f64).sin() * 10.0 + j as f64)).collect();
        body.push_str(&cells.join(","));
        body.push('\n');
    }
    fs::write(path, body).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn quantize_prints_budget_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    series_csv(&csv, 120);
    let run = |out: &str| {
        intformer(&["quantize", "--calib", p(&csv), "--n", "6", "--d-model", "8", "--bits", "6", "--seed", "3", "--out", out])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = run(p(&a));
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).lines().any(|l| l == "params: 945"));
    assert!(run(p(&b)).status.success());
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn quantize_without_calibration_file_fails_with_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = intformer(&["quantize", "--calib", "no_such_calibration.csv", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_calibration.csv"));
}

#[test]
fn infer_zero_model_and_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    series_csv(&csv, 60);
    let cfg = ModelConfig::new(6, 7, 8, 8).unwrap();
    let weights = dir.path().join("zero.json");
    fs::write(&weights, FloatModel::zeros(&cfg).to_json().unwrap()).unwrap();
    let art = dir.path().join("art");
    let q = intformer(&["quantize", "--weights", p(&weights), "--calib", p(&csv), "--n", "6", "--d-model", "8", "--out", p(&art)]);
    assert!(q.status.success(), "{}", String::from_utf8_lossy(&q.stderr));

    let window = dir.path().join("window.csv");
    let body: String = fs::read_to_string(&csv).unwrap().lines().take(7).map(|l| format!("{l}\n")).collect();
    fs::write(&window, body).unwrap();
    let out = intformer(&["--format", "kv", "infer", "--model", p(&art), "--input", p(&window)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let artifact = load_model(&art).unwrap();
    let scaler = artifact.scaler.as_ref().unwrap();
    assert_eq!(kv(&out, "prediction").parse::<f64>().unwrap(), 0.0);
    let forecast: f64 = kv(&out, "forecast").parse().unwrap();
    assert_eq!(forecast, scaler.inverse_target(0.0).unwrap());

    // The same window through the loaded artifact in-process.
    let series = read_csv(&window, &["a", "b", "c", "d", "e", "f", "y"], "y").unwrap();
    let x: Vec<f64> = series.features.iter().flat_map(|r| scaler.transform_features(r).unwrap()).collect();
    let model = &artifact.model;
    let pred = model.forward(&model.quantize_input(&x).unwrap()).unwrap();
    assert_eq!(kv(&out, "prediction_q"), pred.q.to_string());

    let short = dir.path().join("short.csv");
    fs::write(&short, "a,b,c,d,e,f,y\n1,2,3,4,5,6,7\n").unwrap();
    let bad = intformer(&["infer", "--model", p(&art), "--input", p(&short)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("expected 6 clean rows x 7 features"));
}

#[test]
fn verify_exit_codes() {
    for bits in ["4", "6", "8"] {
        let out = intformer(&["verify", "--n", "6", "--d-model", "8", "--bits", bits, "--trials", "100"]);
        assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    }
    let out = intformer(&["--format", "kv", "verify", "--n", "6", "--d-model", "8", "--trials", "5", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!kv(&out, "mismatch_edge").is_empty());
    assert!(!kv(&out, "expected").is_empty());

    let out = intformer(&["verify", "--trials", "0"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("0 trials"));
}

#[test]
fn eval_is_rmse_of_engine_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    series_csv(&csv, 150);
    let art = dir.path().join("art");
    assert!(intformer(&["quantize", "--calib", p(&csv), "--n", "6", "--d-model", "8", "--out", p(&art)]).status.success());
    let args = ["--format", "kv", "eval", "--model", p(&art), "--data", p(&csv), "--train-fraction", "0.8"];
    let out = intformer(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out), stdout(&intformer(&args)));

    let artifact = load_model(&art).unwrap();
    let scaler = artifact.scaler.as_ref().unwrap();
    let cols = ["a", "b", "c", "d", "e", "f", "y"];
    let (_, test) = read_csv(&csv, &cols, "y").unwrap().split_fraction(0.8);
    let ds = scaler.transform(&test).unwrap().windows(6).unwrap();
    let report = evaluate(&ds, Some(scaler), engine_predictor(&artifact.model)).unwrap();
    assert_eq!(report.rmse, rmse(&report.predictions, &report.targets).unwrap());
    assert_eq!(kv(&out, "rmse"), report.rmse.to_string());
    assert_eq!(kv(&out, "windows"), ds.len().to_string());

    let identity = evaluate(&ds, Some(scaler), |s| Ok(s.target)).unwrap();
    assert_eq!(identity.rmse, 0.0);
}

#[test]
fn export_inventory_and_failure() {
    let dir = tempfile::tempdir().unwrap();
    let art = dir.path().join("art");
    let q = intformer(&["quantize", "--n", "6", "--m", "2", "--d-model", "8", "--bits", "8", "--out", p(&art)]);
    assert!(q.status.success());
    let hw = dir.path().join("hw");
    let out = intformer(&["export", "--model", p(&art), "--out", p(&hw)]);
    assert!(out.status.success());
    assert!(stdout(&out).lines().any(|l| l == "memory.softmax_dlut: 256x16"));
    assert!(hw.join("hw_manifest.txt").is_file());

    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = intformer(&["export", "--model", p(&art), "--out", p(&blocker.join("sub"))]);
    assert_eq!(out.status.code(), Some(2));
}
