use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use wavefis::model_io::{self, ModelIoError};

fn wavefis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavefis"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = wavefis(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    data: PathBuf,
    model: PathBuf,
}

fn fixture(task: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("panel.csv");
    let model = dir.path().join("model.json");
    ok(&["generate", "--out", s(&data), "--households", "30", "--days", "90", "--fraud-rate", "0.3", "--seed", "3"]);
    ok(&[
        "train", "--data", s(&data), "--task", task, "--basis", "haar", "--epochs", "3", "--seed", "5",
        "--window", "16", "--rules", "4", "--out", s(&model),
    ]);
    Fixture { dir, data, model }
}

#[test]
fn classification_happy_path() {
    let f = fixture("classification");
    assert!(f.dir.path().join("model.json.report.csv").exists());
    let summary = fs::read_to_string(f.dir.path().join("model.json.summary.json")).unwrap();
    assert!(summary.contains("wall_clock_seconds"));

    let out_dir = f.dir.path().join("eval");
    ok(&["eval", "--model", s(&f.model), "--data", s(&f.data), "--out-dir", s(&out_dir)]);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("metrics.json")).unwrap()).unwrap();
    let auc = metrics["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    let roc = fs::read_to_string(out_dir.join("roc.csv")).unwrap();
    assert!(roc.starts_with("fpr,tpr,threshold\n0,0,inf\n"));
    let dai = fs::read_to_string(out_dir.join("dai.csv")).unwrap();
    assert_eq!(dai.lines().count(), 10);

    let explained = ok(&["explain", "--model", s(&f.model), "--data", s(&f.data)]);
    let text = String::from_utf8(explained.stdout).unwrap();
    assert!(text.contains("rule 4:"));
    assert!(text.contains("mean firing"));
}

#[test]
fn regression_happy_path() {
    let f = fixture("regression");
    let out_dir = f.dir.path().join("eval");
    ok(&["eval", "--model", s(&f.model), "--data", s(&f.data), "--out-dir", s(&out_dir)]);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["rmse"].as_f64().unwrap() > 0.0);
    assert!(metrics["mean_predictor_rmse"].as_f64().unwrap() > 0.0);
    assert!(!out_dir.join("roc.csv").exists());
    let model = model_io::load_model(&f.model).unwrap();
    assert_eq!(model.horizon, 7);
}

#[test]
fn predict_matches_eval_scores() {
    let f = fixture("classification");
    let scores = f.dir.path().join("scores.csv");
    ok(&["predict", "--model", s(&f.model), "--data", s(&f.data), "--out", s(&scores)]);
    let model = model_io::load_model(&f.model).unwrap();
    let data = wavefis::commands::read_dataset(&f.data).unwrap();
    let groups = data.windows(&model.window_spec()).unwrap();
    let direct: Vec<f64> = wavefis::commands::score_groups(&model, &groups)
        .unwrap()
        .iter()
        .flat_map(|h| h.scores.iter().map(|p| p.1).collect::<Vec<_>>())
        .collect();
    let text = fs::read_to_string(&scores).unwrap();
    let written: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(written.len(), direct.len());
    for (a, b) in written.iter().zip(&direct) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn model_file_round_trip_is_bit_exact() {
    let f = fixture("classification");
    let model = model_io::load_model(&f.model).unwrap();
    let again = f.dir.path().join("again.json");
    model_io::save_model(&model, &again).unwrap();
    assert_eq!(fs::read(&f.model).unwrap(), fs::read(&again).unwrap());
    assert_eq!(model_io::load_model(&again).unwrap(), model);
}

#[test]
fn training_is_deterministic() {
    let a = fixture("classification");
    let b = fixture("classification");
    assert_eq!(fs::read(&a.data).unwrap(), fs::read(&b.data).unwrap());
    assert_eq!(fs::read(&a.model).unwrap(), fs::read(&b.model).unwrap());
    assert_eq!(
        fs::read(a.dir.path().join("model.json.report.csv")).unwrap(),
        fs::read(b.dir.path().join("model.json.report.csv")).unwrap()
    );
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(wavefis(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(wavefis(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(wavefis(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(
        wavefis(&["generate", "--out", s(&out), "--fraud-rate", "1.5"]).status.code(),
        Some(1)
    );
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "household_id,t,x,fraud_label\n1,0,oops,0\n").unwrap();
    let out = wavefis(&["train", "--data", s(&bad), "--task", "regression", "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let missing = wavefis(&["explain", "--model", s(&dir.path().join("none.json"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn schema_mismatch_is_reported() {
    let f = fixture("regression");
    let text = fs::read_to_string(&f.model).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["schema_version"] = serde_json::json!(99);
    fs::write(&f.model, serde_json::to_string(&doc).unwrap()).unwrap();
    let err = model_io::load_model(&f.model).unwrap_err();
    assert!(matches!(err, ModelIoError::SchemaVersionMismatch { found: 99, .. }));
    let out = wavefis(&["explain", "--model", s(&f.model)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema version 99"));
}

#[test]
fn damaged_model_files_are_corrupt() {
    let f = fixture("regression");
    let text = fs::read_to_string(&f.model).unwrap();
    let truncated = &text[..text.len() / 2];
    assert!(matches!(model_io::from_str(truncated), Err(ModelIoError::CorruptFile(_))));

    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["rules"]["centers"]["data"] = serde_json::json!([1.0]);
    match model_io::from_str(&doc.to_string()) {
        Err(ModelIoError::CorruptFile(what)) => assert_eq!(what, "rules"),
        other => panic!("{other:?}"),
    }
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc.as_object_mut().unwrap().remove("fingerprint");
    assert!(matches!(model_io::from_str(&doc.to_string()), Err(ModelIoError::CorruptFile(w)) if w == "fingerprint"));
}
