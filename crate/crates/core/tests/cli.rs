use std::path::Path;
use std::process::{Command, Output};

use vaeci_core::data::Dataset;
use vaeci_core::evaluation::MetricsReport;
use vaeci_core::model::{ModelConfig, ModelGraph, ModelKind};

fn vaeci(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vaeci"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vaeci(args);
    assert!(
        out.status.success(),
        "vaeci {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_TRAIN: &str = r#"
max_iterations = 30
validate_every = 10
batch_size = 64

[model]
kind = "hybrid"
weight_scheme = "ca"
hidden_width = 8
latent_dim = 3
"#;

#[test]
fn generate_writes_the_requested_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    ok(&["generate", "--out", p(&csv), "--n", "10000", "--seed", "7"]);
    let data = Dataset::read_csv(&csv).unwrap();
    assert_eq!(data.len(), 10_000);
    assert_eq!(data.width(), 25);
    assert!(data.y_cf.is_some() && data.mu0.is_some() && data.mu1.is_some());
    let header = std::fs::read_to_string(&csv).unwrap();
    let header = header.lines().next().unwrap();
    assert!(header.ends_with("t,y,ycf,mu0,mu1"), "{header}");
    assert_eq!(data.metadata.get("scenario").map(String::as_str), Some("8_8_8"));

    // the same seed reproduces the file byte for byte
    let again = dir.path().join("e.csv");
    ok(&["generate", "--out", p(&again), "--n", "10000", "--seed", "7"]);
    assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn generate_mesh_writes_every_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("mesh");
    ok(&["generate", "--mesh", "--out", p(&mesh), "--n", "50"]);
    let files = std::fs::read_dir(&mesh).unwrap().count();
    assert_eq!(files, 24);
    assert!(mesh.join("scenario_0_4_8.csv").exists());
    assert!(!mesh.join("scenario_8_0_0.csv").exists());
}

#[test]
fn train_eval_probe_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    std::fs::write(d("train.toml"), SMALL_TRAIN).unwrap();
    ok(&["generate", "--out", p(&d("data.csv")), "--n", "400", "--seed", "2"]);
    ok(&[
        "train",
        "--data",
        p(&d("data.csv")),
        "--config",
        p(&d("train.toml")),
        "--model-out",
        p(&d("model.bin")),
        "--report",
        p(&d("train.json")),
        "--curves",
        p(&d("curves.csv")),
    ]);
    let report = MetricsReport::read(d("train.json")).unwrap();
    assert_eq!(report.kind, "train");
    assert_eq!(report.method, "hybrid-ca");
    assert!(report.metrics.contains_key("test"));
    assert!(report.probe.is_some());
    assert_eq!(report.training.as_ref().unwrap().iterations, 30);
    let curves = std::fs::read_to_string(d("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 30 + 4);

    ok(&["eval", "--data", p(&d("data.csv")), "--model", p(&d("model.bin")), "--report", p(&d("eval.json"))]);
    let eval = MetricsReport::read(d("eval.json")).unwrap();
    assert!(eval.metrics["data"].pehe.is_some());

    ok(&["probe", "--model", p(&d("model.bin")), "--report", p(&d("probe.json")), "--upstream", "zeros"]);
    assert!(MetricsReport::read(d("probe.json")).unwrap().probe.is_some());

    let out = ok(&["compare", "--reports", &format!("{}/*.json", dir.path().display()), "--radar", p(&d("radar.csv"))]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("hybrid-ca"), "{table}");
    assert!(std::fs::read_to_string(d("radar.csv")).unwrap().contains("8_8_8"));
}

#[test]
fn eval_without_counterfactuals_marks_pehe_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full.csv");
    ok(&["generate", "--out", p(&full), "--n", "200"]);
    let mut data = Dataset::read_csv(&full).unwrap();
    data.y_cf = None;
    data.mu0 = None;
    data.mu1 = None;
    let factual = dir.path().join("factual.csv");
    data.write_csv(&factual).unwrap();

    let model = ModelGraph::build(ModelConfig { hidden_width: 4, latent_dim: 2, ..ModelConfig::default() }, data.schema.clone(), 0).unwrap();
    let model_path = dir.path().join("m.bin");
    model.save(&model_path).unwrap();
    let report = dir.path().join("r.json");
    ok(&["eval", "--data", p(&factual), "--model", p(&model_path), "--report", p(&report)]);
    let m = &MetricsReport::read(&report).unwrap().metrics["data"];
    assert_eq!(m.pehe, None);
    assert_eq!(m.pehe_noiseless, None);
    assert!(!m.unavailable.is_empty());
    assert!(m.factual_rmse.is_some());
}

#[test]
fn probe_of_a_zero_weight_model_is_all_ones() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    ok(&["generate", "--out", p(&csv), "--n", "20"]);
    let data = Dataset::read_csv(&csv).unwrap();
    let cfg = ModelConfig { kind: ModelKind::Hybrid, hidden_width: 5, latent_dim: 2, ..ModelConfig::default() };
    let mut model = ModelGraph::build(cfg, data.schema.clone(), 1).unwrap();
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        model.params.get_mut(id).fill(0.0);
    }
    let path = dir.path().join("zero.bin");
    model.save(&path).unwrap();
    let report = dir.path().join("probe.json");
    ok(&["probe", "--model", p(&path), "--report", p(&report)]);
    let table = MetricsReport::read(&report).unwrap().probe.unwrap();
    for row in &table.values {
        for v in row.iter().flatten() {
            assert_eq!(*v, 1.0);
        }
    }
}

#[test]
fn usage_errors_exit_nonzero() {
    let out = vaeci(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = vaeci(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(vaeci(&["--help"]).status.success());
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = vaeci(&[
        "eval",
        "--data",
        p(&dir.path().join("absent.csv")),
        "--model",
        "m.bin",
        "--report",
        "r.json",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("absent.csv"), "{stderr}");

    // a degenerate scenario is refused
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "m_delta = 0\nm_upsilon = 0\n").unwrap();
    let out = vaeci(&["generate", "--config", p(&cfg), "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(1));
}
