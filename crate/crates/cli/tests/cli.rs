//! The `operon` binary end to end on tiny problems.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use operon_cli::commands::{eval_errors, summarize};
use operon_core::data::Dataset;
use operon_core::fem::{Mesh, NodalField};
use operon_core::forward::ForwardModel;
use operon_core::matrix::median;
use operon_core::operators::Surrogate;
use serde_json::Value;

const SMALL: [&str; 10] = ["--nx", "6", "--ny", "6", "--n", "20", "--n-train", "14", "--n-test", "6"];
const PCANET: [&str; 6] = ["--arch", "pcanet", "--rm", "5", "--ru", "5"];

fn operon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_operon")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = operon(args);
    assert!(out.status.success(), "operon {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path) {
    ok(&[&["gen", "--out", s(dir)][..], &SMALL].concat());
}

fn train(data: &Path, out: &Path, extra: &[&str]) {
    ok(&[&["train", "--data", s(data), "--out", s(out)][..], &SMALL, &PCANET, extra].concat());
}

#[test]
fn usage_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cases: Vec<Vec<&str>> = vec![
        vec!["gen"],
        vec!["mcmc", "--beta", "1.5", "--out", s(&out)],
        vec!["train", "--arch", "transformer", "--out", s(&out)],
        vec!["gen", "--problem", "heat", "--out", s(&out)],
        vec!["eval", "--out", s(&out)],
        vec!["gen", "--n", "10", "--n-train", "8", "--n-test", "8", "--out", s(&out)],
    ];
    for args in cases {
        let r = operon(&args);
        assert_eq!(r.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&r.stderr));
        assert!(!r.stderr.is_empty());
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"mesh.nx": 4, "mesh.nz": 4}"#).unwrap();
    let r = operon(&["gen", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("mesh.nz"));
}

/// The FEM solver posing as a surrogate reproduces its own dataset.
struct Exact(Box<dyn ForwardModel>);

impl Surrogate for Exact {
    fn mesh(&self) -> &Arc<Mesh> {
        self.0.mesh()
    }
    fn components(&self) -> usize {
        self.0.components()
    }
    fn predict(&self, m: &NodalField) -> operon_core::Result<NodalField> {
        self.0.solve(m)
    }
}

#[test]
fn exact_surrogate_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data);
    let ds = Dataset::read(&data).unwrap();
    let exact = Exact(ds.meta.setup.build().unwrap());
    let errors = eval_errors(&exact, &ds).unwrap();
    assert_eq!(errors.len(), 6);
    assert!(errors.iter().all(|&(_, e)| e == 0.0));
    let summary = summarize("exact", &errors);
    assert_eq!((summary.median_percent, summary.max_percent), (0.0, 0.0));
}

#[test]
fn eval_summary_is_recomputable_from_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ck, ev) = (dir.path().join("data"), dir.path().join("ck"), dir.path().join("ev"));
    gen(&data);
    train(&data, &ck, &["--epochs", "5"]);
    ok(&[&["eval", "--data", s(&data), "--checkpoint", s(&ck), "--out", s(&ev)][..], &SMALL, &PCANET].concat());
    let csv = fs::read_to_string(ev.join("errors.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("sample,relative_l2_percent"));
    let errors: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(errors.len(), 6);
    let summary: Value = serde_json::from_str(&fs::read_to_string(ev.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["median_percent"].as_f64().unwrap(), median(&errors));
    assert_eq!(summary["architecture"], "pcanet");
}

#[test]
fn echoed_config_reproduces_a_deterministic_run() {
    let dir = tempfile::tempdir().unwrap();
    let (data, first, second) = (dir.path().join("data"), dir.path().join("a"), dir.path().join("b"));
    gen(&data);
    train(&data, &first, &["--epochs", "3", "--deterministic"]);
    let config = first.join("config.json");
    ok(&["train", "--config", s(&config), "--out", s(&second)]);
    for f in ["params.bin", "loss.csv", "train_report.json", "adam_m.bin", "adam_v.bin"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(first.join("train_report.json")).unwrap()).unwrap();
    assert!(report.get("seconds").is_none());
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen(&data);
    let (full, half, resumed) = (dir.path().join("full"), dir.path().join("half"), dir.path().join("resumed"));
    train(&data, &full, &["--epochs", "4"]);
    train(&data, &half, &["--epochs", "2"]);
    train(&data, &resumed, &["--epochs", "4", "--resume", s(&half)]);
    for f in ["params.bin", "loss.csv"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(resumed.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn truth_and_fem_chain_report_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (truth, chain) = (dir.path().join("truth"), dir.path().join("chain"));
    ok(&["truth", "--nx", "8", "--ny", "8", "--obs-grid", "4", "--out", s(&truth)]);
    ok(&["mcmc", "--nx", "8", "--ny", "8", "--steps", "60", "--burn", "10", "--truth", s(&truth), "--out", s(&chain)]);
    let report: Value = serde_json::from_str(&fs::read_to_string(chain.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["forward"], "fem");
    assert_eq!(report["retained"], 50);
    assert!(report["posterior_mean_m_error"].as_f64().unwrap().is_finite());
    assert_eq!(fs::read(chain.join("posterior_mean_m.bin")).unwrap().len(), 81 * 8);
    let trace = fs::read_to_string(chain.join("trace").join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 61);
}

#[test]
fn surrogate_chain_rejects_a_mismatched_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ck, truth) = (dir.path().join("data"), dir.path().join("ck"), dir.path().join("truth"));
    gen(&data);
    train(&data, &ck, &["--epochs", "1"]);
    ok(&["truth", "--nx", "6", "--ny", "6", "--obs-grid", "3", "--out", s(&truth)]);
    let base = ["mcmc", "--nx", "6", "--ny", "6", "--steps", "20", "--burn", "5", "--truth", s(&truth), "--checkpoint", s(&ck)];
    let r = operon(&[&base[..], &["--forward", "deeponet", "--out", s(&dir.path().join("bad"))]].concat());
    assert_eq!(r.status.code(), Some(2));
    ok(&[&base[..], &["--forward", "pcanet", "--out", s(&dir.path().join("good"))]].concat());
}
