use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use archdoor::archjson;
use archdoor::data::{DatasetSpec, SyntheticTask};
use archdoor::experiment::{desk_config, Attack, Setting};
use archdoor::graph::{ArchGraph, Dense, NodeKind};

fn archdoor(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_archdoor"))
        .args(args)
        .current_dir(dir)
        .env_remove("ARCHDOOR_OUT")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn build_inject_scan_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&archdoor(&["build", "--arch", "alexnet-small", "-o", "clean.archjson"], d)), 0);
    let before = fs::read(d.join("clean.archjson")).unwrap();
    assert_eq!(code(&archdoor(&["inject", "clean.archjson", "--mode", "robust", "-o", "evil.archjson"], d)), 0);
    assert_eq!(code(&archdoor(&["inject", "clean.archjson", "--mode", "naive", "-o", "naive.archjson"], d)), 0);
    // inputs are never modified in place
    assert_eq!(fs::read(d.join("clean.archjson")).unwrap(), before);

    let clean = archdoor(&["scan", "clean.archjson"], d);
    assert_eq!(code(&clean), 0, "{}", String::from_utf8_lossy(&clean.stdout));
    assert_eq!(code(&archdoor(&["scan", "clean.archjson", "evil.archjson"], d)), 3);
    let json = archdoor(&["scan", "--json", "naive.archjson"], d);
    assert_eq!(code(&json), 3);
    let report: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert!(report.to_string().contains("io-path"), "{report}");
}

#[test]
fn validation_and_io_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // a graph without an adaptive average pool has nowhere to inject
    let mut g = ArchGraph::new("flat", vec![3, 4, 4]);
    let f = g.add(NodeKind::Flatten, &[g.input()]);
    let o = g.add(NodeKind::Dense(Dense { in_features: 48, out_features: 2 }), &[f]);
    g.set_output(o);
    archjson::write(d.join("flat.archjson"), &g).unwrap();
    assert_eq!(code(&archdoor(&["inject", "flat.archjson", "-o", "x.archjson"], d)), 1);
    assert!(!d.join("x.archjson").exists());

    fs::write(d.join("broken.archjson"), "{\"version\": \"1\", \"nodes\": [").unwrap();
    assert_eq!(code(&archdoor(&["scan", "broken.archjson"], d)), 1);
    assert_eq!(code(&archdoor(&["scan", "missing.archjson"], d)), 2);
    assert_eq!(code(&archdoor(&["build", "--arch", "no-such-net", "-o", "y.archjson"], d)), 1);
    assert_eq!(code(&archdoor(&["no-such-command"], d)), 1);
    assert_eq!(code(&archdoor(&["--help"], d)), 0);
}

#[test]
fn poison_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = archdoor(
        &["poison", "--synthetic", "stripes", "--classes", "4", "--n", "40", "--fraction", "0.25", "--target", "1", "-o", "m.json"],
        d,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(m["num_examples"], 40);
    let poisoned = m["poisoned"].as_array().unwrap();
    assert_eq!(poisoned.len(), 10);
    assert!(poisoned.iter().all(|p| p["new_label"] == 1));
    assert_eq!(code(&archdoor(&["poison", "--synthetic", "stripes", "--n", "10", "--fraction", "0.01", "-o", "z.json"], d)), 1);
}

#[test]
fn experiment_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut cfg = desk_config(Setting::Direct, Attack::MabRobust, vec![0]);
    cfg.attacker.epochs = 1;
    cfg.attacker.dataset = DatasetSpec::synthetic(SyntheticTask::shapes(4).with_size(16), 48, 24, 5);
    cfg.min_task_acc = None;
    fs::write(d.join("exp.json"), cfg.to_json()).unwrap();
    let before = fs::read(d.join("exp.json")).unwrap();

    let run = archdoor(&["experiment", "exp.json", "--out", "runs"], d);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(fs::read(d.join("exp.json")).unwrap(), before);
    let aggregate = fs::read(d.join("runs/aggregate.json")).unwrap();
    let report = archdoor(&["report", "runs"], d);
    assert_eq!(code(&report), 0);
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.contains("mab-robust") && text.contains("none"), "{text}");

    // resume leaves results untouched
    assert_eq!(code(&archdoor(&["experiment", "exp.json", "--out", "runs"], d)), 0);
    assert_eq!(fs::read(d.join("runs/aggregate.json")).unwrap(), aggregate);

    assert_eq!(code(&archdoor(&["report", "nowhere"], d)), 2);
}
