use std::fs;
use std::process::Command;

use dsrelu::activations::{ActivationKind, SlopeSchedule, TrainingProgress};
use dsrelu::harness::{self, DatasetSource, Experiment, ExperimentConfig};
use dsrelu::network::NetworkSpec;
use dsrelu::Error;

fn blobs_config(max_epochs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        DatasetSource::Blobs {
            classes: 3,
            per_class: 30,
            dim: 2,
            spread: 0.4,
            seed: 3,
        },
        NetworkSpec::mlp(2, &[8], 3, ActivationKind::Relu, 0),
    );
    cfg.max_epochs = max_epochs;
    cfg.k_folds = 3;
    cfg.activations = vec![ActivationKind::dsrelu(), ActivationKind::Tanh];
    cfg
}

#[test]
fn progress_sequence_follows_planned_epochs() {
    let exp = Experiment::new(blobs_config(3)).unwrap();
    let run = exp.train_fold(ActivationKind::dsrelu(), 0).unwrap();
    let ts: Vec<f64> = run.epochs.iter().map(|e| e.t).collect();
    assert_eq!(ts, vec![0.0, 0.5, 1.0]);

    let exp = Experiment::new(blobs_config(1)).unwrap();
    let run = exp.train_fold(ActivationKind::dsrelu(), 1).unwrap();
    assert_eq!(run.epochs.len(), 1);
    assert_eq!(run.epochs[0].t, 0.0);
}

#[test]
fn frozen_network_stops_after_patience_plus_one() {
    let mut cfg = blobs_config(30);
    // Updates of 1e-300 leave every weight and the loss bit-identical.
    cfg.optimizer.alpha = 1e-300;
    cfg.early_stop_patience = 4;
    let exp = Experiment::new(cfg.clone()).unwrap();
    let run = exp.train_fold(ActivationKind::Relu, 0).unwrap();
    assert!(run.epochs.windows(2).all(|w| w[0].val_loss == w[1].val_loss));
    assert_eq!(run.epochs.len(), 5);
    assert!(run.stopped_early);
    // t keeps following the 30-epoch plan despite the early stop.
    assert_eq!(run.epochs[4].t, 4.0 / 29.0);

    cfg.max_epochs = 3;
    let run = Experiment::new(cfg).unwrap().train_fold(ActivationKind::Relu, 0).unwrap();
    assert_eq!(run.epochs.len(), 3);
    assert!(!run.stopped_early);
}

#[test]
fn comparison_is_paired_across_activations() {
    let exp = Experiment::new(blobs_config(2)).unwrap();
    let results = exp.cross_validate().unwrap();
    assert_eq!(results.runs.len(), 2);
    for r in &results.runs {
        assert_eq!(r.folds.len(), 3);
        assert_eq!(r.folds.iter().map(|f| f.fold).collect::<Vec<_>>(), vec![0, 1, 2]);
    }
    for fold in 0..3 {
        let a = exp.initial_network(ActivationKind::dsrelu(), fold).unwrap();
        let b = exp.initial_network(ActivationKind::Tanh, fold).unwrap();
        assert_eq!(a.parameters(), b.parameters());
    }
    let again = Experiment::new(blobs_config(2)).unwrap();
    assert_eq!(again.plan(), exp.plan());
}

#[test]
fn one_activation_one_fold_two_epochs_gives_four_rows() {
    let mut cfg = blobs_config(2);
    cfg.early_stop_patience = 10;
    let exp = Experiment::new(cfg.clone()).unwrap();
    let results = exp.train_single(ActivationKind::Tanh, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    harness::emit_reports(&results, &cfg, dir.path()).unwrap();
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4);
    assert!(dir.path().join("curves/tanh_1.csv").exists());
    let timing = fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    assert!(timing.lines().nth(1).unwrap().starts_with("tanh,"));
}

#[test]
fn exploding_updates_report_fold_epoch_and_batch() {
    let mut cfg = blobs_config(5);
    cfg.optimizer.alpha = 1e300;
    let err = Experiment::new(cfg).unwrap().train_fold(ActivationKind::Relu, 2).unwrap_err();
    match err {
        Error::NonFiniteLoss { fold, epoch, batch } => {
            assert_eq!(fold, 2);
            assert_eq!(epoch, 0);
            assert!(batch >= 1);
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = blobs_config(2);
    cfg.network.num_classes = 4;
    assert!(matches!(Experiment::new(cfg), Err(Error::Config(_))));
    let mut cfg = blobs_config(2);
    cfg.network.input_shape = vec![3];
    assert!(Experiment::new(cfg).is_err());
    assert!(harness::k_sweep(&blobs_config(2), &[]).is_err());
    assert!(harness::k_sweep(&blobs_config(2), &[-1.0]).is_err());
}

#[test]
fn singleton_sweep_reproduces_default_run() {
    let cfg = blobs_config(3);
    let dir = tempfile::tempdir().unwrap();
    let base = harness::run_cv(&cfg, &dir.path().join("base")).unwrap();
    let sweep = harness::k_sweep(&cfg, &[5.0]).unwrap();
    harness::emit_k_sweep(&sweep, &cfg, &dir.path().join("sweep")).unwrap();
    for (a, b) in base.runs.iter().zip(&sweep[0].results.runs) {
        assert_eq!(a.activation, b.activation);
        for (fa, fb) in a.folds.iter().zip(&b.folds) {
            let strip = |f: &harness::FoldRun| {
                f.epochs
                    .iter()
                    .map(|e| (e.t, e.train_loss, e.val_loss, e.val.clone()))
                    .collect::<Vec<_>>()
            };
            assert_eq!(strip(fa), strip(fb));
        }
    }
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("base/metrics.csv"), read("sweep/k_5/metrics.csv"));
    assert_eq!(read("base/manifest.json"), read("sweep/k_5/manifest.json"));
}

#[test]
fn slope_curves_match_closed_form() {
    let (a, b) = (85f64.to_radians().tan(), 10f64.to_radians().tan());
    let csv = harness::slope_curves(SlopeSchedule::default(), &[0.1, 5.0, 50.0]).unwrap();
    let mut peak = std::collections::BTreeMap::new();
    for row in csv.lines().skip(1) {
        let v: Vec<f64> = row.split(',').map(|x| x.parse().unwrap()).collect();
        let (k, t, s, ds) = (v[0], v[1], v[2], v[3]);
        let e = (-k * (t - 0.5)).exp();
        let closed = a + (b - a) / (1.0 + e);
        let closed_rate = (b - a) * k * e / (1.0 + e).powi(2);
        assert!((s - closed).abs() < 1e-12, "k={k} t={t}");
        assert!((ds - closed_rate).abs() < 1e-9, "k={k} t={t}");
        let p = peak.entry(k.to_bits()).or_insert(0.0f64);
        *p = p.max(ds.abs());
    }
    assert_eq!(csv.lines().count(), 1 + 3 * 101);
    let peak_of = |k: f64| peak[&k.to_bits()];
    assert!(peak_of(50.0) > peak_of(0.1));
    // Grid contains t = 0.5, where |ds/dt| peaks at k (a - b) / 4.
    assert!((peak_of(50.0) - 50.0 * (a - b) / 4.0).abs() < 1e-9);
    let s = SlopeSchedule::default();
    assert!((s.slope_rate(TrainingProgress::new(0.5)).abs() - 5.0 * (a - b) / 4.0).abs() < 1e-12);
}

fn run_cli(args: &[&str], cwd: &std::path::Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dsrelu"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

#[test]
fn cli_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&["gen-data", "--kind", "blobs", "--classes", "2", "--per-class", "25", "--out", "blobs.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = r#"{
        "dataset": {"kind": "csv", "path": "blobs.csv"},
        "network": {"input_shape": [2], "layers": [{"dense": {"out": 4}}, {"dense": {"out": 2}}],
                    "activation": "relu", "num_classes": 2},
        "activations": ["dsrelu", "relu"],
        "max_epochs": 2,
        "k_folds": 2
    }"#;
    fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let out = run_cli(&["cv", "--config", "cfg.json", "--out", "run", "--parallel", "2", "--seed", "9"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "summary.csv", "timing.csv", "manifest.json", "comparison.json", "curves/dsrelu_1.csv"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    let manifest = fs::read_to_string(dir.path().join("run/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 9"));

    let out = run_cli(&["train", "--config", "run/manifest.json", "--out", "one", "--activation", "relu"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = run_cli(&["ksweep", "--config", "cfg.json", "--out", "sweep", "--k", "1,20"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("sweep/k_20/metrics.csv").exists());
    assert!(dir.path().join("sweep/slope_curves.csv").exists());
}

#[test]
fn cli_failure_prints_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"dataset": {"kind": "csv", "path": "missing.csv"},
        "network": {"input_shape": [2], "layers": [{"dense": {"out": 2}}], "activation": "relu", "num_classes": 2}}"#)
        .unwrap();
    let out = run_cli(&["cv", "--config", "bad.json"], dir.path());
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["error"], "io");
    assert!(v["message"].as_str().unwrap().contains("missing.csv"));
}
