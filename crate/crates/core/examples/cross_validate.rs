//! Five-fold comparison of all six activations on three interleaved spirals.
//! Writes the report files to `target/examples/cross_validate` and prints the
//! DSReLU improvement over the best baseline.

use std::path::Path;

use dsrelu::activations::ActivationKind;
use dsrelu::harness::{self, ComparisonReport, DatasetSource, ExperimentConfig};
use dsrelu::network::NetworkSpec;

fn main() -> dsrelu::Result<()> {
    let mut cfg = ExperimentConfig::new(
        DatasetSource::Spirals {
            classes: 3,
            per_class: 100,
            noise: 0.1,
            seed: 0,
        },
        NetworkSpec::mlp(2, &[32, 32], 3, ActivationKind::Relu, 0),
    );
    cfg.max_epochs = 60;
    cfg.optimizer.alpha = 1e-3;
    cfg.parallel = std::thread::available_parallelism().map_or(1, |n| n.get());

    let out = Path::new("target/examples/cross_validate");
    let results = harness::run_cv(&cfg, out)?;
    let report = ComparisonReport::from_results(&results);

    println!("{:<10} {:>9} {:>9} {:>8}", "activation", "train acc", "val acc", "gap");
    for a in &report.activations {
        println!(
            "{:<10} {:>9.4} {:>9.4} {:>+8.4}",
            a.activation, a.best_train_accuracy, a.best_val_accuracy, a.train_val_gap
        );
    }
    for c in &report.improvements {
        let pct = c.improvement_pct.map_or("n/a".to_string(), |p| format!("{p:+.2}%"));
        println!(
            "{}: DSReLU {:.4} vs {} {:.4} -> {pct}",
            c.metric.name(),
            c.dsrelu_best,
            c.runner_up,
            c.runner_up_best
        );
    }
    println!("reports in {}", out.display());
    Ok(())
}
