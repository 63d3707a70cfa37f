//! Cross-validates DSReLU against ReLU for several schedule steepness values
//! and writes per-k reports plus the slope curves.

use std::path::Path;

use dsrelu::activations::ActivationKind;
use dsrelu::harness::{self, DatasetSource, ExperimentConfig};
use dsrelu::network::NetworkSpec;

fn main() -> dsrelu::Result<()> {
    let mut cfg = ExperimentConfig::new(
        DatasetSource::Blobs {
            classes: 4,
            per_class: 60,
            dim: 3,
            spread: 0.6,
            seed: 1,
        },
        NetworkSpec::mlp(3, &[16, 16], 4, ActivationKind::Relu, 0),
    );
    cfg.activations = vec![ActivationKind::dsrelu(), ActivationKind::Relu];
    cfg.max_epochs = 60;
    cfg.optimizer.alpha = 1e-3;
    cfg.parallel = std::thread::available_parallelism().map_or(1, |n| n.get());

    let ks = [0.1, 1.0, 5.0, 20.0, 50.0];
    let entries = harness::k_sweep(&cfg, &ks)?;
    let out = Path::new("target/examples/k_sweep");
    harness::emit_k_sweep(&entries, &cfg, out)?;

    for e in &entries {
        let row: Vec<String> = e
            .report
            .activations
            .iter()
            .map(|a| format!("{} {:.4} (gap {:+.4})", a.activation, a.best_val_accuracy, a.train_val_gap))
            .collect();
        println!("k = {:>5}: best val accuracy {}", e.k, row.join(", "));
    }
    println!("per-k reports, slope_curves.csv and ksweep_summary.csv in {}", out.display());
    Ok(())
}
