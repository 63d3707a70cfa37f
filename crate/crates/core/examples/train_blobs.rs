//! Trains a 2-16-16-2 MLP on two Gaussian blobs with DSReLU and ReLU, one
//! validation fold each, and prints the per-epoch validation accuracy.
//!
//! Run with `cargo run --release --example train_blobs`.

use dsrelu::activations::ActivationKind;
use dsrelu::harness::{DatasetSource, Experiment, ExperimentConfig};
use dsrelu::network::NetworkSpec;

fn main() -> dsrelu::Result<()> {
    let mut cfg = ExperimentConfig::new(
        DatasetSource::Blobs {
            classes: 2,
            per_class: 200,
            dim: 2,
            spread: 0.3,
            seed: 0,
        },
        NetworkSpec::mlp(2, &[16, 16], 2, ActivationKind::dsrelu(), 0),
    );
    cfg.max_epochs = 200;
    let exp = Experiment::new(cfg)?;

    for act in [ActivationKind::dsrelu(), ActivationKind::Relu] {
        let run = exp.train_fold(act, 0)?;
        let best = run.epochs.iter().map(|e| e.val.accuracy).fold(0.0, f64::max);
        println!("{act}: {} epochs, stopped early: {}", run.epochs.len(), run.stopped_early);
        for e in run.epochs.iter().step_by(10) {
            println!(
                "  epoch {:3}  t {:.3}  train loss {:.4}  val loss {:.4}  val acc {:.3}",
                e.epoch, e.t, e.train_loss, e.val_loss, e.val.accuracy
            );
        }
        println!("  best val accuracy {best:.4}");
    }
    Ok(())
}
