//! A small residual CNN on synthetic stripe images stored in the raw image
//! container: write, reload, train a few epochs, then export and re-import
//! the parameters.

use std::path::Path;

use dsrelu::activations::ActivationKind;
use dsrelu::data::{self, Dataset};
use dsrelu::harness::{DatasetSource, Experiment, ExperimentConfig};
use dsrelu::network::{Network, NetworkSpec};
use dsrelu::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Horizontal (class 0) or vertical (class 1) stripes with pixel noise.
fn stripes(n: usize, side: usize, seed: u64) -> dsrelu::Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let phase = rng.random_range(0..2);
        for y in 0..side {
            for x in 0..side {
                let line = if class == 0 { y } else { x };
                let base = if (line + phase) % 2 == 0 { 0.8 } else { 0.2 };
                let v: f64 = base + rng.random_range(-0.15..0.15);
                pixels.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    Dataset::new(Tensor::new(vec![n, 1, side, side], pixels)?, labels, 2, "stripes")
}

fn main() -> dsrelu::Result<()> {
    let out = Path::new("target/examples/residual_images");
    std::fs::create_dir_all(out).map_err(|e| dsrelu::Error::Config(e.to_string()))?;
    let raw = out.join("stripes.dsr");
    data::write_raw_images(&stripes(120, 8, 5)?, &raw)?;

    let spec = NetworkSpec::residual([1, 8, 8], &[8, 16], &[1, 1], 2, ActivationKind::dsrelu(), 0);
    println!("{} parameters", Network::build(spec.clone())?.parameter_count());

    let mut cfg = ExperimentConfig::new(DatasetSource::Raw { path: raw }, spec);
    cfg.max_epochs = 8;
    cfg.optimizer.alpha = 1e-3;
    let exp = Experiment::new(cfg)?;
    let run = exp.train_fold(ActivationKind::dsrelu(), 0)?;
    for e in &run.epochs {
        println!(
            "epoch {} t {:.3} train loss {:.4} val loss {:.4} val acc {:.3} ({:.2}s)",
            e.epoch, e.t, e.train_loss, e.val_loss, e.val.accuracy, e.wall_seconds
        );
    }

    let net = exp.initial_network(ActivationKind::dsrelu(), 0)?;
    let (bin, manifest) = (out.join("params.bin"), out.join("params.json"));
    net.export_parameters(&bin, &manifest)?;
    let mut copy = exp.initial_network(ActivationKind::dsrelu(), 1)?;
    copy.import_parameters(&bin, &manifest)?;
    assert_eq!(copy.parameters(), net.parameters());
    println!("parameters exported to {} and re-imported", bin.display());
    Ok(())
}
