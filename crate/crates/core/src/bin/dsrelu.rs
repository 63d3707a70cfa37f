//! Command-line front end over the library's harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsrelu::activations::ActivationKind;
use dsrelu::data;
use dsrelu::gradcheck;
use dsrelu::harness::{self, DatasetSource, Experiment, ExperimentConfig};
use dsrelu::{Error, Result};

#[derive(Parser)]
#[command(name = "dsrelu", version, about = "Dynamic-slope ReLU experiment lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one activation on one cross-validation split.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Activation label; defaults to the first configured one.
        #[arg(long)]
        activation: Option<String>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Cross-validated comparison of every configured activation.
    Cv {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Cross-validate once per DSReLU steepness value.
    Ksweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 1.0, 5.0, 50.0])]
        k: Vec<f64>,
    },
    /// Finite-difference gradient checks of activations, ops, layers and a toy network.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic dataset as label-last CSV.
    GenData {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        /// Blob dimensionality.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Blob standard deviation.
        #[arg(long, default_value_t = 0.3)]
        spread: f64,
        /// Spiral angular noise.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Blobs,
    Spirals,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    serial_timing: bool,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Treat the first row of a CSV dataset as a header.
    #[arg(long)]
    skip_header: bool,
}

impl RunArgs {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::from_json_file(&self.config)?;
        if self.serial_timing {
            cfg.serial_timing = true;
        }
        if let Some(p) = self.parallel {
            cfg.parallel = p;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.skip_header {
            if let DatasetSource::Csv { skip_header, .. } = &mut cfg.dataset {
                *skip_header = true;
            }
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs"));
        cfg.output_dir = Some(out.clone());
        Ok((cfg, out))
    }
}

fn parse_activation(cfg: &ExperimentConfig, label: Option<&str>) -> Result<ActivationKind> {
    match label {
        None => Ok(cfg.activations[0]),
        Some(l) => cfg
            .activations
            .iter()
            .chain(ActivationKind::all().iter())
            .find(|a| a.label() == l)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown activation {l:?}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { run, activation, fold } => {
            let (cfg, out) = run.load()?;
            let act = parse_activation(&cfg, activation.as_deref())?;
            let exp = Experiment::new(cfg.clone())?;
            let results = exp.train_single(act, fold)?;
            harness::emit_reports(&results, &cfg, &out)?;
            let r = &results.runs[0].folds[0];
            if let Some(best) = r.best_epoch() {
                println!(
                    "{act} fold {fold}: {} epochs, best val loss {:.6} at epoch {} (accuracy {:.4})",
                    r.epochs.len(),
                    best.val_loss,
                    best.epoch,
                    best.val.accuracy
                );
            }
            print_written(&out);
        }
        Command::Cv { run } => {
            let (cfg, out) = run.load()?;
            let results = harness::run_cv(&cfg, &out)?;
            for s in harness::ComparisonReport::from_results(&results).activations {
                println!(
                    "{:<10} best val accuracy {:.4}  train-val gap {:+.4}",
                    s.activation, s.best_val_accuracy, s.train_val_gap
                );
            }
            print_written(&out);
        }
        Command::Ksweep { run, k } => {
            let (cfg, out) = run.load()?;
            let entries = harness::k_sweep(&cfg, &k)?;
            harness::emit_k_sweep(&entries, &cfg, &out)?;
            for e in &entries {
                for c in &e.report.improvements {
                    println!(
                        "k = {}: {} DSReLU {:.4} vs {} {:.4}",
                        e.k,
                        c.metric.name(),
                        c.dsrelu_best,
                        c.runner_up,
                        c.runner_up_best
                    );
                }
            }
            print_written(&out);
        }
        Command::Gradcheck { seed } => {
            let reports = gradcheck::full_suite(seed)?;
            let mut failed = Vec::new();
            for r in &reports {
                println!(
                    "{} {:<40} points {:4} max rel err {:.3e}",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.checked,
                    r.max_rel_err
                );
                if !r.passed() {
                    failed.push(r.name.clone());
                }
            }
            if !failed.is_empty() {
                return Err(Error::Config(format!("gradient check failed: {}", failed.join(", "))));
            }
        }
        Command::GenData {
            kind,
            classes,
            per_class,
            dim,
            spread,
            noise,
            seed,
            out,
        } => {
            let d = match kind {
                SynthKind::Blobs => data::synth_blobs(classes, per_class, dim, spread, seed)?,
                SynthKind::Spirals => data::synth_spirals(classes, per_class, noise, seed)?,
            };
            data::write_csv(&d, &out)?;
            println!("wrote {} rows to {}", d.len(), out.display());
        }
    }
    Ok(())
}

fn print_written(out: &Path) {
    println!("reports written to {}", out.display());
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
