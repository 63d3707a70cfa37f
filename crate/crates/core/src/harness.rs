//! Experiment driver: per-fold training with early stopping, paired
//! cross-validated comparison of activations, k sweeps and report files.
//!
//! Every stochastic choice is derived from `(seed, fold, epoch)`: the fold
//! plan from `seed`, network initialization from `seed ^ fold`, and batch
//! order from `seed ^ fold ^ epoch`. None of them depends on the activation,
//! so competing activations see identical splits, batch orders and initial
//! weights.
//!
//! The DSReLU progress for zero-based epoch `e` of `E` planned epochs is
//! `t = e / max(1, E - 1)`, fixed by the plan and unaffected by early stopping.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activations::{ActivationKind, SlopeSchedule, TrainingProgress};
use crate::data::{self, CsvOptions, Dataset, FoldPlan, LabelColumn};
use crate::metrics::{self, EvalBatch, MetricRecord};
use crate::network::{Network, NetworkSpec};
use crate::optim::{adam_step, cross_entropy_value, softmax, AdamConfig, AdamState};
use crate::tensor::{Mode, Tensor};
use crate::{Error, Result};

/// Rows per inference chunk during evaluation.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default)]
        skip_header: bool,
        #[serde(default)]
        label_column: LabelColumn,
        #[serde(default)]
        class_count: Option<usize>,
    },
    Raw {
        path: PathBuf,
    },
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    Spirals {
        classes: usize,
        per_class: usize,
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Csv {
                path,
                skip_header,
                label_column,
                class_count,
            } => data::load_csv(
                path,
                &CsvOptions {
                    label_column: *label_column,
                    skip_header: *skip_header,
                    class_count: *class_count,
                },
            ),
            DatasetSource::Raw { path } => data::load_raw_images(path),
            DatasetSource::Blobs {
                classes,
                per_class,
                dim,
                spread,
                seed,
            } => data::synth_blobs(*classes, *per_class, *dim, *spread, *seed),
            DatasetSource::Spirals {
                classes,
                per_class,
                noise,
                seed,
            } => data::synth_spirals(*classes, *per_class, *noise, *seed),
        }
    }
}

fn default_activations() -> Vec<ActivationKind> {
    ActivationKind::all()
}
fn default_batch_size() -> usize {
    32
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    15
}
fn default_folds() -> usize {
    5
}
fn default_parallel() -> usize {
    1
}

/// Full description of a run; the JSON form is what `--config` reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Its `activation` and `seed` are replaced per run.
    pub network: NetworkSpec,
    #[serde(default = "default_activations")]
    pub activations: Vec<ActivationKind>,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "default_folds")]
    pub k_folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    /// Concurrent fold×activation jobs. Execution settings are read but
    /// never written, so they do not change a run's manifest.
    #[serde(default = "default_parallel", skip_serializing)]
    pub parallel: usize,
    /// Forces one job at a time so epoch timings are comparable.
    #[serde(default, skip_serializing)]
    pub serial_timing: bool,
}

impl ExperimentConfig {
    /// Default protocol (batch 32, patience 15, 5 folds, Adam 1e-4) around a
    /// dataset and network.
    pub fn new(dataset: DatasetSource, network: NetworkSpec) -> Self {
        ExperimentConfig {
            dataset,
            network,
            activations: default_activations(),
            optimizer: AdamConfig::default(),
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            early_stop_patience: default_patience(),
            k_folds: default_folds(),
            seed: 0,
            output_dir: None,
            parallel: default_parallel(),
            serial_timing: false,
        }
    }

    /// Reads a config file, or the config recorded in a `manifest.json`.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str(&text) {
            Ok(cfg) => Ok(cfg),
            Err(e) => match serde_json::from_str::<Manifest>(&text) {
                Ok(m) => Ok(m.config),
                Err(_) => Err(e.into()),
            },
        }
    }

    /// The configuration recorded in a run's `manifest.json`.
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        Ok(manifest.config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::Config("early_stop_patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.k_folds < 2 {
            return Err(Error::Config("k_folds must be at least 2".into()));
        }
        if self.activations.is_empty() {
            return Err(Error::Config("activation list is empty".into()));
        }
        let mut seen = HashSet::new();
        for a in &self.activations {
            a.validate()?;
            if !seen.insert(a.label()) {
                return Err(Error::Config(format!("activation {a} listed twice")));
            }
        }
        self.optimizer.validate()
    }

    fn workers(&self) -> usize {
        if self.serial_timing {
            1
        } else {
            self.parallel.max(1)
        }
    }
}

/// Stops after `patience` consecutive epochs without a strict improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Records one validation loss; returns `true` when training should stop.
    pub fn update(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub fold: usize,
    pub epoch: usize,
    pub t: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train: MetricRecord,
    pub val: MetricRecord,
    /// Not serialized; timings are reported only in `timing.csv`.
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldRun {
    pub activation: ActivationKind,
    pub fold: usize,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl FoldRun {
    /// The epoch with the lowest validation loss (first on ties).
    pub fn best_epoch(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .reduce(|best, e| if e.val_loss < best.val_loss { e } else { best })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRuns {
    pub activation: ActivationKind,
    pub folds: Vec<FoldRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResults {
    pub plan: FoldPlan,
    pub runs: Vec<ActivationRuns>,
}

/// Loaded data, fold plan and configuration for one experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    cfg: ExperimentConfig,
    dataset: Dataset,
    plan: FoldPlan,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let dataset = cfg.dataset.load()?;
        Self::with_dataset(cfg, dataset)
    }

    pub fn with_dataset(cfg: ExperimentConfig, dataset: Dataset) -> Result<Self> {
        cfg.validate()?;
        let input = &cfg.network.input_shape;
        let dataset = if dataset.sample_shape() == input.as_slice() {
            dataset
        } else if dataset.feature_dim() == input.iter().product::<usize>() {
            dataset.with_sample_shape(input)?
        } else {
            return Err(Error::Config(format!(
                "dataset samples {:?} do not fit network input {input:?}",
                dataset.sample_shape()
            )));
        };
        if dataset.class_count != cfg.network.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes, network emits {}",
                dataset.class_count, cfg.network.num_classes
            )));
        }
        // Fails early on an unbuildable spec rather than inside a fold job.
        Network::build(cfg.network.clone())?;
        let plan = data::kfold(&dataset, cfg.k_folds, cfg.seed)?;
        Ok(Experiment { cfg, dataset, plan })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn plan(&self) -> &FoldPlan {
        &self.plan
    }

    pub fn fold_seed(&self, fold: usize) -> u64 {
        self.cfg.seed ^ fold as u64
    }

    /// Standardized (train, validation) splits for `fold`.
    pub fn fold_data(&self, fold: usize) -> Result<(Dataset, Dataset)> {
        if fold >= self.plan.k {
            return Err(Error::Config(format!("fold {fold} out of range for k = {}", self.plan.k)));
        }
        let train = self.dataset.subset(&self.plan.train_indices(fold))?;
        let val = self.dataset.subset(&self.plan.val_indices(fold))?;
        let (train, mut others) = data::standardize(&train, &[&val]);
        Ok((train, others.remove(0)))
    }

    /// The freshly initialized network for `fold`.
    pub fn initial_network(&self, activation: ActivationKind, fold: usize) -> Result<Network> {
        let spec = NetworkSpec {
            activation,
            seed: self.fold_seed(fold),
            ..self.cfg.network.clone()
        };
        Network::build(spec)
    }

    pub fn train_fold(&self, activation: ActivationKind, fold: usize) -> Result<FoldRun> {
        let (train, val) = self.fold_data(fold)?;
        let mut net = self.initial_network(activation, fold)?;
        let mut state = AdamState::new(net.parameters());
        let mut stopper = EarlyStopping::new(self.cfg.early_stop_patience);
        let seed = self.fold_seed(fold);
        let max_epochs = self.cfg.max_epochs;
        let mut epochs = Vec::new();
        let mut stopped_early = false;

        for epoch in 0..max_epochs {
            let started = Instant::now();
            let t = TrainingProgress::at_epoch(epoch, max_epochs);
            net.set_progress(t);
            for (batch_index, batch) in train.batches(self.cfg.batch_size, seed, epoch)?.into_iter().enumerate() {
                let non_finite = |e: Error| match e {
                    Error::NonFinite(_) => Error::NonFiniteLoss { fold, epoch, batch: batch_index },
                    other => other,
                };
                let (loss, grads) = net
                    .forward(&batch.features, Mode::Training)
                    .and_then(|f| f.backward(&batch.labels))
                    .map_err(non_finite)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { fold, epoch, batch: batch_index });
                }
                adam_step(net.parameters_mut(), &grads, &mut state, &self.cfg.optimizer)?;
            }
            let (train_loss, train_metrics) = evaluate_split(&net, &train)?;
            let (val_loss, val_metrics) = evaluate_split(&net, &val)?;
            let wall_seconds = started.elapsed().as_secs_f64();
            epochs.push(EpochRecord {
                fold,
                epoch,
                t: t.value(),
                train_loss,
                val_loss,
                train: train_metrics,
                val: val_metrics,
                wall_seconds,
            });
            if stopper.update(val_loss) {
                stopped_early = epoch + 1 < max_epochs;
                break;
            }
        }
        Ok(FoldRun {
            activation,
            fold,
            epochs,
            stopped_early,
        })
    }

    /// Runs `jobs` (activation index, fold) on the configured worker count,
    /// preserving order.
    fn run_jobs(&self, jobs: &[(usize, usize)]) -> Result<Vec<FoldRun>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers())
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            jobs.par_iter()
                .map(|&(a, fold)| self.train_fold(self.cfg.activations[a], fold))
                .collect()
        })
    }

    /// Every configured activation on every fold.
    pub fn cross_validate(&self) -> Result<CvResults> {
        let k = self.plan.k;
        let jobs: Vec<(usize, usize)> = (0..self.cfg.activations.len())
            .flat_map(|a| (0..k).map(move |f| (a, f)))
            .collect();
        let mut runs = self.run_jobs(&jobs)?.into_iter();
        let runs = self
            .cfg
            .activations
            .iter()
            .map(|&activation| ActivationRuns {
                activation,
                folds: runs.by_ref().take(k).collect(),
            })
            .collect();
        Ok(CvResults {
            plan: self.plan.clone(),
            runs,
        })
    }

    /// One activation on one fold, packaged for [`emit_reports`].
    pub fn train_single(&self, activation: ActivationKind, fold: usize) -> Result<CvResults> {
        Ok(CvResults {
            plan: self.plan.clone(),
            runs: vec![ActivationRuns {
                activation,
                folds: vec![self.train_fold(activation, fold)?],
            }],
        })
    }
}

/// Mean cross-entropy and metrics of `net` on a whole split.
pub fn evaluate_split(net: &Network, d: &Dataset) -> Result<(f64, MetricRecord)> {
    let mut logits = Vec::with_capacity(d.len() * d.class_count);
    let rows: Vec<usize> = (0..d.len()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let x = d.features.select_rows(chunk)?;
        logits.extend_from_slice(net.predict(&x)?.data());
    }
    let logits = Tensor::new(vec![d.len(), d.class_count], logits)?;
    let loss = cross_entropy_value(&logits, &d.labels)?;
    let batch = EvalBatch::new(softmax(&logits)?, d.labels.clone())?;
    Ok((loss, metrics::evaluate(&batch, false)?))
}

/// `(best_dsrelu - best_other) / best_other * 100`.
pub fn improvement(best_dsrelu: f64, best_other: f64) -> Result<f64> {
    if !(best_other > 0.0) {
        return Err(Error::Config(format!(
            "improvement needs a positive baseline value, got {best_other}"
        )));
    }
    Ok((best_dsrelu - best_other) / best_other * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    F1Macro,
    AucMacro,
    Loss,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Accuracy, Metric::F1Macro, Metric::AucMacro, Metric::Loss];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1Macro => "f1_macro",
            Metric::AucMacro => "auc_macro",
            Metric::Loss => "loss",
        }
    }

    fn higher_is_better(self) -> bool {
        self != Metric::Loss
    }

    fn read(self, e: &EpochRecord, split: Split) -> f64 {
        let (m, loss) = match split {
            Split::Train => (&e.train, e.train_loss),
            Split::Val => (&e.val, e.val_loss),
        };
        match self {
            Metric::Accuracy => m.accuracy,
            Metric::F1Macro => m.f1_macro,
            Metric::AucMacro => m.auc_macro,
            Metric::Loss => loss,
        }
    }

    /// Best value over the epochs of one fold.
    pub fn best_in(self, run: &FoldRun, split: Split) -> f64 {
        let values = run.epochs.iter().map(|e| self.read(e, split));
        if self.higher_is_better() {
            values.fold(f64::NEG_INFINITY, f64::max)
        } else {
            values.fold(f64::INFINITY, f64::min)
        }
    }

    /// Best value over every epoch of every fold.
    pub fn best_over(self, runs: &ActivationRuns, split: Split) -> f64 {
        let values = runs.folds.iter().map(|f| self.best_in(f, split));
        if self.higher_is_better() {
            values.fold(f64::NEG_INFINITY, f64::max)
        } else {
            values.fold(f64::INFINITY, f64::min)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub activation: String,
    pub fold: usize,
    pub record: EpochRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: Metric,
    pub dsrelu_best: f64,
    pub runner_up: String,
    pub runner_up_best: f64,
    /// `None` when the runner-up's best value is not positive.
    pub improvement_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSummary {
    pub activation: String,
    pub epochs_run: usize,
    pub best_train_accuracy: f64,
    pub best_val_accuracy: f64,
    /// `best_train_accuracy - best_val_accuracy`, an overfitting indicator.
    pub train_val_gap: f64,
}

/// Timing is kept apart from the comparison so the comparison is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub activation: String,
    pub mean_epoch_seconds: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Lowest-validation-loss epoch per activation × fold.
    pub best: Vec<BestRecord>,
    /// DSReLU against the best other activation, per validation metric.
    pub improvements: Vec<MetricComparison>,
    pub activations: Vec<ActivationSummary>,
}

impl ComparisonReport {
    pub fn from_results(results: &CvResults) -> Self {
        let best = results
            .runs
            .iter()
            .flat_map(|r| {
                r.folds.iter().filter_map(move |f| {
                    f.best_epoch().map(|e| BestRecord {
                        activation: r.activation.label().into(),
                        fold: f.fold,
                        record: e.clone(),
                    })
                })
            })
            .collect();

        let mut improvements = Vec::new();
        if let Some(ds) = results.runs.iter().find(|r| r.activation.is_dsrelu()) {
            for metric in [Metric::Accuracy, Metric::F1Macro, Metric::AucMacro] {
                let runner_up = results
                    .runs
                    .iter()
                    .filter(|r| !r.activation.is_dsrelu())
                    .map(|r| (r.activation.label(), metric.best_over(r, Split::Val)))
                    .reduce(|a, b| if b.1 > a.1 { b } else { a });
                if let Some((name, other)) = runner_up {
                    let mine = metric.best_over(ds, Split::Val);
                    improvements.push(MetricComparison {
                        metric,
                        dsrelu_best: mine,
                        runner_up: name.into(),
                        runner_up_best: other,
                        improvement_pct: improvement(mine, other).ok(),
                    });
                }
            }
        }

        let activations = results
            .runs
            .iter()
            .map(|r| {
                let tr = Metric::Accuracy.best_over(r, Split::Train);
                let va = Metric::Accuracy.best_over(r, Split::Val);
                ActivationSummary {
                    activation: r.activation.label().into(),
                    epochs_run: r.folds.iter().map(|f| f.epochs.len()).sum(),
                    best_train_accuracy: tr,
                    best_val_accuracy: va,
                    train_val_gap: tr - va,
                }
            })
            .collect();
        ComparisonReport {
            best,
            improvements,
            activations,
        }
    }
}

pub fn timing_summary(results: &CvResults) -> Vec<TimingSummary> {
    results
        .runs
        .iter()
        .map(|r| {
            let times: Vec<f64> = r
                .folds
                .iter()
                .flat_map(|f| f.epochs.iter().map(|e| e.wall_seconds))
                .collect();
            TimingSummary {
                activation: r.activation.label().into(),
                mean_epoch_seconds: times.iter().sum::<f64>() / times.len().max(1) as f64,
                epochs: times.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decisions {
    pub f1_averaging: String,
    pub auc_variant: String,
    pub initialization: String,
    pub progress_formula: String,
    pub progress_granularity: String,
    pub dsrelu_subgradient_at_zero: f64,
    pub preprocessing: String,
    pub early_stopping: String,
    pub split: String,
    pub seeds: String,
}

impl Default for Decisions {
    fn default() -> Self {
        Decisions {
            f1_averaging: "macro (unweighted mean over classes present in labels or predictions; undefined precision/recall -> 0)".into(),
            auc_variant: "one-vs-rest macro, rank-based (Mann-Whitney), ties count 0.5; classes without both a positive and a negative are skipped".into(),
            initialization: "Kaiming-uniform fan-in, gain sqrt(2), for every activation; zero biases".into(),
            progress_formula: "t = epoch / max(1, max_epochs - 1), clamped to [0, 1]".into(),
            progress_granularity: "per epoch".into(),
            dsrelu_subgradient_at_zero: 1.0,
            preprocessing: "per-feature standardization fitted on each fold's training split; features with std < 1e-12 left unscaled".into(),
            early_stopping: "monitors validation loss, strict improvement (min_delta 0); best metrics read from history, weights not restored".into(),
            split: "stratified k-fold; fold i is validation, the rest training".into(),
            seeds: "fold plan: seed; network init: seed ^ fold; batch order: seed ^ fold ^ epoch".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub k: usize,
    pub seed: u64,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub decisions: Decisions,
    pub folds: FoldSummary,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub const METRICS_HEADER: &str = "activation,fold,epoch,split,accuracy,f1_macro,auc_macro,loss,t";
pub const SUMMARY_HEADER: &str = "metric,split,fold,activation,value,best";
pub const TIMING_HEADER: &str = "activation,mean_epoch_seconds,epochs";
pub const CURVE_HEADER: &str = "epoch,t,train_loss,val_loss,train_accuracy,val_accuracy,train_f1_macro,val_f1_macro,train_auc_macro,val_auc_macro";

/// Writes `metrics.csv`, `summary.csv`, `timing.csv`, `comparison.json`,
/// `manifest.json` and `curves/<activation>_<fold>.csv` under `out`.
///
/// Everything except `timing.csv` is a pure function of the configuration.
pub fn emit_reports(results: &CvResults, cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    if results.runs.iter().all(|r| r.folds.is_empty()) {
        return Err(Error::Config("no results to report".into()));
    }
    let curves = out.join("curves");
    fs::create_dir_all(&curves).map_err(|e| Error::io(&curves, e))?;

    let mut metrics_csv = format!("{METRICS_HEADER}\n");
    for r in &results.runs {
        for f in &r.folds {
            let mut curve = format!("{CURVE_HEADER}\n");
            for e in &f.epochs {
                for (split, m, loss) in [("train", &e.train, e.train_loss), ("val", &e.val, e.val_loss)] {
                    writeln!(
                        metrics_csv,
                        "{},{},{},{}",
                        r.activation.label(),
                        m.csv_row(e.fold, e.epoch, split),
                        loss,
                        e.t
                    )
                    .expect("string write");
                }
                writeln!(
                    curve,
                    "{},{},{},{},{},{},{},{},{},{}",
                    e.epoch,
                    e.t,
                    e.train_loss,
                    e.val_loss,
                    e.train.accuracy,
                    e.val.accuracy,
                    e.train.f1_macro,
                    e.val.f1_macro,
                    e.train.auc_macro,
                    e.val.auc_macro
                )
                .expect("string write");
            }
            write_file(&curves.join(format!("{}_{}.csv", r.activation.label(), f.fold)), &curve)?;
        }
    }
    write_file(&out.join("metrics.csv"), &metrics_csv)?;
    write_file(&out.join("summary.csv"), &summary_csv(results))?;

    let mut timing = format!("{TIMING_HEADER}\n");
    for t in timing_summary(results) {
        writeln!(timing, "{},{},{}", t.activation, t.mean_epoch_seconds, t.epochs).expect("string write");
    }
    write_file(&out.join("timing.csv"), &timing)?;

    let report = ComparisonReport::from_results(results);
    write_file(&out.join("comparison.json"), &serde_json::to_string_pretty(&report)?)?;

    let manifest = Manifest {
        config: cfg.clone(),
        decisions: Decisions::default(),
        folds: FoldSummary {
            k: results.plan.k,
            seed: results.plan.seed,
            sizes: results.plan.fold_sizes(),
        },
    };
    write_file(&out.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Per (metric, split, fold) row: each activation's best value in that fold,
/// with the row's best flagged (ties all flagged).
fn summary_csv(results: &CvResults) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    let folds: Vec<usize> = {
        let mut f: Vec<usize> = results.runs.iter().flat_map(|r| r.folds.iter().map(|f| f.fold)).collect();
        f.sort_unstable();
        f.dedup();
        f
    };
    for metric in Metric::ALL {
        for split in [Split::Train, Split::Val] {
            for &fold in &folds {
                let row: Vec<(&str, f64)> = results
                    .runs
                    .iter()
                    .filter_map(|r| {
                        r.folds
                            .iter()
                            .find(|f| f.fold == fold)
                            .map(|f| (r.activation.label(), metric.best_in(f, split)))
                    })
                    .collect();
                let target = if metric.higher_is_better() {
                    row.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max)
                } else {
                    row.iter().map(|x| x.1).fold(f64::INFINITY, f64::min)
                };
                for (name, v) in row {
                    writeln!(
                        out,
                        "{},{},{fold},{name},{v},{}",
                        metric.name(),
                        split.name(),
                        u8::from(v == target)
                    )
                    .expect("string write");
                }
            }
        }
    }
    out
}

/// Runs the experiment from scratch and writes reports to `out`.
pub fn run_cv(cfg: &ExperimentConfig, out: &Path) -> Result<CvResults> {
    let exp = Experiment::new(cfg.clone())?;
    let results = exp.cross_validate()?;
    emit_reports(&results, cfg, out)?;
    Ok(results)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSweepEntry {
    pub k: f64,
    pub results: CvResults,
    pub report: ComparisonReport,
}

/// `cfg` with every DSReLU schedule's steepness set to `k`.
pub fn with_steepness(cfg: &ExperimentConfig, k: f64) -> Result<ExperimentConfig> {
    let activations = cfg
        .activations
        .iter()
        .map(|a| match a {
            ActivationKind::Dsrelu(s) => s.with_k(k).map(ActivationKind::Dsrelu),
            other => Ok(*other),
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentConfig {
        activations,
        ..cfg.clone()
    })
}

/// Cross-validates once per steepness value; only DSReLU's `k` changes.
pub fn k_sweep(cfg: &ExperimentConfig, k_values: &[f64]) -> Result<Vec<KSweepEntry>> {
    if k_values.is_empty() {
        return Err(Error::Config("k sweep needs at least one k".into()));
    }
    if !cfg.activations.iter().any(ActivationKind::is_dsrelu) {
        return Err(Error::Config("k sweep needs DSReLU among the activations".into()));
    }
    let dataset = cfg.dataset.load()?;
    k_values
        .iter()
        .map(|&k| {
            let swept = with_steepness(cfg, k)?;
            let results = Experiment::with_dataset(swept, dataset.clone())?.cross_validate()?;
            let report = ComparisonReport::from_results(&results);
            Ok(KSweepEntry { k, results, report })
        })
        .collect()
}

/// The schedule of `cfg`'s DSReLU entry (default schedule if absent).
pub fn base_schedule(cfg: &ExperimentConfig) -> SlopeSchedule {
    cfg.activations
        .iter()
        .find_map(|a| match a {
            ActivationKind::Dsrelu(s) => Some(*s),
            _ => None,
        })
        .unwrap_or_default()
}

pub const SLOPE_CURVE_HEADER: &str = "k,t,slope,slope_rate";
pub const SWEEP_SUMMARY_HEADER: &str = "k,activation,best_val_accuracy,best_val_f1_macro,best_val_auc_macro,train_val_gap";

/// `s(t)` and `ds/dt` at 101 evenly spaced `t` for each `k`.
pub fn slope_curves(base: SlopeSchedule, k_values: &[f64]) -> Result<String> {
    let mut out = format!("{SLOPE_CURVE_HEADER}\n");
    for &k in k_values {
        let s = base.with_k(k)?;
        for i in 0..=100 {
            let t = TrainingProgress::new(i as f64 / 100.0);
            writeln!(out, "{k},{},{},{}", t.value(), s.slope(t), s.slope_rate(t)).expect("string write");
        }
    }
    Ok(out)
}

/// Writes per-k report directories `k_<k>/`, `slope_curves.csv` and
/// `ksweep_summary.csv` under `out`.
pub fn emit_k_sweep(entries: &[KSweepEntry], cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ks: Vec<f64> = entries.iter().map(|e| e.k).collect();
    write_file(&out.join("slope_curves.csv"), &slope_curves(base_schedule(cfg), &ks)?)?;
    let mut summary = format!("{SWEEP_SUMMARY_HEADER}\n");
    for e in entries {
        let swept = with_steepness(cfg, e.k)?;
        emit_reports(&e.results, &swept, &out.join(format!("k_{}", e.k)))?;
        for r in &e.results.runs {
            let gap = e
                .report
                .activations
                .iter()
                .find(|a| a.activation == r.activation.label())
                .map_or(f64::NAN, |a| a.train_val_gap);
            writeln!(
                summary,
                "{},{},{},{},{},{}",
                e.k,
                r.activation.label(),
                Metric::Accuracy.best_over(r, Split::Val),
                Metric::F1Macro.best_over(r, Split::Val),
                Metric::AucMacro.best_over(r, Split::Val),
                gap
            )
            .expect("string write");
        }
    }
    write_file(&out.join("ksweep_summary.csv"), &summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_examples() {
        assert!((improvement(0.51444, 0.418778).unwrap() - 22.84).abs() < 0.01);
        assert!((improvement(0.4613, 0.4164).unwrap() - 10.78).abs() < 0.01);
        assert_eq!(improvement(0.5, 0.5).unwrap(), 0.0);
        assert!(improvement(0.5, 0.0).is_err());
        assert!(improvement(0.5, -1.0).is_err());
    }

    /// Independent counter: stop once the loss has failed to beat the
    /// running minimum `patience` times in a row.
    fn oracle_stop_epoch(losses: &[f64], patience: usize) -> usize {
        let mut best = f64::INFINITY;
        let mut streak = 0;
        for (i, &l) in losses.iter().enumerate() {
            if l < best {
                best = l;
                streak = 0;
            } else {
                streak += 1;
                if streak == patience {
                    return i + 1;
                }
            }
        }
        losses.len()
    }

    fn run_stopper(losses: &[f64], patience: usize) -> usize {
        let mut s = EarlyStopping::new(patience);
        for (i, &l) in losses.iter().enumerate() {
            if s.update(l) {
                return i + 1;
            }
        }
        losses.len()
    }

    #[test]
    fn constant_loss_stops_after_patience_plus_one() {
        let flat = vec![0.7; 40];
        assert_eq!(run_stopper(&flat, 15), 16);
        assert_eq!(run_stopper(&flat[..10], 15), 10);
    }

    #[test]
    fn stopper_matches_counter_oracle() {
        let losses = [1.0, 0.9, 0.95, 0.9, 0.8, 0.85, 0.86, 0.87, 0.79, 0.8, 0.8, 0.8];
        for p in 1..6 {
            assert_eq!(run_stopper(&losses, p), oracle_stop_epoch(&losses, p), "patience {p}");
        }
    }

    #[test]
    fn config_validation() {
        let cfg = ExperimentConfig::new(
            DatasetSource::Blobs {
                classes: 2,
                per_class: 10,
                dim: 2,
                spread: 0.3,
                seed: 0,
            },
            NetworkSpec::mlp(2, &[4], 2, ActivationKind::Relu, 0),
        );
        assert!(cfg.validate().is_ok());
        let dup = ExperimentConfig {
            activations: vec![ActivationKind::Relu, ActivationKind::Relu],
            ..cfg.clone()
        };
        assert!(dup.validate().is_err());
        let zero = ExperimentConfig {
            max_epochs: 0,
            ..cfg.clone()
        };
        assert!(zero.validate().is_err());
        let none = ExperimentConfig {
            activations: vec![],
            ..cfg
        };
        assert!(none.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let json = r#"{
            "dataset": {"kind": "spirals", "classes": 3, "per_class": 20, "noise": 0.1},
            "network": {"input_shape": [2], "layers": [{"dense": {"out": 8}}, {"dense": {"out": 3}}],
                        "activation": "relu", "num_classes": 3}
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.early_stop_patience, 15);
        assert_eq!(cfg.k_folds, 5);
        assert_eq!(cfg.activations.len(), 6);
        assert_eq!(cfg.optimizer, AdamConfig::default());
    }

    #[test]
    fn slope_curve_rows() {
        let csv = slope_curves(SlopeSchedule::default(), &[5.0, 50.0]).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 101);
    }
}
