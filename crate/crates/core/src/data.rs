//! Datasets: loaders, synthetic generators, standardization and fold plans.
//!
//! Two on-disk formats are supported:
//!
//! - CSV: one sample per row, comma separated, label column last by default
//!   (the layout of the Kaggle MIT-BIH heartbeat files: 187 samples plus a
//!   trailing label, which may be written as a float such as `1.0e+00`).
//! - `DSR1` raw image container, little-endian:
//!
//! ```text
//! b"DSR1" | u32 N | u32 C | u32 H | u32 W | u32 class_count
//!         | N x u8 labels | N*C*H*W x u8 pixels (row-major, sample-major)
//! ```
//!
//! Pixels are scaled to `[0, 1]` on load.
//!
//! One-dimensional signals are fed to convolutional networks as `1×1×L`
//! images via [`Dataset::with_sample_shape`].

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"DSR1";
const RAW_HEADER_LEN: usize = 4 + 5 * 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N×D` or `N×C×H×W`.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_count: usize, name: impl Into<String>) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {class_count}")));
        }
        if features.rank() < 2 || features.shape()[0] != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("features {:?} with {} labels", features.shape(), labels.len()),
            ));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::Label { row, label, classes: class_count });
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape (everything after the batch axis).
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn feature_dim(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Samples `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            features: self.features.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            name: self.name.clone(),
        })
    }

    /// Reinterprets each sample with a new shape of the same size, e.g. a
    /// 187-sample beat as `[1, 1, 187]`.
    pub fn with_sample_shape(&self, shape: &[usize]) -> Result<Dataset> {
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        Ok(Dataset {
            features: self.features.reshape(full)?,
            ..self.clone()
        })
    }

    /// One epoch of shuffled mini-batches.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Batch>> {
        batch_indices(self.len(), batch_size, seed, epoch)?
            .into_iter()
            .map(|idx| {
                Ok(Batch {
                    features: self.features.select_rows(&idx)?,
                    labels: idx.iter().map(|&i| self.labels[i]).collect(),
                    indices: idx,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub labels: Vec<usize>,
    /// Row indices into the source dataset.
    pub indices: Vec<usize>,
}

/// Permutation of `0..n` seeded by `seed ^ epoch`, chunked into batches; the
/// last batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch as u64);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelColumn {
    #[default]
    Last,
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvOptions {
    pub label_column: LabelColumn,
    pub skip_header: bool,
    /// Declared class count; inferred as `max(label) + 1` when absent.
    pub class_count: Option<usize>,
}

fn parse_err(path: &Path, detail: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        detail,
    }
}

pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.skip_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(fs::File::open(path).map_err(|e| Error::io(path, e))?);

    let mut width = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(path, format!("row {row}: {e}")))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(parse_err(
                path,
                format!("ragged row {row}: {} columns, expected {w}", record.len()),
            ));
        }
        if w < 2 {
            return Err(parse_err(path, "need at least one feature and a label column".into()));
        }
        let label_col = match opts.label_column {
            LabelColumn::Last => w - 1,
            LabelColumn::Index(i) if i < w => i,
            LabelColumn::Index(i) => {
                return Err(parse_err(path, format!("label column {i} out of range for width {w}")))
            }
        };
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(path, format!("row {row}, column {col}: non-numeric cell {cell:?}")))?;
            if col == label_col {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(parse_err(
                        path,
                        format!("row {row}: label {cell:?} is not a non-negative integer"),
                    ));
                }
                labels.push(v as usize);
            } else {
                features.push(v);
            }
        }
    }
    let Some(w) = width else {
        return Err(parse_err(path, "file contains no data rows".into()));
    };
    let n = labels.len();
    let classes = match opts.class_count {
        Some(c) => c,
        None => (labels.iter().copied().max().unwrap_or(0) + 1).max(2),
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(Tensor::new(vec![n, w - 1], features)?, labels, classes, name)
}

/// Writes `features..., label` rows without a header.
pub fn write_csv(d: &Dataset, path: &Path) -> Result<()> {
    let dim = d.feature_dim();
    let mut out = String::new();
    for (row, &label) in d.features.data().chunks(dim).zip(&d.labels) {
        for v in row {
            out.push_str(&v.to_string());
            out.push(',');
        }
        out.push_str(&label.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_raw_images(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut d = decode_raw_images(&bytes, path)?;
    d.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(d)
}

/// Decodes a `DSR1` container; `path` is only used for error messages.
pub fn decode_raw_images(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let truncated = |section, expected, actual| Error::Truncated {
        path: path.to_path_buf(),
        section,
        expected,
        actual,
    };
    if bytes.len() < 4 || &bytes[..4] != RAW_MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    if bytes.len() < RAW_HEADER_LEN {
        return Err(truncated("header", RAW_HEADER_LEN, bytes.len()));
    }
    let field = |i: usize| {
        let at = 4 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte field")) as usize
    };
    let (n, c, h, w, classes) = (field(0), field(1), field(2), field(3), field(4));
    if [n, c, h, w].contains(&0) {
        return Err(parse_err(path, format!("zero extent in header {n}x{c}x{h}x{w}")));
    }
    let body = &bytes[RAW_HEADER_LEN..];
    if body.len() < n {
        return Err(truncated("labels", n, body.len()));
    }
    let (label_bytes, pixels) = body.split_at(n);
    let expected = n * c * h * w;
    if pixels.len() < expected {
        return Err(truncated("pixels", expected, pixels.len()));
    }
    if pixels.len() > expected {
        return Err(parse_err(
            path,
            format!("{} trailing bytes after pixel section", pixels.len() - expected),
        ));
    }
    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(
        Tensor::new(vec![n, c, h, w], features)?,
        label_bytes.iter().map(|&l| l as usize).collect(),
        classes,
        "",
    )
}

/// Encodes an `N×C×H×W` dataset with values in `[0, 1]` as a `DSR1` container.
pub fn encode_raw_images(d: &Dataset) -> Result<Vec<u8>> {
    let s = d.features.shape();
    if s.len() != 4 {
        return Err(Error::shape("encode_raw_images", format!("{s:?} is not N×C×H×W")));
    }
    if d.class_count > 256 {
        return Err(Error::Config(format!("{} classes do not fit in u8 labels", d.class_count)));
    }
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + d.len() + d.features.len());
    out.extend_from_slice(RAW_MAGIC);
    for v in [s[0], s[1], s[2], s[3], d.class_count] {
        let v = u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit in u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(d.labels.iter().map(|&l| l as u8));
    for &v in d.features.data() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("pixel value {v} outside [0, 1]")));
        }
        out.push((v * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn write_raw_images(d: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode_raw_images(d)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Isotropic Gaussian blobs of standard deviation `spread`.
///
/// Class means sit on a circle in the first two coordinates with adjacent
/// means two units apart (so two classes sit at `(±1, 0)`); in one dimension
/// they sit at `0, 2, 4, ...`.
pub fn synth_blobs(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || per_class == 0 || dim == 0 {
        return Err(Error::Config(
            "blobs need classes >= 2, per_class >= 1 and dim >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = 1.0 / (std::f64::consts::PI / classes as f64).sin();
    let mut features = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let mut mean = vec![0.0; dim];
        if dim == 1 {
            mean[0] = 2.0 * c as f64;
        } else {
            let angle = std::f64::consts::TAU * c as f64 / classes as f64;
            mean[0] = radius * angle.cos();
            mean[1] = radius * angle.sin();
        }
        for _ in 0..per_class {
            for m in &mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(
        Tensor::new(vec![classes * per_class, dim], features)?,
        labels,
        classes,
        "blobs",
    )
}

/// Interleaved two-dimensional spiral arms, one per class, each sweeping one
/// full turn outward; `noise` perturbs the angle.
pub fn synth_spirals(classes: usize, per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || per_class < 2 {
        return Err(Error::Config("spirals need classes >= 2 and per_class >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(classes * per_class * 2);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for i in 0..per_class {
            let r = 0.1 + 0.9 * i as f64 / (per_class - 1) as f64;
            let z: f64 = StandardNormal.sample(&mut rng);
            let theta = std::f64::consts::TAU * (c as f64 / classes as f64 + r) + noise * z;
            features.push(r * theta.cos());
            features.push(r * theta.sin());
            labels.push(c);
        }
    }
    Dataset::new(
        Tensor::new(vec![classes * per_class, 2], features)?,
        labels,
        classes,
        "spirals",
    )
}

/// Per-feature mean and standard deviation fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Self {
        let dim = train.feature_dim();
        let n = train.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in train.features.data().chunks(dim) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in train.features.data().chunks(dim) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Standardizer { mean, std }
    }

    /// Features with `std < 1e-12` are left untouched.
    pub fn apply(&self, d: &Dataset) -> Dataset {
        let dim = self.mean.len();
        let mut data = d.features.data().to_vec();
        for row in data.chunks_mut(dim) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                if *s >= 1e-12 {
                    *v = (*v - m) / s;
                }
            }
        }
        Dataset {
            features: Tensor::from_parts_unchecked(d.features.shape().to_vec(), data),
            ..d.clone()
        }
    }
}

/// Standardizes `train` and every split in `others` with the train statistics.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> (Dataset, Vec<Dataset>) {
    let s = Standardizer::fit(train);
    (s.apply(train), others.iter().map(|d| s.apply(d)).collect())
}

/// Stratified assignment of every sample to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn val_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Stratified k-fold: each class is shuffled and dealt round-robin, with the
/// starting fold carried over between classes so fold sizes stay balanced.
pub fn kfold(d: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let counts = d.class_counts();
    if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &n)| n > 0 && n < k) {
        return Err(Error::ClassTooSmall { class, count, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; d.len()];
    let mut next = 0;
    for class in 0..d.class_count {
        let mut members: Vec<usize> = (0..d.len()).filter(|&i| d.labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            assignments[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan { k, assignments, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content).unwrap();
        f
    }

    #[test]
    fn csv_basic() {
        let f = write_tmp(b"1,2,0\n3,4,1\n5,6,0\n");
        let d = load_csv(f.path(), &CsvOptions::default()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.feature_dim(), 2);
        assert_eq!(d.labels, vec![0, 1, 0]);
        assert_eq!(d.features.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn csv_header_and_float_labels() {
        let plain = write_tmp(b"1,2,0\n3,4,1\n5,6,0\n");
        let header = write_tmp(b"a,b,label\n1,2,0.000e+00\n3,4,1.0\n5,6,0\n");
        let opts = CsvOptions {
            skip_header: true,
            ..CsvOptions::default()
        };
        let a = load_csv(plain.path(), &CsvOptions::default()).unwrap();
        let b = load_csv(header.path(), &opts).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn csv_errors() {
        let empty = write_tmp(b"");
        assert!(matches!(load_csv(empty.path(), &CsvOptions::default()), Err(Error::Parse { .. })));

        let ragged = write_tmp(b"1,2,0\n3,1\n");
        let err = load_csv(ragged.path(), &CsvOptions::default()).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");

        let text = write_tmp(b"1,x,0\n");
        assert!(load_csv(text.path(), &CsvOptions::default()).is_err());

        let frac = write_tmp(b"1,2,0.5\n");
        assert!(load_csv(frac.path(), &CsvOptions::default()).is_err());

        let declared = CsvOptions {
            class_count: Some(2),
            ..CsvOptions::default()
        };
        let out_of_range = write_tmp(b"1,2,0\n1,2,5\n");
        assert!(matches!(
            load_csv(out_of_range.path(), &declared),
            Err(Error::Label { row: 1, label: 5, .. })
        ));
    }

    #[test]
    fn csv_label_index() {
        let f = write_tmp(b"1,7,2\n0,8,3\n");
        let opts = CsvOptions {
            label_column: LabelColumn::Index(0),
            ..CsvOptions::default()
        };
        let d = load_csv(f.path(), &opts).unwrap();
        assert_eq!(d.labels, vec![1, 0]);
        assert_eq!(d.features.data(), &[7.0, 2.0, 8.0, 3.0]);
    }

    fn raw_bytes(n: u32, c: u32, h: u32, w: u32, classes: u32, labels: &[u8], pixels: &[u8]) -> Vec<u8> {
        let mut b = RAW_MAGIC.to_vec();
        for v in [n, c, h, w, classes] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(labels);
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn raw_scaling() {
        let bytes = raw_bytes(1, 1, 2, 2, 2, &[1], &[0, 255, 0, 255]);
        let d = decode_raw_images(&bytes, Path::new("mem")).unwrap();
        assert_eq!(d.features.shape(), &[1, 1, 2, 2]);
        assert_eq!(d.features.data(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(d.labels, vec![1]);
    }

    #[test]
    fn raw_errors() {
        let short = raw_bytes(1, 1, 2, 2, 2, &[1], &[0, 255]);
        match decode_raw_images(&short, Path::new("mem")) {
            Err(Error::Truncated { section: "pixels", expected: 4, actual: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = raw_bytes(1, 1, 1, 1, 2, &[0], &[9]);
        bad[3] = b'0';
        assert!(matches!(decode_raw_images(&bad, Path::new("mem")), Err(Error::BadMagic { .. })));
        assert!(matches!(
            decode_raw_images(b"DSR1\x01", Path::new("mem")),
            Err(Error::Truncated { section: "header", .. })
        ));
    }

    #[test]
    fn raw_file_round_trip() {
        let bytes = raw_bytes(2, 1, 1, 3, 3, &[2, 0], &[0, 17, 255, 128, 1, 254]);
        let f = write_tmp(&bytes);
        let d = load_raw_images(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_raw_images(&d, out.path()).unwrap();
        assert_eq!(fs::read(out.path()).unwrap(), bytes);
    }

    #[test]
    fn blobs_are_separable_by_the_y_axis() {
        let d = synth_blobs(2, 100, 2, 0.1, 3).unwrap();
        let dim = d.feature_dim();
        let margin = d
            .features
            .data()
            .chunks(dim)
            .zip(&d.labels)
            .map(|(x, &y)| if y == 0 { x[0] } else { -x[0] })
            .fold(f64::INFINITY, f64::min);
        assert!(margin > 0.0, "margin {margin}");
        assert_eq!(d, synth_blobs(2, 100, 2, 0.1, 3).unwrap());
        assert_ne!(d, synth_blobs(2, 100, 2, 0.1, 4).unwrap());
    }

    #[test]
    fn spirals_defeat_a_perceptron() {
        let d = synth_spirals(2, 50, 0.0, 1).unwrap();
        let mut w = [0.0f64; 3];
        let mut converged = false;
        for _ in 0..2000 {
            let mut mistakes = 0;
            for (x, &y) in d.features.data().chunks(2).zip(&d.labels) {
                let target = if y == 1 { 1.0 } else { -1.0 };
                let score = w[0] * x[0] + w[1] * x[1] + w[2];
                if target * score <= 0.0 {
                    w[0] += target * x[0];
                    w[1] += target * x[1];
                    w[2] += target;
                    mistakes += 1;
                }
            }
            if mistakes == 0 {
                converged = true;
                break;
            }
        }
        assert!(!converged);
    }

    #[test]
    fn standardize_contract() {
        let train = Dataset::new(
            Tensor::new(vec![3, 2], vec![1.0, 5.0, 2.0, 5.0, 6.0, 5.0]).unwrap(),
            vec![0, 1, 0],
            2,
            "t",
        )
        .unwrap();
        let val = Dataset::new(Tensor::new(vec![1, 2], vec![3.0, 7.0]).unwrap(), vec![1], 2, "v").unwrap();
        let (st, others) = standardize(&train, &[&val]);
        let col0: Vec<f64> = st.features.data().chunks(2).map(|r| r[0]).collect();
        assert!(col0.iter().sum::<f64>().abs() < 1e-12);
        // constant column untouched
        assert!(st.features.data().chunks(2).all(|r| r[1] == 5.0));
        assert_eq!(others[0].features.data()[1], 7.0);
        // val uses train mean 3 -> 0
        assert_eq!(others[0].features.data()[0], 0.0);
    }

    #[test]
    fn kfold_balanced_example() {
        let d = Dataset::new(Tensor::zeros(&[10, 1]), vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 2, "x").unwrap();
        let plan = kfold(&d, 5, 9).unwrap();
        for f in 0..5 {
            let val = plan.val_indices(f);
            assert_eq!(val.len(), 2);
            let ones = val.iter().filter(|&&i| d.labels[i] == 1).count();
            assert_eq!(ones, 1);
        }
        assert_eq!(plan, kfold(&d, 5, 9).unwrap());
    }

    #[test]
    fn kfold_small_class_error() {
        let d = Dataset::new(Tensor::zeros(&[6, 1]), vec![0, 0, 0, 0, 0, 1], 2, "x").unwrap();
        assert!(matches!(kfold(&d, 5, 0), Err(Error::ClassTooSmall { class: 1, count: 1, k: 5 })));
    }

    #[test]
    fn batch_examples() {
        assert_eq!(batch_indices(10, 32, 1, 0).unwrap().len(), 1);
        let b = batch_indices(10, 4, 1, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let other = batch_indices(10, 4, 1, 1).unwrap().concat();
        assert_ne!(b.concat(), other);
        assert!(batch_indices(3, 0, 0, 0).is_err());
    }

    #[test]
    fn sample_reshape_for_signals() {
        let d = Dataset::new(Tensor::zeros(&[4, 187]), vec![0, 1, 2, 3], 5, "beats").unwrap();
        let img = d.with_sample_shape(&[1, 1, 187]).unwrap();
        assert_eq!(img.features.shape(), &[4, 1, 1, 187]);
        assert!(d.with_sample_shape(&[2, 94]).is_err());
    }
}
