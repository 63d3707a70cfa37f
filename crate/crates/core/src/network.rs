//! Declarative MLPs and small residual CNNs with a pluggable activation.
//!
//! A [`NetworkSpec`] is a JSON-friendly layer list; [`Network::build`]
//! validates that consecutive shapes compose and draws parameters from a
//! seeded RNG. Dense and convolution layers are followed by the network's
//! activation, except the last weighted layer, which emits the logits.
//!
//! Residual basic blocks compute `act(conv2(act(conv1(x))) + shortcut(x))`
//! with 3×3 convolutions (padding 1). The shortcut is the identity when the
//! block keeps stride 1 and the channel count, and a 1×1 strided projection
//! otherwise.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::{Activation, ActivationKind, TrainingProgress};
use crate::optim::Param;
use crate::tensor::{conv_out_extent, conv_out_extent_floor, Graph, Mode, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        out: usize,
    },
    Conv {
        filters: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
    },
    ResidualBasicBlock {
        filters: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    GlobalAvgPool,
    Flatten,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[D]` for flat features or `[C, H, W]` for images.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub activation: ActivationKind,
    pub num_classes: usize,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkSpec {
    /// Dense stack `input -> hidden... -> classes`.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        activation: ActivationKind,
        seed: u64,
    ) -> Self {
        let mut layers: Vec<LayerSpec> = hidden.iter().map(|&out| LayerSpec::Dense { out }).collect();
        layers.push(LayerSpec::Dense { out: num_classes });
        NetworkSpec {
            input_shape: vec![input_dim],
            layers,
            activation,
            num_classes,
            seed,
        }
    }

    /// Residual CNN: 3×3 stem, then `blocks_per_stage[i]` basic blocks with
    /// `widths[i]` filters (stride 2 at the start of every stage but the
    /// first), global average pooling and a dense head.
    pub fn residual(
        input_shape: [usize; 3],
        widths: &[usize],
        blocks_per_stage: &[usize],
        num_classes: usize,
        activation: ActivationKind,
        seed: u64,
    ) -> Self {
        let mut layers = vec![LayerSpec::Conv {
            filters: widths[0],
            kernel: 3,
            stride: 1,
            pad: 1,
        }];
        for (stage, (&filters, &blocks)) in widths.iter().zip(blocks_per_stage).enumerate() {
            for b in 0..blocks {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                layers.push(LayerSpec::ResidualBasicBlock { filters, stride });
            }
        }
        layers.push(LayerSpec::GlobalAvgPool);
        layers.push(LayerSpec::Dense { out: num_classes });
        NetworkSpec {
            input_shape: input_shape.to_vec(),
            layers,
            activation,
            num_classes,
            seed,
        }
    }

    /// Desk-scale default: 16/32/64 filters, two blocks per stage.
    pub fn desk_resnet(
        input_shape: [usize; 3],
        num_classes: usize,
        activation: ActivationKind,
        seed: u64,
    ) -> Self {
        Self::residual(input_shape, &[16, 32, 64], &[2, 2, 2], num_classes, activation, seed)
    }

    /// The 3/4/6/3 stage layout of ResNet-34 (64..512 filters). Expressible,
    /// but far too slow to train on this CPU backend.
    pub fn resnet34_shaped(
        input_shape: [usize; 3],
        num_classes: usize,
        activation: ActivationKind,
        seed: u64,
    ) -> Self {
        Self::residual(
            input_shape,
            &[64, 128, 256, 512],
            &[3, 4, 6, 3],
            num_classes,
            activation,
            seed,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FeatureShape {
    Flat(usize),
    Image(usize, usize, usize),
}

impl FeatureShape {
    fn dims(self) -> Vec<usize> {
        match self {
            FeatureShape::Flat(d) => vec![d],
            FeatureShape::Image(c, h, w) => vec![c, h, w],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvParams {
    weight: usize,
    bias: usize,
    stride: usize,
    pad: usize,
    /// Residual blocks drop a trailing odd row / column when striding.
    floor: bool,
}

#[derive(Debug, Clone)]
enum Layer {
    Dense {
        weight: usize,
        bias: usize,
        activate: bool,
    },
    Conv {
        conv: ConvParams,
        activate: bool,
    },
    Residual {
        conv1: ConvParams,
        conv2: ConvParams,
        projection: Option<ConvParams>,
    },
    GlobalAvgPool,
    Flatten,
}

struct Builder {
    rng: ChaCha8Rng,
    params: Vec<Param>,
}

impl Builder {
    /// Kaiming-uniform fan-in with gain sqrt(2): U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)).
    fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.push(name, Tensor::from_parts_unchecked(shape, data))
    }

    fn bias(&mut self, name: String, len: usize) -> usize {
        self.push(name, Tensor::zeros(&[len]))
    }

    fn push(&mut self, name: String, value: Tensor) -> usize {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    fn conv(&mut self, prefix: &str, in_c: usize, filters: usize, kernel: usize, stride: usize, pad: usize) -> ConvParams {
        let weight = self.weight(
            format!("{prefix}.weight"),
            vec![filters, in_c, kernel, kernel],
            in_c * kernel * kernel,
        );
        let bias = self.bias(format!("{prefix}.bias"), filters);
        ConvParams { weight, bias, stride, pad, floor: false }
    }
}

/// An instantiated network: parameters plus the compiled layer plan.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Param>,
    layers: Vec<Layer>,
    progress: TrainingProgress,
    activation: Activation,
}

/// The tape of one forward pass.
#[derive(Debug)]
pub struct Forward {
    pub graph: Graph,
    pub logits: Var,
    /// Parameter leaves, in [`Network::parameters`] order.
    pub params: Vec<Var>,
}

impl Forward {
    pub fn logits(&self) -> &Tensor {
        self.graph.value(self.logits)
    }

    /// Cross-entropy of the logits, back-propagated; returns the loss and
    /// one gradient buffer per parameter.
    pub fn backward(mut self, labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let loss = self.graph.cross_entropy(self.logits, labels)?;
        self.graph.backward(loss)?;
        let value = self.graph.value(loss).data()[0];
        let grads = self
            .params
            .iter()
            .map(|&p| {
                self.graph
                    .grad(p)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; self.graph.value(p).len()])
            })
            .collect();
        Ok((value, grads))
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct ParameterManifest {
    dtype: String,
    total: usize,
    parameters: Vec<ManifestEntry>,
}

impl Network {
    pub fn build(spec: NetworkSpec) -> Result<Self> {
        spec.activation.validate()?;
        if spec.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if spec.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        let mut shape = match spec.input_shape.as_slice() {
            [d] if *d > 0 => FeatureShape::Flat(*d),
            [c, h, w] if *c > 0 && *h > 0 && *w > 0 => FeatureShape::Image(*c, *h, *w),
            other => {
                return Err(Error::Config(format!(
                    "input_shape must be [D] or [C, H, W] with positive extents, got {other:?}"
                )))
            }
        };
        let last_weighted = spec
            .layers
            .iter()
            .rposition(|l| !matches!(l, LayerSpec::GlobalAvgPool | LayerSpec::Flatten));

        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            params: Vec::new(),
        };
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (index, layer) in spec.layers.iter().enumerate() {
            let err = |detail: String| Error::Layer { index, detail };
            let activate = Some(index) != last_weighted;
            let (next, compiled) = match (*layer, shape) {
                (LayerSpec::Dense { out }, FeatureShape::Flat(d)) => {
                    if out == 0 {
                        return Err(err("dense layer needs out > 0".into()));
                    }
                    let weight = b.weight(format!("layer{index}.weight"), vec![out, d], d);
                    let bias = b.bias(format!("layer{index}.bias"), out);
                    (FeatureShape::Flat(out), Layer::Dense { weight, bias, activate })
                }
                (LayerSpec::Dense { .. }, FeatureShape::Image(..)) => {
                    return Err(err(
                        "dense layer needs flat input; insert flatten or global_avg_pool".into(),
                    ))
                }
                (LayerSpec::Conv { filters, kernel, stride, pad }, FeatureShape::Image(c, h, w)) => {
                    if filters == 0 || kernel == 0 || stride == 0 {
                        return Err(err("conv needs positive filters, kernel and stride".into()));
                    }
                    let (oh, ow) = match (
                        conv_out_extent(h, kernel, stride, pad),
                        conv_out_extent(w, kernel, stride, pad),
                    ) {
                        (Some(oh), Some(ow)) => (oh, ow),
                        _ => {
                            return Err(err(format!(
                                "{h}x{w} input with kernel {kernel}, stride {stride}, pad {pad} gives a non-integral output"
                            )))
                        }
                    };
                    let conv = b.conv(&format!("layer{index}"), c, filters, kernel, stride, pad);
                    (FeatureShape::Image(filters, oh, ow), Layer::Conv { conv, activate })
                }
                (LayerSpec::ResidualBasicBlock { filters, stride }, FeatureShape::Image(c, h, w)) => {
                    if filters == 0 || stride == 0 {
                        return Err(err("residual block needs positive filters and stride".into()));
                    }
                    let (oh, ow) = match (
                        conv_out_extent_floor(h, 3, stride, 1),
                        conv_out_extent_floor(w, 3, stride, 1),
                    ) {
                        (Some(oh), Some(ow)) => (oh, ow),
                        _ => {
                            return Err(err(format!("{h}x{w} input is too small for a 3x3 window")))
                        }
                    };
                    let prefix = format!("layer{index}");
                    let floor = |c: ConvParams| ConvParams { floor: true, ..c };
                    let conv1 = floor(b.conv(&format!("{prefix}.conv1"), c, filters, 3, stride, 1));
                    let conv2 = b.conv(&format!("{prefix}.conv2"), filters, filters, 3, 1, 1);
                    let projection = (stride != 1 || c != filters)
                        .then(|| floor(b.conv(&format!("{prefix}.shortcut"), c, filters, 1, stride, 0)));
                    (
                        FeatureShape::Image(filters, oh, ow),
                        Layer::Residual { conv1, conv2, projection },
                    )
                }
                (LayerSpec::Conv { .. } | LayerSpec::ResidualBasicBlock { .. }, FeatureShape::Flat(_)) => {
                    return Err(err("convolutional layer needs [C, H, W] input".into()))
                }
                (LayerSpec::GlobalAvgPool, FeatureShape::Image(c, _, _)) => {
                    (FeatureShape::Flat(c), Layer::GlobalAvgPool)
                }
                (LayerSpec::GlobalAvgPool, FeatureShape::Flat(_)) => {
                    return Err(err("global_avg_pool needs [C, H, W] input".into()))
                }
                (LayerSpec::Flatten, s) => {
                    (FeatureShape::Flat(s.dims().iter().product()), Layer::Flatten)
                }
            };
            shape = next;
            layers.push(compiled);
        }
        if shape != FeatureShape::Flat(spec.num_classes) {
            return Err(Error::Layer {
                index: spec.layers.len() - 1,
                detail: format!(
                    "final output {:?} does not match {} classes",
                    shape.dims(),
                    spec.num_classes
                ),
            });
        }
        let progress = TrainingProgress::START;
        let activation = spec.activation.resolve(progress);
        Ok(Network {
            spec,
            params: b.params,
            layers,
            progress,
            activation,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn parameters(&self) -> &[Param] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn progress(&self) -> TrainingProgress {
        self.progress
    }

    /// The activation as it will be applied on the next forward pass.
    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Re-evaluates the DSReLU slope for progress `t`; other activations ignore it.
    pub fn set_progress(&mut self, t: TrainingProgress) {
        self.progress = t;
        self.activation = self.spec.activation.resolve(t);
    }

    /// Expected shape of a batch of `n` samples.
    pub fn batch_shape(&self, n: usize) -> Vec<usize> {
        let mut s = vec![n];
        s.extend_from_slice(&self.spec.input_shape);
        s
    }

    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Forward> {
        let n = batch.shape().first().copied().unwrap_or(0);
        if batch.shape() != self.batch_shape(n).as_slice() {
            return Err(Error::shape(
                "network forward",
                format!("batch {:?}, expected [N, {:?}]", batch.shape(), self.spec.input_shape),
            ));
        }
        let mut g = Graph::new(mode);
        let params: Vec<Var> = self.params.iter().map(|p| g.param(p.value.clone())).collect();
        let mut x = g.input(batch.clone());
        let act = self.activation;
        for layer in &self.layers {
            x = match *layer {
                Layer::Dense { weight, bias, activate } => {
                    let wt = g.transpose(params[weight])?;
                    let z = g.matmul(x, wt)?;
                    let z = g.add_row_bias(z, params[bias])?;
                    if activate {
                        g.activate(z, act)?
                    } else {
                        z
                    }
                }
                Layer::Conv { conv, activate } => {
                    let z = apply_conv(&mut g, &params, x, conv)?;
                    if activate {
                        g.activate(z, act)?
                    } else {
                        z
                    }
                }
                Layer::Residual { conv1, conv2, projection } => {
                    let h = apply_conv(&mut g, &params, x, conv1)?;
                    let h = g.activate(h, act)?;
                    let h = apply_conv(&mut g, &params, h, conv2)?;
                    let shortcut = match projection {
                        Some(p) => apply_conv(&mut g, &params, x, p)?,
                        None => x,
                    };
                    let sum = g.add(h, shortcut)?;
                    g.activate(sum, act)?
                }
                Layer::GlobalAvgPool => g.global_avg_pool(x)?,
                Layer::Flatten => {
                    let s = g.value(x).shape();
                    let flat = vec![s[0], s[1..].iter().product()];
                    g.reshape(x, flat)?
                }
            };
        }
        Ok(Forward { graph: g, logits: x, params })
    }

    /// Logits of an inference pass.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let f = self.forward(batch, Mode::Inference)?;
        Ok(f.logits().clone())
    }

    /// Writes parameters as consecutive little-endian f64 values plus a JSON
    /// manifest of names, shapes and offsets.
    pub fn export_parameters(&self, bin_path: &Path, manifest_path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.parameter_count() * 8);
        let mut entries = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for p in &self.params {
            for v in p.value.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(ManifestEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset,
                len: p.value.len(),
            });
            offset += p.value.len();
        }
        let manifest = ParameterManifest {
            dtype: "f64le".into(),
            total: offset,
            parameters: entries,
        };
        fs::write(bin_path, bytes).map_err(|e| Error::io(bin_path, e))?;
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))?;
        Ok(())
    }

    /// Loads parameters written by [`Network::export_parameters`]; names and
    /// shapes must match this network.
    pub fn import_parameters(&mut self, bin_path: &Path, manifest_path: &Path) -> Result<()> {
        let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: ParameterManifest = serde_json::from_str(&text)?;
        let bytes = fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
        if bytes.len() != manifest.total * 8 {
            return Err(Error::Truncated {
                path: bin_path.to_path_buf(),
                section: "parameters",
                expected: manifest.total * 8,
                actual: bytes.len(),
            });
        }
        if manifest.parameters.len() != self.params.len() {
            return Err(Error::Config(format!(
                "manifest lists {} parameters, network has {}",
                manifest.parameters.len(),
                self.params.len()
            )));
        }
        let mut loaded = Vec::with_capacity(self.params.len());
        for (entry, p) in manifest.parameters.iter().zip(&self.params) {
            if entry.name != p.name || entry.shape != p.value.shape() {
                return Err(Error::Config(format!(
                    "manifest entry {} {:?} does not match parameter {} {:?}",
                    entry.name,
                    entry.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            let data = bytes[entry.offset * 8..(entry.offset + entry.len) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            loaded.push(Tensor::new(entry.shape.clone(), data)?);
        }
        for (p, v) in self.params.iter_mut().zip(loaded) {
            p.value = v;
        }
        Ok(())
    }
}

fn apply_conv(g: &mut Graph, params: &[Var], x: Var, c: ConvParams) -> Result<Var> {
    let z = if c.floor {
        g.conv2d_floor(x, params[c.weight], c.stride, c.pad)?
    } else {
        g.conv2d(x, params[c.weight], c.stride, c.pad)?
    };
    g.add_channel_bias(z, params[c.bias])
}
