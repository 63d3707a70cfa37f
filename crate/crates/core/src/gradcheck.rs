//! Central finite-difference verification of tape gradients.
//!
//! Each check compares the analytic gradient from [`Graph::backward`] with
//! `(f(x + h e_i) - f(x - h e_i)) / 2h` evaluated by re-running the forward
//! pass in inference mode. The error measure is
//! `|analytic - numeric| / max(1, |analytic|)`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activations::{ActivationKind, TrainingProgress};
use crate::network::{LayerSpec, Network, NetworkSpec};
use crate::optim::cross_entropy_value;
use crate::tensor::{Graph, Mode, Tensor, Var};
use crate::Result;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
/// Coordinates sampled per check.
pub const POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    i: usize,
    h: f64,
) -> Result<f64> {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp)?;
    xp[i] = x[i] - h;
    let fm = f(&xp)?;
    Ok((fp - fm) / (2.0 * h))
}

/// Checks `build` (a scalar-valued graph over `inputs`) at up to `points`
/// randomly chosen coordinates spread over all inputs.
pub fn check_graph(
    name: &str,
    inputs: &[Tensor],
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    points: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut g = Graph::new(Mode::Training);
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).len()]))
        .collect();

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(j, t)| (0..t.len()).map(move |i| (j, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, coords.len(), points.min(coords.len()));

    let mut max_rel_err: f64 = 0.0;
    for c in chosen.iter() {
        let (j, i) = coords[c];
        let eval = |x: &[f64]| -> Result<f64> {
            let mut g = Graph::new(Mode::Inference);
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    if k == j {
                        g.input(Tensor::new(t.shape().to_vec(), x.to_vec()).expect("finite perturbation"))
                    } else {
                        g.input(t.clone())
                    }
                })
                .collect();
            let l = build(&mut g, &vars)?;
            Ok(g.value(l).data()[0])
        };
        let numeric = central_difference(eval, inputs[j].data(), i, STEP)?;
        max_rel_err = max_rel_err.max(relative_error(analytic[j][i], numeric));
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        checked: chosen.len(),
        max_rel_err,
        tolerance: TOLERANCE,
    })
}

/// Checks cross-entropy gradients of every network parameter at up to
/// `points` random coordinates.
pub fn check_network(
    name: &str,
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    points: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grads) = net.forward(batch, Mode::Training)?.backward(labels)?;
    let coords: Vec<(usize, usize)> = net
        .parameters()
        .iter()
        .enumerate()
        .flat_map(|(j, p)| (0..p.value.len()).map(move |i| (j, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, coords.len(), points.min(coords.len()));
    let mut probe = net.clone();
    let mut max_rel_err: f64 = 0.0;
    for c in chosen.iter() {
        let (j, i) = coords[c];
        let original = net.parameters()[j].value.clone();
        let eval = |x: &[f64]| -> Result<f64> {
            probe.parameters_mut()[j].value = Tensor::new(original.shape().to_vec(), x.to_vec())?;
            cross_entropy_value(&probe.predict(batch)?, labels)
        };
        let numeric = central_difference(eval, original.data(), i, STEP)?;
        probe.parameters_mut()[j].value = original;
        max_rel_err = max_rel_err.max(relative_error(grads[j][i], numeric));
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        checked: chosen.len(),
        max_rel_err,
        tolerance: TOLERANCE,
    })
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
        .expect("finite samples")
}

/// Uniform in `[-2, 2]` but at least `gap` away from zero, so central
/// differences never straddle a kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(gap..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite samples")
}

/// Weighted sum `sum(w * y)` so every output element gets a distinct cotangent.
fn weighted_sum(g: &mut Graph, y: Var, weights: &Tensor) -> Result<Var> {
    let w = g.input(weights.reshape(g.value(y).shape().to_vec())?);
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// One activation at 100 random non-zero points, through the tape.
pub fn activation_check(kind: ActivationKind, t: TrainingProgress, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = away_from_zero(&mut rng, &[POINTS], 1e-3);
    let act = kind.resolve(t);
    check_graph(
        &format!("activation/{kind}"),
        &[x],
        |g, v| {
            let y = g.activate(v[0], act)?;
            g.sum(y)
        },
        POINTS,
        seed,
    )
}

pub fn activation_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ActivationKind::all()
        .into_iter()
        .map(|kind| {
            let t = TrainingProgress::new(rng.random_range(0.0..1.0));
            activation_check(kind, t, rng.random())
        })
        .collect()
}

/// Every differentiable tape op on random inputs.
pub fn op_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let mut run = |name: &str,
                   inputs: Vec<Tensor>,
                   out_len: usize,
                   build: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
                   rng: &mut ChaCha8Rng|
     -> Result<()> {
        let w = uniform(rng, &[out_len], -2.0, 2.0);
        let s = rng.random();
        reports.push(check_graph(
            &format!("op/{name}"),
            &inputs,
            |g, v| {
                let y = build(g, v)?;
                if g.value(y).len() == 1 && out_len == 1 {
                    Ok(y)
                } else {
                    weighted_sum(g, y, &w)
                }
            },
            POINTS,
            s,
        )?);
        Ok(())
    };

    let a = uniform(&mut rng, &[8, 10], -2.0, 2.0);
    let b = uniform(&mut rng, &[10, 6], -2.0, 2.0);
    run("matmul", vec![a, b], 48, &|g, v| g.matmul(v[0], v[1]), &mut rng)?;

    let x = uniform(&mut rng, &[2, 3, 8, 8], -2.0, 2.0);
    let k = uniform(&mut rng, &[4, 3, 3, 3], -2.0, 2.0);
    run("conv2d", vec![x.clone(), k.clone()], 2 * 4 * 8 * 8, &|g, v| g.conv2d(v[0], v[1], 1, 1), &mut rng)?;
    run("conv2d_stride2", vec![x, k], 2 * 4 * 4 * 4, &|g, v| g.conv2d_floor(v[0], v[1], 2, 1), &mut rng)?;

    let p = uniform(&mut rng, &[10, 12], -2.0, 2.0);
    let q = uniform(&mut rng, &[10, 12], -2.0, 2.0);
    run("add", vec![p.clone(), q.clone()], 120, &|g, v| g.add(v[0], v[1]), &mut rng)?;
    run("sub", vec![p.clone(), q.clone()], 120, &|g, v| g.sub(v[0], v[1]), &mut rng)?;
    run("mul", vec![p.clone(), q], 120, &|g, v| g.mul(v[0], v[1]), &mut rng)?;
    let offset = away_from_zero(&mut rng, &[10, 12], 1e-3);
    let shifted = Tensor::new(vec![10, 12], p.data().iter().zip(offset.data()).map(|(x, d)| x + d).collect())?;
    run("maximum", vec![shifted, p.clone()], 120, &|g, v| g.maximum(v[0], v[1]), &mut rng)?;
    run("scale", vec![p.clone()], 120, &|g, v| g.scale(v[0], -1.75), &mut rng)?;
    run("exp", vec![p.clone()], 120, &|g, v| g.exp(v[0]), &mut rng)?;
    let pos = uniform(&mut rng, &[10, 12], 0.5, 2.0);
    run("log", vec![pos], 120, &|g, v| g.log(v[0]), &mut rng)?;
    run("tanh", vec![p.clone()], 120, &|g, v| g.tanh(v[0]), &mut rng)?;
    run("sum", vec![p.clone()], 1, &|g, v| g.sum(v[0]), &mut rng)?;
    run("mean", vec![p.clone()], 1, &|g, v| g.mean(v[0]), &mut rng)?;
    run("sum_axis", vec![p.clone()], 10, &|g, v| g.sum_axis(v[0], 1), &mut rng)?;
    run("mean_axis", vec![p.clone()], 12, &|g, v| g.mean_axis(v[0], 0), &mut rng)?;
    run("max_axis", vec![p.clone()], 10, &|g, v| g.max_axis(v[0], 1), &mut rng)?;
    run("transpose", vec![p.clone()], 120, &|g, v| g.transpose(v[0]), &mut rng)?;
    run("reshape", vec![p.clone()], 120, &|g, v| g.reshape(v[0], vec![12, 10]), &mut rng)?;
    let bias = uniform(&mut rng, &[12], -2.0, 2.0);
    run("add_row_bias", vec![p.clone(), bias], 120, &|g, v| g.add_row_bias(v[0], v[1]), &mut rng)?;
    let img = uniform(&mut rng, &[4, 5, 3, 3], -2.0, 2.0);
    let cb = uniform(&mut rng, &[5], -2.0, 2.0);
    run("add_channel_bias", vec![img.clone(), cb], 180, &|g, v| g.add_channel_bias(v[0], v[1]), &mut rng)?;
    run("global_avg_pool", vec![img], 20, &|g, v| g.global_avg_pool(v[0]), &mut rng)?;
    run("cross_entropy", vec![p], 1, &|g, v| g.cross_entropy(v[0], &[0, 3, 1, 11, 5, 5, 7, 2, 9, 10]), &mut rng)?;
    Ok(reports)
}

fn labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// One small network per layer type, gradients taken through cross-entropy.
pub fn layer_suite(kind: ActivationKind, seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(&str, Vec<usize>, Vec<LayerSpec>, usize)> = vec![
        ("dense", vec![6], vec![LayerSpec::Dense { out: 12 }, LayerSpec::Dense { out: 3 }], 3),
        (
            "conv",
            vec![2, 5, 5],
            vec![
                LayerSpec::Conv { filters: 3, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::Conv { filters: 2, kernel: 3, stride: 2, pad: 1 },
                LayerSpec::Flatten,
            ],
            18,
        ),
        (
            "residual_basic_block",
            vec![3, 6, 6],
            vec![
                LayerSpec::ResidualBasicBlock { filters: 3, stride: 1 },
                LayerSpec::ResidualBasicBlock { filters: 4, stride: 2 },
                LayerSpec::GlobalAvgPool,
            ],
            4,
        ),
        (
            "global_avg_pool",
            vec![4, 4, 4],
            vec![LayerSpec::Conv { filters: 3, kernel: 3, stride: 1, pad: 1 }, LayerSpec::GlobalAvgPool],
            3,
        ),
        (
            "flatten",
            vec![2, 4, 4],
            vec![
                LayerSpec::Conv { filters: 4, kernel: 3, stride: 1, pad: 0 },
                LayerSpec::Flatten,
                LayerSpec::Dense { out: 3 },
            ],
            3,
        ),
    ];
    let mut reports = Vec::new();
    for (name, input_shape, layers, classes) in cases {
        let spec = NetworkSpec {
            input_shape: input_shape.clone(),
            layers,
            activation: kind,
            num_classes: classes,
            seed: rng.random(),
        };
        let mut net = Network::build(spec)?;
        net.set_progress(TrainingProgress::new(rng.random_range(0.0..1.0)));
        randomize_biases(&mut net, &mut rng);
        let n = 3;
        let mut shape = vec![n];
        shape.extend(input_shape);
        let batch = uniform(&mut rng, &shape, -2.0, 2.0);
        let y = labels(&mut rng, n, classes);
        reports.push(check_network(&format!("layer/{name}/{kind}"), &net, &batch, &y, POINTS, rng.random())?);
    }
    Ok(reports)
}

/// Zero biases put many pre-activations exactly on a kink; nudge them off.
fn randomize_biases(net: &mut Network, rng: &mut ChaCha8Rng) {
    for p in net.parameters_mut() {
        if p.name.ends_with(".bias") {
            let shape = p.value.shape().to_vec();
            p.value = uniform(rng, &shape, -0.5, 0.5);
        }
    }
}

/// Residual network used for the end-to-end check; about 1.3k parameters.
pub fn toy_residual_spec(kind: ActivationKind, seed: u64) -> NetworkSpec {
    NetworkSpec {
        input_shape: vec![2, 6, 6],
        layers: vec![
            LayerSpec::Conv { filters: 4, kernel: 3, stride: 1, pad: 1 },
            LayerSpec::ResidualBasicBlock { filters: 4, stride: 1 },
            LayerSpec::ResidualBasicBlock { filters: 8, stride: 2 },
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { out: 3 },
        ],
        activation: kind,
        num_classes: 3,
        seed,
    }
}

pub fn network_check(kind: ActivationKind, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::build(toy_residual_spec(kind, rng.random()))?;
    net.set_progress(TrainingProgress::new(rng.random_range(0.0..1.0)));
    randomize_biases(&mut net, &mut rng);
    let batch = uniform(&mut rng, &[4, 2, 6, 6], -2.0, 2.0);
    let y = labels(&mut rng, 4, 3);
    check_network(&format!("network/{kind}"), &net, &batch, &y, POINTS, rng.random())
}

/// Everything: ops, activations, each layer type per activation, and the
/// end-to-end residual network per activation.
pub fn full_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = op_suite(rng.random())?;
    reports.extend(activation_suite(rng.random())?);
    for kind in ActivationKind::all() {
        reports.extend(layer_suite(kind, rng.random())?);
        reports.push(network_check(kind, rng.random())?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_denominator() {
        assert_eq!(relative_error(0.5, 0.25), 0.25);
        assert_eq!(relative_error(10.0, 9.0), 0.1);
    }

    #[test]
    fn central_difference_of_cube() {
        let d = central_difference(|x| Ok(x[0].powi(3)), &[2.0], 0, 1e-4).unwrap();
        assert!((d - 12.0).abs() < 1e-6);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // scale's backward is correct, so compare against a function whose
        // forward differs from what the tape differentiates.
        let x = Tensor::from_vec(vec![0.3, -0.7]);
        let r = check_graph(
            "mismatch",
            &[x],
            |g, v| {
                let y = if g.mode() == Mode::Training { g.scale(v[0], 2.0)? } else { g.scale(v[0], 3.0)? };
                g.sum(y)
            },
            10,
            0,
        )
        .unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn toy_network_is_small() {
        let net = Network::build(toy_residual_spec(ActivationKind::Relu, 0)).unwrap();
        assert!(net.parameter_count() <= 5000, "{}", net.parameter_count());
    }
}
