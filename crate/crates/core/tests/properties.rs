use dsrelu::activations::{ActivationKind, SlopeSchedule, TrainingProgress};
use dsrelu::data::{self, Dataset};
use dsrelu::metrics::{self, EvalBatch};
use dsrelu::network::{LayerSpec, Network, NetworkSpec};
use dsrelu::optim::softmax;
use dsrelu::tensor::{Graph, Mode, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

fn probs_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, usize)> {
    (2usize..5, 2usize..30).prop_flat_map(|(c, n)| {
        (
            prop::collection::vec(-4.0f64..4.0, n * c),
            prop::collection::vec(0..c, n),
            Just(c),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// A variable feeding two paths gets the sum of both path gradients.
    #[test]
    fn shared_input_accumulates(x in prop::collection::vec(-2.0f64..2.0, 6), w in prop::collection::vec(-2.0f64..2.0, 6)) {
        let build = |g: &mut Graph, a, b| {
            let wv = g.input(tensor(vec![6], w.clone()));
            let t = g.tanh(a).unwrap();
            let m = g.mul(b, wv).unwrap();
            let s = g.add(t, m).unwrap();
            g.sum(s).unwrap()
        };
        let mut shared = Graph::new(Mode::Training);
        let xv = shared.param(tensor(vec![6], x.clone()));
        let l = build(&mut shared, xv, xv);
        shared.backward(l).unwrap();

        let mut split = Graph::new(Mode::Training);
        let a = split.param(tensor(vec![6], x.clone()));
        let b = split.param(tensor(vec![6], x.clone()));
        let l = build(&mut split, a, b);
        split.backward(l).unwrap();

        let (ga, gb) = (split.grad(a).unwrap(), split.grad(b).unwrap());
        for (i, &g) in shared.grad(xv).unwrap().iter().enumerate() {
            prop_assert!((g - (ga[i] + gb[i])).abs() < 1e-12);
        }
    }

    /// DSReLU is strictly increasing, continuous at 0 and has slope at least
    /// min(1, s(t)) everywhere.
    #[test]
    fn dsrelu_shape(t in 0.0f64..=1.0, x in -50.0f64..50.0, dx in 1e-9f64..10.0) {
        let sched = SlopeSchedule::default();
        let tp = TrainingProgress::new(t);
        let f = ActivationKind::Dsrelu(sched).resolve(tp);
        prop_assert!(f.forward(x + dx) > f.forward(x));
        prop_assert!(f.derivative(x) >= sched.slope(tp).min(1.0));
        prop_assert_eq!(f.forward(0.0), 0.0);
        prop_assert!(f.forward(1e-15).abs() < 1e-13 && f.forward(-1e-15).abs() < 1e-13);
    }

    /// The schedule stays strictly inside (b, a) and decreases, for any valid
    /// slope pair and steepness.
    #[test]
    fn schedule_bounds(a in 1.5f64..30.0, b in 0.01f64..1.4, k in 0.05f64..60.0, t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let s = SlopeSchedule::new(a, b, k).unwrap();
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let (slo, shi) = (s.slope(TrainingProgress::new(lo)), s.slope(TrainingProgress::new(hi)));
        prop_assert!(slo > b && slo < a);
        prop_assert!(shi >= b && shi < a);
        prop_assert!(slo >= shi);
        prop_assert!(s.slope_rate(TrainingProgress::new(lo)) < 0.0);
    }

    /// Every baseline except Mish is non-decreasing; all are continuous.
    #[test]
    fn baselines_monotone_and_continuous(x in -30.0f64..30.0, dx in 1e-6f64..5.0) {
        for kind in [ActivationKind::Relu, ActivationKind::leaky_relu(), ActivationKind::Sigmoid, ActivationKind::Tanh] {
            let f = kind.resolve(TrainingProgress::START);
            prop_assert!(f.forward(x + dx) >= f.forward(x), "{kind}");
        }
        for kind in ActivationKind::all() {
            let f = kind.resolve(TrainingProgress::new(0.3));
            let h = 1e-9;
            prop_assert!((f.forward(x + h) - f.forward(x)).abs() < 1e-6, "{kind}");
        }
    }

    #[test]
    fn metrics_lie_in_unit_interval((logits, labels, c) in probs_strategy()) {
        let probs = softmax(&tensor(vec![labels.len(), c], logits)).unwrap();
        let e = EvalBatch::new(probs, labels).unwrap();
        let acc = metrics::accuracy(&e).unwrap();
        let f1 = metrics::f1_macro(&e).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert!((0.0..=1.0).contains(&f1));
        if let Ok(r) = metrics::auc_macro(&e) {
            prop_assert!((0.0..=1.0).contains(&r.macro_auc));
        }
    }

    /// AUC depends only on the ordering of the scores.
    #[test]
    fn auc_invariant_under_monotone_maps(scores in prop::collection::vec(-3.0f64..3.0, 4..40), seed in 0u64..1000) {
        let positive: Vec<bool> = (0..scores.len()).map(|i| ((i as u64 * 2654435761) ^ seed) % 3 == 0).collect();
        prop_assume!(positive.iter().any(|&p| p) && positive.iter().any(|&p| !p));
        let base = metrics::binary_auc(&scores, &positive).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (0.7 * s).exp() * 3.0 + 1.0).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        prop_assert!((metrics::binary_auc(&mapped, &positive).unwrap() - base).abs() < 1e-12);
        prop_assert!((metrics::binary_auc(&cubed, &positive).unwrap() - base).abs() < 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((metrics::binary_auc(&flipped, &positive).unwrap() - (1.0 - base)).abs() < 1e-12);
    }

    /// Folds partition the samples, and each class is spread within one
    /// sample across folds.
    #[test]
    fn kfold_partitions_and_stratifies(counts in prop::collection::vec(5usize..25, 2..5), k in 2usize..6, seed in any::<u64>()) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let n = labels.len();
        let d = Dataset::new(Tensor::zeros(&[n, 1]), labels.clone(), counts.len(), "p").unwrap();
        let plan = data::kfold(&d, k, seed).unwrap();
        let mut seen = vec![0; n];
        for f in 0..k {
            for i in plan.val_indices(f) {
                seen[i] += 1;
            }
            prop_assert_eq!(plan.val_indices(f).len() + plan.train_indices(f).len(), n);
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        for c in 0..counts.len() {
            let per: Vec<usize> = (0..k).map(|f| plan.val_indices(f).iter().filter(|&&i| labels[i] == c).count()).collect();
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
        let sizes = plan.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn batches_cover_every_index_once(n in 1usize..200, bs in 1usize..40, seed in any::<u64>(), epoch in 0usize..50) {
        let batches = data::batch_indices(n, bs, seed, epoch).unwrap();
        let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= bs));
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(&batches, &data::batch_indices(n, bs, seed, epoch).unwrap());
    }

    #[test]
    fn standardization_is_idempotent(values in prop::collection::vec(-100.0f64..100.0, 12..60)) {
        let n = values.len() / 3;
        let d = Dataset::new(tensor(vec![n, 3], values[..n * 3].to_vec()), (0..n).map(|i| i % 2).collect(), 2, "s").unwrap();
        let (once, _) = data::standardize(&d, &[]);
        let (twice, _) = data::standardize(&once, &[]);
        for (a, b) in once.features.data().iter().zip(twice.features.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    /// Random conv/residual stacks yield `[N, classes]` logits and rebuild
    /// identically from the same seed.
    #[test]
    fn network_shapes_and_determinism(
        c in 1usize..3, hw in 4usize..9, width in 1usize..5, stride in 1usize..3,
        classes in 2usize..5, n in 1usize..4, seed in any::<u64>(),
    ) {
        let spec = NetworkSpec {
            input_shape: vec![c, hw, hw],
            layers: vec![
                LayerSpec::Conv { filters: width, kernel: 3, stride: 1, pad: 1 },
                LayerSpec::ResidualBasicBlock { filters: width + 1, stride },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out: classes },
            ],
            activation: ActivationKind::dsrelu(),
            num_classes: classes,
            seed,
        };
        let net = Network::build(spec.clone()).unwrap();
        let again = Network::build(spec).unwrap();
        prop_assert_eq!(net.parameters(), again.parameters());
        let x = Tensor::new(vec![n, c, hw, hw], (0..n * c * hw * hw).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let y = net.predict(&x).unwrap();
        prop_assert_eq!(y.shape(), &[n, classes][..]);
        let y2 = again.predict(&x).unwrap();
        prop_assert_eq!(y.data(), y2.data());
    }
}
