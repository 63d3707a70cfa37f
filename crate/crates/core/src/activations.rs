//! DSReLU and the baseline activations it is compared against.
//!
//! Every activation is exposed as a scalar forward rule and an exact scalar
//! derivative; the tensor-level functions and the tape op in
//! [`crate::tensor::Graph::activate`] are thin maps over these.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Default leak for [`ActivationKind::LeakyRelu`].
pub const DEFAULT_LEAK: f64 = 0.01;

/// Softplus switches to `x + ln(1 + e^-x)` above this input.
const SOFTPLUS_THRESHOLD: f64 = 20.0;

/// Fraction of planned training completed, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrainingProgress(f64);

impl TrainingProgress {
    pub const START: TrainingProgress = TrainingProgress(0.0);
    pub const END: TrainingProgress = TrainingProgress(1.0);

    /// Clamps `t` into `[0, 1]`. NaN maps to 0.
    pub fn new(t: f64) -> Self {
        if t.is_nan() {
            return TrainingProgress(0.0);
        }
        TrainingProgress(t.clamp(0.0, 1.0))
    }

    /// Progress at zero-based `epoch` out of `max_epochs` planned epochs:
    /// `epoch / max(1, max_epochs - 1)`.
    pub fn at_epoch(epoch: usize, max_epochs: usize) -> Self {
        let denom = max_epochs.saturating_sub(1).max(1);
        TrainingProgress::new(epoch as f64 / denom as f64)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Logistic slope schedule `s(t) = a + (b - a) / (1 + e^{-k (t - 0.5)})`.
///
/// `a` is the initial slope, `b` the final slope, `k` the steepness. Both
/// slopes must be positive so the positive branch stays in the first
/// quadrant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct SlopeSchedule {
    a: f64,
    b: f64,
    k: f64,
}

impl Default for SlopeSchedule {
    /// `a = tan 85°`, `b = tan 10°`, `k = 5`.
    fn default() -> Self {
        SlopeSchedule {
            a: 85f64.to_radians().tan(),
            b: 10f64.to_radians().tan(),
            k: 5.0,
        }
    }
}

impl SlopeSchedule {
    pub fn new(a: f64, b: f64, k: f64) -> Result<Self> {
        for (name, v) in [("a", a), ("b", b), ("k", k)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "slope schedule {name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(SlopeSchedule { a, b, k })
    }

    /// Builds the schedule from slope angles in degrees; both must lie in (0, 90).
    pub fn from_degrees(a_deg: f64, b_deg: f64, k: f64) -> Result<Self> {
        for (name, v) in [("a_deg", a_deg), ("b_deg", b_deg)] {
            if !(v > 0.0 && v < 90.0) {
                return Err(Error::Config(format!(
                    "{name} must lie strictly between 0 and 90 degrees, got {v}"
                )));
            }
        }
        SlopeSchedule::new(a_deg.to_radians().tan(), b_deg.to_radians().tan(), k)
    }

    /// Same slopes, different steepness.
    pub fn with_k(self, k: f64) -> Result<Self> {
        SlopeSchedule::new(self.a, self.b, k)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn slope(&self, t: TrainingProgress) -> f64 {
        let t = t.value();
        self.a + (self.b - self.a) / (1.0 + (-self.k * (t - 0.5)).exp())
    }

    /// Analytic `ds/dt`; its magnitude peaks at `k |a - b| / 4` when `t = 0.5`.
    pub fn slope_rate(&self, t: TrainingProgress) -> f64 {
        let e = (-self.k * (t.value() - 0.5)).exp();
        (self.b - self.a) * self.k * e / ((1.0 + e) * (1.0 + e))
    }
}

#[derive(Serialize, Deserialize)]
struct ScheduleRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<f64>,
}

impl TryFrom<ScheduleRepr> for SlopeSchedule {
    type Error = Error;

    fn try_from(r: ScheduleRepr) -> Result<Self> {
        let d = SlopeSchedule::default();
        let slope = |direct: Option<f64>, deg: Option<f64>, fallback: f64, name: &str| match (
            direct, deg,
        ) {
            (Some(_), Some(_)) => Err(Error::Config(format!(
                "give either {name} or {name}_deg, not both"
            ))),
            (Some(v), None) => Ok(v),
            (None, Some(deg)) => {
                if deg > 0.0 && deg < 90.0 {
                    Ok(deg.to_radians().tan())
                } else {
                    Err(Error::Config(format!(
                        "{name}_deg must lie strictly between 0 and 90, got {deg}"
                    )))
                }
            }
            (None, None) => Ok(fallback),
        };
        let a = slope(r.a, r.a_deg, d.a, "a")?;
        let b = slope(r.b, r.b_deg, d.b, "b")?;
        SlopeSchedule::new(a, b, r.k.unwrap_or(d.k))
    }
}

impl From<SlopeSchedule> for ScheduleRepr {
    fn from(s: SlopeSchedule) -> Self {
        ScheduleRepr {
            a: Some(s.a),
            b: Some(s.b),
            a_deg: None,
            b_deg: None,
            k: Some(s.k),
        }
    }
}

/// The activation under test.
///
/// In JSON a bare name such as `"dsrelu"` or `"leaky_relu"` stands for the
/// default parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", try_from = "KindRepr")]
pub enum ActivationKind {
    Dsrelu(SlopeSchedule),
    Relu,
    LeakyRelu {
        #[serde(default = "default_leak")]
        alpha: f64,
    },
    Sigmoid,
    Tanh,
    Mish,
}

fn default_leak() -> f64 {
    DEFAULT_LEAK
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum TaggedKind {
    Dsrelu(SlopeSchedule),
    Relu,
    LeakyRelu {
        #[serde(default = "default_leak")]
        alpha: f64,
    },
    Sigmoid,
    Tanh,
    Mish,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum KindRepr {
    Name(String),
    Tagged(TaggedKind),
}

impl TryFrom<KindRepr> for ActivationKind {
    type Error = Error;

    fn try_from(r: KindRepr) -> Result<Self> {
        Ok(match r {
            KindRepr::Name(n) => ActivationKind::all()
                .into_iter()
                .find(|k| k.label() == n)
                .ok_or_else(|| Error::Config(format!("unknown activation {n:?}")))?,
            KindRepr::Tagged(TaggedKind::Dsrelu(s)) => ActivationKind::Dsrelu(s),
            KindRepr::Tagged(TaggedKind::Relu) => ActivationKind::Relu,
            KindRepr::Tagged(TaggedKind::LeakyRelu { alpha }) => ActivationKind::LeakyRelu { alpha },
            KindRepr::Tagged(TaggedKind::Sigmoid) => ActivationKind::Sigmoid,
            KindRepr::Tagged(TaggedKind::Tanh) => ActivationKind::Tanh,
            KindRepr::Tagged(TaggedKind::Mish) => ActivationKind::Mish,
        })
    }
}

impl ActivationKind {
    /// DSReLU with the default schedule.
    pub fn dsrelu() -> Self {
        ActivationKind::Dsrelu(SlopeSchedule::default())
    }

    pub fn leaky_relu() -> Self {
        ActivationKind::LeakyRelu {
            alpha: DEFAULT_LEAK,
        }
    }

    /// DSReLU plus the five baselines, in the order used for reports.
    pub fn all() -> Vec<ActivationKind> {
        vec![
            ActivationKind::dsrelu(),
            ActivationKind::Mish,
            ActivationKind::Relu,
            ActivationKind::Sigmoid,
            ActivationKind::Tanh,
            ActivationKind::leaky_relu(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationKind::Dsrelu(s) => SlopeSchedule::new(s.a, s.b, s.k).map(|_| ()),
            ActivationKind::LeakyRelu { alpha } if !(alpha.is_finite() && alpha > 0.0) => Err(
                Error::Config(format!("leaky ReLU alpha must be > 0, got {alpha}")),
            ),
            _ => Ok(()),
        }
    }

    /// File-name friendly label.
    pub fn label(&self) -> &'static str {
        match self {
            ActivationKind::Dsrelu(_) => "dsrelu",
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu { .. } => "leaky_relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Mish => "mish",
        }
    }

    pub fn is_dsrelu(&self) -> bool {
        matches!(self, ActivationKind::Dsrelu(_))
    }

    /// Freezes the activation at progress `t`. Only DSReLU depends on `t`.
    pub fn resolve(&self, t: TrainingProgress) -> Activation {
        match *self {
            ActivationKind::Dsrelu(s) => Activation::Dsrelu { slope: s.slope(t) },
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::LeakyRelu { alpha } => Activation::LeakyRelu { alpha },
            ActivationKind::Sigmoid => Activation::Sigmoid,
            ActivationKind::Tanh => Activation::Tanh,
            ActivationKind::Mish => Activation::Mish,
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// An activation with its DSReLU slope already evaluated for the current epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Dsrelu { slope: f64 },
    Relu,
    LeakyRelu { alpha: f64 },
    Sigmoid,
    Tanh,
    Mish,
}

impl Activation {
    #[inline]
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Activation::Dsrelu { slope } => {
                if x > 0.0 {
                    x * slope
                } else {
                    x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Mish => x * softplus(x).tanh(),
        }
    }

    /// Exact derivative. Kinks take the left-branch slope: DSReLU gives 1 at
    /// zero, ReLU gives 0, LeakyReLU gives alpha.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Dsrelu { slope } => {
                if x > 0.0 {
                    slope
                } else {
                    1.0
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let th = x.tanh();
                1.0 - th * th
            }
            Activation::Mish => {
                // d/dx [x tanh(sp(x))] = tanh(sp) + x sech^2(sp) sigmoid(x)
                let tsp = softplus(x).tanh();
                tsp + x * (1.0 - tsp * tsp) * sigmoid(x)
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, evaluated as `x + ln(1 + e^-x)` above the overflow threshold.
pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_THRESHOLD {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts_unchecked(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

pub fn dsrelu_forward(x: &Tensor, sched: &SlopeSchedule, t: TrainingProgress) -> Tensor {
    let act = Activation::Dsrelu {
        slope: sched.slope(t),
    };
    map(x, |v| act.forward(v))
}

pub fn dsrelu_backward(x: &Tensor, sched: &SlopeSchedule, t: TrainingProgress) -> Tensor {
    let act = Activation::Dsrelu {
        slope: sched.slope(t),
    };
    map(x, |v| act.derivative(v))
}

/// Forward pass of a non-DSReLU activation.
pub fn baseline_forward(kind: &ActivationKind, x: &Tensor) -> Result<Tensor> {
    if kind.is_dsrelu() {
        return Err(Error::Config(
            "baseline_forward does not take DSReLU; use dsrelu_forward".into(),
        ));
    }
    let act = kind.resolve(TrainingProgress::START);
    Ok(map(x, |v| act.forward(v)))
}

/// Elementwise derivative of any activation; `t` only matters for DSReLU.
pub fn activation_gradient(kind: &ActivationKind, x: &Tensor, t: TrainingProgress) -> Tensor {
    let act = kind.resolve(t);
    map(x, |v| act.derivative(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    // 40-digit mpmath evaluation of the closed form with a = tan 85°, b = tan 10°, k = 5.
    const S0: f64 = 10.576365181371428781;
    const S_MID: f64 = 5.8031896417349040203;
    const S1: f64 = 1.0300141020983792594;

    fn t(v: f64) -> TrainingProgress {
        TrainingProgress::new(v)
    }

    #[test]
    fn default_tangents() {
        let s = SlopeSchedule::default();
        assert!((s.a() - 11.430052302761343).abs() < 1e-12);
        assert!((s.b() - 0.17632698070846498).abs() < 1e-15);
        assert_eq!(s.k(), 5.0);
    }

    #[test]
    fn slope_anchor_values() {
        let s = SlopeSchedule::default();
        assert!((s.slope(t(0.0)) - S0).abs() < 1e-9);
        assert!((s.slope(t(0.5)) - S_MID).abs() < 1e-9);
        assert!((s.slope(t(0.5)) - (s.a() + s.b()) / 2.0).abs() < 1e-12);
        assert!((s.slope(t(1.0)) - S1).abs() < 1e-9);
    }

    #[test]
    fn progress_clamps() {
        assert_eq!(t(-3.0).value(), 0.0);
        assert_eq!(t(7.0).value(), 1.0);
        assert_eq!(t(f64::NAN).value(), 0.0);
        assert_eq!(TrainingProgress::at_epoch(0, 1).value(), 0.0);
        assert_eq!(TrainingProgress::at_epoch(1, 3).value(), 0.5);
        assert_eq!(TrainingProgress::at_epoch(2, 3).value(), 1.0);
    }

    #[test]
    fn schedule_rejects_non_positive() {
        assert!(SlopeSchedule::new(0.0, 1.0, 5.0).is_err());
        assert!(SlopeSchedule::new(1.0, -1.0, 5.0).is_err());
        assert!(SlopeSchedule::new(1.0, 1.0, 0.0).is_err());
        assert!(SlopeSchedule::new(f64::INFINITY, 1.0, 1.0).is_err());
        assert!(SlopeSchedule::from_degrees(90.0, 10.0, 5.0).is_err());
    }

    #[test]
    fn schedule_json_forms() {
        let by_deg: SlopeSchedule =
            serde_json::from_str(r#"{"a_deg": 85, "b_deg": 10, "k": 5}"#).unwrap();
        assert_eq!(by_deg, SlopeSchedule::default());
        let direct: SlopeSchedule = serde_json::from_str(r#"{"a": 2.0, "b": 0.5}"#).unwrap();
        assert_eq!(direct, SlopeSchedule::new(2.0, 0.5, 5.0).unwrap());
        assert!(serde_json::from_str::<SlopeSchedule>(r#"{"a": 2.0, "a_deg": 10}"#).is_err());
        assert!(serde_json::from_str::<SlopeSchedule>(r#"{"k": -1}"#).is_err());

        let kind: ActivationKind =
            serde_json::from_str(r#"{"dsrelu": {"a_deg": 85, "b_deg": 10, "k": 5}}"#).unwrap();
        assert_eq!(kind, ActivationKind::dsrelu());
        let leaky: ActivationKind = serde_json::from_str(r#"{"leaky_relu": {}}"#).unwrap();
        assert_eq!(leaky, ActivationKind::leaky_relu());
        let relu: ActivationKind = serde_json::from_str(r#""relu""#).unwrap();
        assert_eq!(relu, ActivationKind::Relu);
    }

    #[test]
    fn dsrelu_examples() {
        let s = SlopeSchedule::default();
        let x = Tensor::from_vec(vec![-2.0, 0.0, 1.0]);
        let y = dsrelu_forward(&x, &s, t(0.5));
        assert_eq!(y.data()[0], -2.0);
        assert_eq!(y.data()[1], 0.0);
        assert!((y.data()[2] - S_MID).abs() < 1e-9);

        let g = dsrelu_backward(&Tensor::from_vec(vec![-3.0, 1.0, 0.0]), &s, t(1.0));
        assert_eq!(g.data()[0], 1.0);
        assert!((g.data()[1] - S1).abs() < 1e-9);
        assert_eq!(g.data()[2], 1.0);
    }

    #[test]
    fn baseline_examples() {
        let x = Tensor::from_vec(vec![0.0, 1.0]);
        let mish = baseline_forward(&ActivationKind::Mish, &x).unwrap();
        assert_eq!(mish.data()[0], 0.0);
        // mpmath: tanh(ln(1 + e))
        assert!((mish.data()[1] - 0.86509838826731034612).abs() < 1e-12);

        let leaky = baseline_forward(&ActivationKind::leaky_relu(), &Tensor::from_vec(vec![-1.0]))
            .unwrap();
        assert!((leaky.data()[0] + 0.01).abs() < 1e-15);

        assert!(baseline_forward(&ActivationKind::dsrelu(), &x).is_err());
    }

    #[test]
    fn baseline_derivatives_at_zero() {
        let zero = Tensor::from_vec(vec![0.0]);
        let p = TrainingProgress::START;
        assert_eq!(activation_gradient(&ActivationKind::Sigmoid, &zero, p).data()[0], 0.25);
        assert_eq!(activation_gradient(&ActivationKind::Tanh, &zero, p).data()[0], 1.0);
    }

    #[test]
    fn mish_large_input_is_stable() {
        let act = Activation::Mish;
        for x in [30.0, 500.0, 1e6] {
            assert!((act.forward(x) - x).abs() <= 1e-9 * x);
            assert!((act.derivative(x) - 1.0).abs() < 1e-9);
        }
        assert!(act.forward(-1e3).abs() < 1e-12);
    }

    #[test]
    fn identity_schedule_is_identity() {
        let s = SlopeSchedule::new(1.0, 1.0, 5.0).unwrap();
        let x = Tensor::from_vec(vec![-5.5, -1e-300, 0.0, 3.25, 1e10]);
        for tv in [0.0, 0.3, 1.0] {
            assert_eq!(dsrelu_forward(&x, &s, t(tv)), x);
        }
    }

    #[test]
    fn slope_rate_peak() {
        let s = SlopeSchedule::default();
        let peak = s.slope_rate(t(0.5)).abs();
        assert!((peak - s.k() * (s.a() - s.b()) / 4.0).abs() < 1e-12);
    }
}
