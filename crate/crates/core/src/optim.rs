//! Adam and softmax cross-entropy.

use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.alpha.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.epsilon.is_finite();
        if !ok {
            return Err(Error::Config(format!("invalid Adam configuration {self:?}")));
        }
        Ok(())
    }
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Param]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }
}

/// One bias-corrected Adam update with epsilon outside the square root:
/// `p -= alpha * m_hat / (sqrt(v_hat) + eps)`.
///
/// Gradients are checked before anything is touched, so a non-finite
/// gradient leaves both parameters and state unchanged.
pub fn adam_step(
    params: &mut [Param],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} state buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if g.len() != p.value.len() || m.len() != p.value.len() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {} has {} values, gradient {}", p.name, p.value.len(), g.len()),
            ));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((x, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(m).zip(v) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Records mean softmax cross-entropy on the tape.
pub fn cross_entropy(graph: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    graph.cross_entropy(logits, labels)
}

/// Row-wise softmax of an `N×C` tensor using max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::shape("softmax", format!("{:?}", logits.shape())));
    }
    let c = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|&z| (z - max).exp()));
        let sum: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|p| *p /= sum);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Cross-entropy value without building a tape.
pub fn cross_entropy_value(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new(crate::tensor::Mode::Inference);
    let z = g.input(logits.clone());
    let l = g.cross_entropy(z, labels)?;
    Ok(g.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mode;

    fn scalar_param(v: f64) -> Vec<Param> {
        vec![Param {
            name: "p".into(),
            value: Tensor::from_vec(vec![v]),
        }]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_param(0.75);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vec![0.0]], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p[0].value.data(), &[0.75]);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = scalar_param(1.0);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vec![2.0]], &mut st, &AdamConfig::default()).unwrap();
        // m_hat = 2, v_hat = 4
        let expected = 1.0 - 1e-4 * 2.0 / (2.0 + 1e-8);
        assert!((p[0].value.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_param(1.0);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &[vec![f64::NAN]], &mut st, &AdamConfig::default());
        assert!(matches!(err, Err(Error::NonFiniteGradient(ref n)) if n == "p"));
        assert_eq!(st.step(), 0);
        assert_eq!(p[0].value.data(), &[1.0]);
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(bad.validate().is_err());
        let parsed: AdamConfig = serde_json::from_str(r#"{"alpha": 0.01}"#).unwrap();
        assert_eq!(parsed.beta2, 0.999);
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let z = Tensor::zeros(&[3, 4]);
        let l = cross_entropy_value(&z, &[0, 1, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_logit_is_stable() {
        let z = Tensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap();
        let l = cross_entropy_value(&z, &[0]).unwrap();
        assert!(l.abs() < 1e-12);
        let p = softmax(&z).unwrap();
        assert_eq!(p.data()[0], 1.0);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let z = Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 0.0, 0.5, -0.5]).unwrap();
        let mut g = Graph::new(Mode::Training);
        let zv = g.param(z);
        let l = cross_entropy(&mut g, zv, &[2, 0]).unwrap();
        g.backward(l).unwrap();
        for row in g.grad(zv).unwrap().chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
