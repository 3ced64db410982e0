//! Plain SGD and Adam.
//!
//! SGD:   p ← p − lr·g
//! Adam:  m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²,
//!        p ← p − lr·m̂/(√v̂ + ε) with the usual bias corrections
//!        m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ).

use std::collections::HashMap;

use super::layers::ParamBinding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Applies updates to parameter bindings; Adam moments are keyed by
/// parameter name so the optimizer survives re-borrowing the model.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    step: u64,
    moments: HashMap<String, Moments>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer { config, step: 0, moments: HashMap::new() }
    }

    pub fn step(&mut self, params: &mut [ParamBinding<'_>]) -> Result<()> {
        for binding in params.iter() {
            if let Some(bad) = binding.grad.data().iter().find(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of '{}' contains {bad}",
                    binding.name
                )));
            }
        }
        self.step += 1;
        let lr = self.config.learning_rate;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for binding in params {
                    for (p, g) in binding.value.data_mut().iter_mut().zip(binding.grad.data()) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
                let bc1 = 1.0 - b1.powi(self.step as i32);
                let bc2 = 1.0 - b2.powi(self.step as i32);
                for binding in params {
                    let state = self
                        .moments
                        .entry(binding.name.clone())
                        .or_insert_with(|| Moments {
                            m: vec![0.0; binding.value.len()],
                            v: vec![0.0; binding.value.len()],
                        });
                    for ((p, &g), (m, v)) in binding
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(binding.grad.data())
                        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
                    {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    fn binding<'a>(value: &'a mut Tensor, grad: &'a mut Tensor) -> ParamBinding<'a> {
        ParamBinding { name: "w".into(), value, grad }
    }

    #[test]
    fn sgd_step_on_quadratic() {
        // f(w) = w²/2, f'(w) = w; lr 1 from w=1 lands on the minimum.
        let mut w = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut g = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::sgd(1.0));
        opt.step(&mut [binding(&mut w, &mut g)]).unwrap();
        assert_eq!(w.data()[0], 0.0);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        for config in [OptimizerConfig::sgd(0.1), OptimizerConfig::adam(0.1)] {
            let mut w = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
            let mut g = Tensor::zeros(&[3]);
            let mut opt = Optimizer::new(config);
            opt.step(&mut [binding(&mut w, &mut g)]).unwrap();
            assert_eq!(w.data(), &[1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        // Bias correction makes the first step ≈ lr regardless of gradient scale.
        for scale in [1e-6, 1.0, 1e3] {
            let mut w = Tensor::from_vec(&[1], vec![0.0]).unwrap();
            let mut g = Tensor::from_vec(&[1], vec![scale]).unwrap();
            let mut opt = Optimizer::new(OptimizerConfig::adam(0.01));
            opt.step(&mut [binding(&mut w, &mut g)]).unwrap();
            let step = w.data()[0].abs();
            assert!(
                (step - 0.01).abs() < 1e-4,
                "first Adam step {step} for gradient scale {scale}"
            );
        }
    }

    #[test]
    fn nan_gradient_aborts_with_the_tensor_name() {
        let mut w = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let mut g = Tensor::from_vec(&[2], vec![0.0, f64::NAN]).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01));
        let err = opt.step(&mut [binding(&mut w, &mut g)]).unwrap_err();
        match err {
            Error::NonFinite(msg) => assert!(msg.contains("'w'")),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }
}
