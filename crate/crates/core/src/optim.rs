//! Adam and SGD with momentum.
//!
//! Weight decay is decoupled: before the update every parameter is shrunk by
//! `lr * weight_decay * theta`, then the optimizer step uses the raw gradient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub momentum: f64,
}

impl OptimizerHyper {
    /// Pretraining defaults: lr 1e-2, weight decay 1e-6.
    pub fn adam() -> Self {
        Self { learning_rate: 1e-2, weight_decay: 1e-6, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, momentum: 0.0 }
    }

    /// Fine-tuning defaults: lr 5e-3, momentum 0.9.
    pub fn sgd_momentum() -> Self {
        Self { learning_rate: 5e-3, weight_decay: 0.0, beta1: 0.0, beta2: 0.0, epsilon: 0.0, momentum: 0.9 }
    }
}

/// Optimizer state. Moment buffers are keyed by parameter visiting order;
/// `first` holds Adam's first moment or SGD's velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Scalar = f32> {
    pub kind: OptimizerKind,
    pub hyper: OptimizerHyper,
    pub step_count: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, hyper: OptimizerHyper) -> Self {
        Self { kind, hyper, step_count: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn adam(hyper: OptimizerHyper) -> Self {
        Self::new(OptimizerKind::Adam, hyper)
    }

    pub fn sgd_momentum(hyper: OptimizerHyper) -> Self {
        Self::new(OptimizerKind::SgdMomentum, hyper)
    }

    /// Update `params` from their gradient slots (absent gradients count as
    /// zero). Moment buffers are created on the first step.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if self.step_count == 0 && self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            if self.kind == OptimizerKind::Adam {
                self.second = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            }
        }
        if self.first.len() != params.len() || (self.kind == OptimizerKind::Adam && self.second.len() != params.len()) {
            return Err(Error::ParameterMismatch(format!(
                "optimizer holds {} moment buffers for {} parameters",
                self.first.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            let bad_first = self.first[i].len() != p.numel();
            let bad_second = self.kind == OptimizerKind::Adam && self.second[i].len() != p.numel();
            if bad_first || bad_second {
                return Err(Error::Shape { context: "optimizer moment buffer", expected: vec![p.numel()], got: vec![self.first[i].len()] });
            }
        }
        self.step_count += 1;
        let h = self.hyper;
        let t = self.step_count as i32;
        for (i, p) in params.iter_mut().enumerate() {
            let n = p.numel();
            let grad: Vec<f64> = match p.grad() {
                Some(g) => g.iter().map(|v| v.as_f64()).collect(),
                None => vec![0.0; n],
            };
            let values = p.data_mut();
            if h.weight_decay != 0.0 {
                let shrink = h.learning_rate * h.weight_decay;
                values.iter_mut().for_each(|v| *v = T::from_f64(v.as_f64() - shrink * v.as_f64()));
            }
            match self.kind {
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - libm::pow(h.beta1, f64::from(t));
                    let bc2 = 1.0 - libm::pow(h.beta2, f64::from(t));
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for j in 0..n {
                        let g = grad[j];
                        let mj = h.beta1 * m[j].as_f64() + (1.0 - h.beta1) * g;
                        let vj = h.beta2 * v[j].as_f64() + (1.0 - h.beta2) * g * g;
                        m[j] = T::from_f64(mj);
                        v[j] = T::from_f64(vj);
                        let m_hat = mj / bc1;
                        let v_hat = vj / bc2;
                        let update = h.learning_rate * m_hat / (libm::sqrt(v_hat) + h.epsilon);
                        values[j] = T::from_f64(values[j].as_f64() - update);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    let vel = &mut self.first[i];
                    for j in 0..n {
                        let vj = h.momentum * vel[j].as_f64() - h.learning_rate * grad[j];
                        vel[j] = T::from_f64(vj);
                        values[j] = T::from_f64(values[j].as_f64() + vj);
                    }
                }
            }
        }
        Ok(())
    }

    /// Step every learnable parameter of `module`.
    pub fn step_module(&mut self, module: &mut dyn Module<T>) -> Result<()> {
        self.step_visited(&mut |f| module.visit_params("", f))
    }

    /// Step the parameters reached by `visit`, which must present the same
    /// parameters in the same order on every call.
    pub fn step_visited(&mut self, visit: &mut dyn FnMut(&mut dyn FnMut(&str, &mut Tensor<T>))) -> Result<()> {
        let mut owned: Vec<Tensor<T>> = Vec::new();
        visit(&mut |_, p| owned.push(core::mem::replace(p, Tensor::zeros(&[0]))));
        let result = {
            let mut refs: Vec<&mut Tensor<T>> = owned.iter_mut().collect();
            self.step(&mut refs)
        };
        let mut it = owned.into_iter();
        visit(&mut |_, p| *p = it.next().expect("parameter count is stable"));
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(value: f64, grad: f64) -> Tensor<f64> {
        let mut t = Tensor::new(&[1], vec![value]).unwrap();
        t.grad_mut()[0] = grad;
        t
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate_times_sign() {
        for g in [3.0, -0.02, 1e-3] {
            let hyper = OptimizerHyper { weight_decay: 0.0, ..OptimizerHyper::adam() };
            let mut opt = OptimizerState::<f64>::adam(hyper);
            let mut p = scalar_param(1.0, g);
            opt.step(&mut [&mut p]).unwrap();
            let delta = p.data()[0] - 1.0;
            let expected = -hyper.learning_rate * g.signum() * g.abs() / (g.abs() + hyper.epsilon);
            assert!(((delta - expected) / expected).abs() < 1e-9, "g={g}: {delta}");
        }
    }

    #[test]
    fn adam_two_steps_match_hand_recurrence() {
        let hyper = OptimizerHyper { learning_rate: 0.1, weight_decay: 0.0, ..OptimizerHyper::adam() };
        let mut opt = OptimizerState::<f64>::adam(hyper);
        let mut p = scalar_param(0.5, 2.0);
        opt.step(&mut [&mut p]).unwrap();
        opt.step(&mut [&mut p]).unwrap();
        // m1 = 0.2, v1 = 0.004; m2 = 0.38, v2 = 0.007996
        // step1: 0.1 * (0.2/0.1) / (sqrt(0.004/0.001) + 1e-8) = 0.1 * 2 / (2 + 1e-8)
        // step2: 0.1 * (0.38/0.19) / (sqrt(0.007996/0.001999) + 1e-8) = 0.1 * 2 / (2 + 1e-8)
        let s = 0.1 * 2.0 / (2.0 + 1e-8);
        let expected = 0.5 - 2.0 * s;
        assert!((p.data()[0] - expected).abs() < 1e-12);
        assert_eq!(opt.step_count, 2);
    }

    #[test]
    fn zero_gradient_without_decay_leaves_parameters() {
        let hyper = OptimizerHyper { weight_decay: 0.0, ..OptimizerHyper::adam() };
        let mut opt = OptimizerState::<f64>::adam(hyper);
        let mut p = scalar_param(0.25, 0.0);
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data()[0], 0.25);
    }

    #[test]
    fn sgd_momentum_two_step_recurrence() {
        let hyper = OptimizerHyper::sgd_momentum();
        let mut opt = OptimizerState::<f64>::sgd_momentum(hyper);
        let mut p = scalar_param(1.0, 2.0);
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.data()[0] - (1.0 - 5e-3 * 2.0)).abs() < 1e-15);
        opt.step(&mut [&mut p]).unwrap();
        let v2 = opt.first[0][0];
        assert!((v2 - (-5e-3 * 2.0 * 1.9)).abs() < 1e-15);
        assert!((p.data()[0] - (1.0 - 5e-3 * 2.0 * 2.9)).abs() < 1e-14);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let hyper = OptimizerHyper { momentum: 0.0, ..OptimizerHyper::sgd_momentum() };
        let mut opt = OptimizerState::<f64>::sgd_momentum(hyper);
        let mut p = scalar_param(1.0, 2.0);
        opt.step(&mut [&mut p]).unwrap();
        opt.step(&mut [&mut p]).unwrap();
        assert!((p.data()[0] - (1.0 - 2.0 * 5e-3 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn mismatched_moment_buffers_are_rejected() {
        let mut opt = OptimizerState::<f64>::adam(OptimizerHyper::adam());
        let mut p = scalar_param(1.0, 1.0);
        opt.step(&mut [&mut p]).unwrap();
        let mut wide = Tensor::<f64>::zeros(&[3]);
        assert!(opt.step(&mut [&mut wide]).is_err());
        assert_eq!(opt.step_count, 1);
        let mut q = scalar_param(1.0, 1.0);
        assert!(opt.step(&mut [&mut p, &mut q]).is_err());
    }
}
