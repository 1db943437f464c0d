use alloc::vec::Vec;

use super::{KinkSignature, Module, Mode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rectified linear unit; the derivative at exactly zero is taken as 0.
#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<(Vec<usize>, Vec<bool>)>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Module<T> for Relu {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let mask: Vec<bool> = input.data().iter().map(|&v| v > T::zero()).collect();
        let out = input.map(|v| if v > T::zero() { v } else { T::zero() });
        self.mask = Some((input.shape().to_vec(), mask));
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, mask) = self.mask.take().ok_or(Error::BackwardBeforeForward("relu"))?;
        if grad_output.shape() != shape.as_slice() {
            return Err(Error::Shape { context: "relu upstream gradient", expected: shape, got: grad_output.shape().to_vec() });
        }
        let data = grad_output.data().iter().zip(&mask).map(|(&g, &m)| if m { g } else { T::zero() }).collect();
        Tensor::new(&shape, data)
    }

    fn visit_params(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}

    fn kink_signature(&self, sig: &mut KinkSignature) {
        if let Some((_, mask)) = &self.mask {
            mask.iter().for_each(|&m| sig.absorb(m));
        }
    }
}

/// Row-wise numerically stable softmax of an `(N, K)` tensor.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = logits.dims2("softmax input")?;
    let mut out = Vec::with_capacity(n * k);
    for row in logits.data().chunks(k.max(1)).take(n) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| libm::exp(v.as_f64() - max)).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| T::from_f64(e / total)));
    }
    Tensor::new(&[n, k], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_are_positive_and_normalized() {
        let logits = Tensor::<f64>::new(&[2, 3], alloc::vec![1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0]).unwrap();
        let p = softmax_rows(&logits).unwrap();
        for row in p.data().chunks(3) {
            assert!(row.iter().all(|&v| v > 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_gradient_is_masked() {
        let mut relu = Relu::new();
        let x = Tensor::<f32>::new(&[4], alloc::vec![-1.0, 0.0, 2.0, 3.0]).unwrap();
        let y = Module::forward(&mut relu, &x, Mode::Train).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0, 3.0]);
        let g = relu.backward(&Tensor::full(&[4], 1.0f32)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 1.0]);
    }
}
