use alloc::vec;
use alloc::vec::Vec;

use super::{he_normal, join, Module, Mode};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Fully connected layer `y = x W^T + b` over `(N, in)` input.
#[derive(Clone, Debug)]
pub struct Dense<T: Scalar = f32> {
    /// `(out, in)`
    pub weight: Tensor<T>,
    /// `(out)`
    pub bias: Tensor<T>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Stream) -> Self {
        Self { weight: he_normal(&[outputs, inputs], inputs, rng), bias: Tensor::zeros(&[outputs]), cached_input: None }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (out, _) = weight.dims2("dense weight")?;
        if bias.shape() != [out] {
            return Err(Error::Shape { context: "dense bias", expected: vec![out], got: bias.shape().to_vec() });
        }
        Ok(Self { weight, bias, cached_input: None })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl<T: Scalar> Module<T> for Dense<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (n, k) = input.dims2("dense input")?;
        if k != self.inputs() {
            return Err(Error::Shape { context: "dense input features", expected: vec![self.inputs()], got: vec![k] });
        }
        let m = self.outputs();
        let mut out: Vec<T> = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.bias.data());
        }
        gemm(T::one(), MatRef::new(input.data(), n, k), MatRef::new(self.weight.data(), m, k).t(), T::one(), &mut out);
        self.cached_input = Some(input.clone());
        Tensor::new(&[n, m], out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cached_input.take().ok_or(Error::BackwardBeforeForward("dense"))?;
        let (n, k) = input.dims2("dense input")?;
        let m = self.outputs();
        if grad_output.shape() != [n, m] {
            return Err(Error::Shape { context: "dense upstream gradient", expected: vec![n, m], got: grad_output.shape().to_vec() });
        }
        let dy = grad_output.data();
        gemm(T::one(), MatRef::new(dy, n, m).t(), MatRef::new(input.data(), n, k), T::one(), self.weight.grad_mut());
        let db = self.bias.grad_mut();
        for j in 0..m {
            let s: f64 = (0..n).map(|i| dy[i * m + j].as_f64()).sum();
            db[j] += T::from_f64(s);
        }
        let mut dx = vec![T::zero(); n * k];
        gemm(T::one(), MatRef::new(dy, n, m), MatRef::new(self.weight.data(), m, k), T::zero(), &mut dx);
        Tensor::new(&[n, k], dx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
