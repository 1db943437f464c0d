use alloc::vec;
use alloc::vec::Vec;

use super::{join, Module, Mode};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `(N, C, H, W)` or `(N, C)` input.
///
/// Running statistics use the unbiased batch variance and an exponential
/// moving average with weight `momentum` on the new batch.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T: Scalar = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
    cache: Option<Cache<T>>,
}

#[derive(Clone, Debug)]
struct Cache<T> {
    shape: Vec<usize>,
    xhat: Vec<T>,
    inv_std: Vec<f64>,
    mode: Mode,
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h * w)),
        [n, c] => Ok((n, c, 1)),
        _ => Err(Error::Shape { context: "batchnorm input", expected: vec![0, 0, 0, 0], got: shape.to_vec() }),
    }
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (n, c, hw) = layout(input.shape())?;
        if c != self.channels() {
            return Err(Error::Shape { context: "batchnorm channels", expected: vec![self.channels()], got: vec![c] });
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("batchnorm epsilon must be > 0"));
        }
        let x = input.data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = vec![0.0; c];
        let count = n * hw;
        if mode == Mode::Train && n < 2 {
            return Err(invalid("batchnorm in training mode needs a batch of at least 2"));
        }
        for ch in 0..c {
            let (mean, var) = if mode == Mode::Train {
                let mut sum = 0.0;
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    sum += x[base..base + hw].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0;
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    sq += x[base..base + hw].iter().map(|v| {
                        let d = v.as_f64() - mean;
                        d * d
                    }).sum::<f64>();
                }
                let var = sq / count as f64;
                let unbiased = if count > 1 { sq / (count - 1) as f64 } else { var };
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = T::from_f64((1.0 - self.momentum) * rm.as_f64() + self.momentum * mean);
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = T::from_f64((1.0 - self.momentum) * rv.as_f64() + self.momentum * unbiased);
                (mean, var)
            } else {
                (self.running_mean.data()[ch].as_f64(), self.running_var.data()[ch].as_f64())
            };
            let istd = 1.0 / libm::sqrt(var + self.epsilon);
            inv_std[ch] = istd;
            let g = self.gamma.data()[ch].as_f64();
            let b = self.beta.data()[ch].as_f64();
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x[i].as_f64() - mean) * istd;
                    xhat[i] = T::from_f64(xh);
                    out[i] = T::from_f64(g * xh + b);
                }
            }
        }
        self.cache = Some(Cache { shape: input.shape().to_vec(), xhat, inv_std, mode });
        Tensor::new(input.shape(), out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::BackwardBeforeForward("batchnorm"))?;
        if grad_output.shape() != cache.shape.as_slice() {
            return Err(Error::Shape { context: "batchnorm upstream gradient", expected: cache.shape, got: grad_output.shape().to_vec() });
        }
        let (n, c, hw) = layout(&cache.shape)?;
        let dy = grad_output.data();
        let m = (n * hw) as f64;
        let mut dx = vec![T::zero(); dy.len()];
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let d = dy[i].as_f64();
                    sum_dy += d;
                    sum_dy_xhat += d * cache.xhat[i].as_f64();
                }
            }
            self.gamma.grad_mut()[ch] += T::from_f64(sum_dy_xhat);
            self.beta.grad_mut()[ch] += T::from_f64(sum_dy);
            let g = self.gamma.data()[ch].as_f64();
            let istd = cache.inv_std[ch];
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let d = dy[i].as_f64();
                    dx[i] = T::from_f64(match cache.mode {
                        Mode::Train => g * istd / m * (m * d - sum_dy - cache.xhat[i].as_f64() * sum_dy_xhat),
                        Mode::Eval => g * istd * d,
                    });
                }
            }
        }
        Tensor::new(&cache.shape, dx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
