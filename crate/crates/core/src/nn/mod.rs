//! Layers with hand-written reverse-mode gradients.
//!
//! Every layer caches what its backward pass needs during `forward`;
//! `backward` consumes an upstream gradient, accumulates parameter gradients
//! into each parameter tensor's gradient slot and returns the gradient with
//! respect to the layer input.

mod activation;
mod batchnorm;
mod block;
mod conv;
mod dense;
mod encoder;
mod network;
mod pool;

pub use activation::{softmax_rows, Relu};
pub use batchnorm::BatchNorm2d;
pub use block::ResidualBlock;
pub use conv::{conv2d_output_size, Conv2d};
pub use dense::Dense;
pub use encoder::{Encoder, EncoderSpec};
pub use network::{Head, HeadSpec, Network, NetworkSpec};
pub use pool::GlobalAvgPool;

use alloc::format;
use alloc::string::String;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Training mode uses batch statistics in batch normalization and updates
/// running statistics; evaluation mode uses the running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Accumulates a fingerprint of every ReLU activation pattern seen in the
/// last forward pass. Finite-difference checks use it to skip probes that
/// cross a kink.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KinkSignature(pub u64);

impl Default for KinkSignature {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl KinkSignature {
    pub fn absorb(&mut self, active: bool) {
        self.0 ^= u64::from(active) + 1;
        self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
    }
}

pub trait Module<T: Scalar> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>>;

    /// Learnable parameters, in a fixed order, with dotted names.
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    /// Non-learnable persistent state (batch-norm running statistics).
    fn visit_buffers(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}

    fn kink_signature(&self, _sig: &mut KinkSignature) {}

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, p| p.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

/// He-normal initialization: N(0, 2 / fan_in).
pub(crate) fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Stream) -> Tensor<T> {
    let std = libm::sqrt(2.0 / fan_in as f64);
    Tensor::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        T::from_f64(z * std)
    })
}
