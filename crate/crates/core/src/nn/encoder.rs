use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{join, BatchNorm2d, Conv2d, KinkSignature, Module, Mode, Relu, ResidualBlock};
use crate::error::{invalid, Result};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Layout of the small residual encoder: a 3x3 stem convolution followed
/// by one residual block per entry of `widths`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self { in_channels: 1, stem_channels: 16, stem_stride: 2, widths: vec![16, 32, 64], strides: vec![1, 2, 2] }
    }
}

impl EncoderSpec {
    pub fn output_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(self.stem_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != self.strides.len() {
            return Err(invalid("encoder widths and strides must have equal length"));
        }
        if self.in_channels == 0 || self.stem_channels == 0 || self.widths.contains(&0) {
            return Err(invalid("encoder widths must be positive"));
        }
        if self.stem_stride == 0 || self.strides.contains(&0) {
            return Err(invalid("encoder strides must be >= 1"));
        }
        Ok(())
    }
}

/// Convolutional feature extractor producing `(N, C, h, w)` maps.
#[derive(Clone, Debug)]
pub struct Encoder<T: Scalar = f32> {
    pub spec: EncoderSpec,
    pub stem_conv: Conv2d<T>,
    pub stem_bn: BatchNorm2d<T>,
    stem_relu: Relu,
    pub blocks: Vec<ResidualBlock<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(spec: &EncoderSpec, rng: &mut Stream) -> Result<Self> {
        spec.validate()?;
        let stem_conv = Conv2d::new(spec.in_channels, spec.stem_channels, 3, spec.stem_stride, 1, rng);
        let mut blocks = Vec::with_capacity(spec.widths.len());
        let mut width = spec.stem_channels;
        for (&w, &s) in spec.widths.iter().zip(&spec.strides) {
            blocks.push(ResidualBlock::new(width, w, s, rng));
            width = w;
        }
        Ok(Self { spec: spec.clone(), stem_conv, stem_bn: BatchNorm2d::new(spec.stem_channels), stem_relu: Relu::new(), blocks })
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = self.stem_conv.forward(input, mode)?;
        let h = self.stem_bn.forward(&h, mode)?;
        let mut h = self.stem_relu.forward(&h, mode)?;
        for block in &mut self.blocks {
            h = block.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_output.clone();
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        let g = self.stem_relu.backward(&g)?;
        let g = self.stem_bn.backward(&g)?;
        self.stem_conv.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.stem_conv.visit_params(&join(prefix, "stem.conv"), f);
        self.stem_bn.visit_params(&join(prefix, "stem.bn"), f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_params(&join(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.stem_bn.visit_buffers(&join(prefix, "stem.bn"), f);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.visit_buffers(&join(prefix, &format!("block{i}")), f);
        }
    }

    fn kink_signature(&self, sig: &mut KinkSignature) {
        Module::<T>::kink_signature(&self.stem_relu, sig);
        self.blocks.iter().for_each(|b| b.kink_signature(sig));
    }
}
