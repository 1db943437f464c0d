use serde::{Deserialize, Serialize};

use super::{join, Dense, Encoder, EncoderSpec, GlobalAvgPool, KinkSignature, Module, Mode, Relu};
use crate::error::{invalid, Result};
use crate::rng::stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadSpec {
    /// Pretraining head: dense -> ReLU -> dense.
    ProjectionMlp { hidden: usize, output: usize },
    /// Downstream head: dense layer on the pooled features (softmax applied by the loss).
    GapLinear { classes: usize },
}

impl HeadSpec {
    pub fn projection() -> Self {
        HeadSpec::ProjectionMlp { hidden: 512, output: 128 }
    }

    pub fn classifier() -> Self {
        HeadSpec::GapLinear { classes: crate::data::ClassLabel::COUNT }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub encoder: EncoderSpec,
    pub head: HeadSpec,
}

impl NetworkSpec {
    pub fn pretraining() -> Self {
        Self { encoder: EncoderSpec::default(), head: HeadSpec::projection() }
    }

    pub fn classification() -> Self {
        Self { encoder: EncoderSpec::default(), head: HeadSpec::classifier() }
    }

    pub fn encoder_output_dim(&self) -> usize {
        self.encoder.output_dim()
    }
}

#[derive(Clone, Debug)]
pub enum Head<T: Scalar = f32> {
    Projection { fc1: Dense<T>, relu: Relu, fc2: Dense<T> },
    Linear { fc: Dense<T> },
}

impl<T: Scalar> Head<T> {
    fn new(spec: &HeadSpec, inputs: usize, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, "init-head", &[]);
        Ok(match *spec {
            HeadSpec::ProjectionMlp { hidden, output } => {
                if hidden == 0 || output == 0 {
                    return Err(invalid("projection head widths must be positive"));
                }
                Head::Projection { fc1: Dense::new(inputs, hidden, &mut rng), relu: Relu::new(), fc2: Dense::new(hidden, output, &mut rng) }
            }
            HeadSpec::GapLinear { classes } => {
                if classes == 0 {
                    return Err(invalid("classifier needs at least one class"));
                }
                Head::Linear { fc: Dense::new(inputs, classes, &mut rng) }
            }
        })
    }
}

impl<T: Scalar> Module<T> for Head<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Head::Projection { fc1, relu, fc2 } => {
                let h = fc1.forward(input, mode)?;
                let h = relu.forward(&h, mode)?;
                fc2.forward(&h, mode)
            }
            Head::Linear { fc } => fc.forward(input, mode),
        }
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Head::Projection { fc1, relu, fc2 } => {
                let g = fc2.backward(grad_output)?;
                let g = relu.backward(&g)?;
                fc1.backward(&g)
            }
            Head::Linear { fc } => fc.backward(grad_output),
        }
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        match self {
            Head::Projection { fc1, fc2, .. } => {
                fc1.visit_params(&join(prefix, "fc1"), f);
                fc2.visit_params(&join(prefix, "fc2"), f);
            }
            Head::Linear { fc } => fc.visit_params(&join(prefix, "fc"), f),
        }
    }

    fn kink_signature(&self, sig: &mut KinkSignature) {
        if let Head::Projection { relu, .. } = self {
            Module::<T>::kink_signature(relu, sig);
        }
    }
}

/// Encoder, global average pooling and a head.
#[derive(Clone, Debug)]
pub struct Network<T: Scalar = f32> {
    pub spec: NetworkSpec,
    pub encoder: Encoder<T>,
    gap: GlobalAvgPool,
    pub head: Head<T>,
    features: Option<Tensor<T>>,
}

impl<T: Scalar> Network<T> {
    /// He-normal initialization from named streams of `seed`; encoder and
    /// head draw from separate streams.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, "init-encoder", &[]);
        let encoder = Encoder::new(&spec.encoder, &mut rng)?;
        let head = Head::new(&spec.head, spec.encoder.output_dim(), seed)?;
        Ok(Self { spec: spec.clone(), encoder, gap: GlobalAvgPool::new(), head, features: None })
    }

    /// Discard the current head and attach a freshly initialized one.
    pub fn replace_head(&mut self, head: &HeadSpec, seed: u64) -> Result<()> {
        self.head = Head::new(head, self.spec.encoder.output_dim(), seed)?;
        self.spec.head = head.clone();
        Ok(())
    }

    /// Last convolutional feature maps of the most recent forward pass.
    pub fn features(&self) -> Option<&Tensor<T>> {
        self.features.as_ref()
    }

    pub fn parameter_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.numel());
        n
    }

    /// Forward pass with separate modes for the encoder and the head; a
    /// frozen encoder runs in evaluation mode.
    pub fn forward_modes(&mut self, input: &Tensor<T>, encoder_mode: Mode, head_mode: Mode) -> Result<Tensor<T>> {
        let features = self.encoder.forward(input, encoder_mode)?;
        let pooled = self.gap.forward(&features, encoder_mode)?;
        self.features = Some(features);
        self.head.forward(&pooled, head_mode)
    }

    /// Backward through the head only, leaving encoder gradients untouched.
    pub fn backward_head(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        self.head.backward(grad_output)
    }

    pub fn visit_head_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.head.visit_params("head", f);
    }

    pub fn visit_encoder_params(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoder.visit_params("encoder", f);
    }
}

impl<T: Scalar> Module<T> for Network<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let features = self.encoder.forward(input, mode)?;
        let pooled = self.gap.forward(&features, mode)?;
        self.features = Some(features);
        self.head.forward(&pooled, mode)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.head.backward(grad_output)?;
        let g = Module::<T>::backward(&mut self.gap, &g)?;
        self.encoder.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoder.visit_buffers(&join(prefix, "encoder"), f);
    }

    fn kink_signature(&self, sig: &mut KinkSignature) {
        self.encoder.kink_signature(sig);
        self.head.kink_signature(sig);
    }
}
