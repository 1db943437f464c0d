use super::{join, BatchNorm2d, Conv2d, KinkSignature, Module, Mode, Relu};
use crate::error::Result;
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Basic residual block: `relu(bn(conv(relu(bn(conv(x))))) + shortcut(x))`.
/// The shortcut is a 1x1 strided convolution plus batch norm when the block
/// changes width or resolution, the identity otherwise.
#[derive(Clone, Debug)]
pub struct ResidualBlock<T: Scalar = f32> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    relu1: Relu,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub shortcut: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    relu_out: Relu,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize, rng: &mut Stream) -> Self {
        let conv1 = Conv2d::new(in_channels, out_channels, 3, stride, 1, rng);
        let conv2 = Conv2d::new(out_channels, out_channels, 3, 1, 1, rng);
        let shortcut = (in_channels != out_channels || stride != 1)
            .then(|| (Conv2d::new(in_channels, out_channels, 1, stride, 0, rng), BatchNorm2d::new(out_channels)));
        Self {
            conv1,
            bn1: BatchNorm2d::new(out_channels),
            relu1: Relu::new(),
            conv2,
            bn2: BatchNorm2d::new(out_channels),
            shortcut,
            relu_out: Relu::new(),
        }
    }
}

impl<T: Scalar> Module<T> for ResidualBlock<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = self.conv1.forward(input, mode)?;
        let h = self.bn1.forward(&h, mode)?;
        let h = self.relu1.forward(&h, mode)?;
        let h = self.conv2.forward(&h, mode)?;
        let mut h = self.bn2.forward(&h, mode)?;
        let skip = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(input, mode)?;
                bn.forward(&s, mode)?
            }
            None => input.clone(),
        };
        h.same_shape(&skip, "residual sum")?;
        h.data_mut().iter_mut().zip(skip.data()).for_each(|(a, &b)| *a += b);
        self.relu_out.forward(&h, mode)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.relu_out.backward(grad_output)?;
        let main = self.bn2.backward(&g)?;
        let main = self.conv2.backward(&main)?;
        let main = self.relu1.backward(&main)?;
        let main = self.bn1.backward(&main)?;
        let mut dx = self.conv1.backward(&main)?;
        let skip = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = bn.backward(&g)?;
                conv.backward(&s)?
            }
            None => g,
        };
        dx.data_mut().iter_mut().zip(skip.data()).for_each(|(a, &b)| *a += b);
        Ok(dx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &mut self.shortcut {
            conv.visit_params(&join(prefix, "shortcut.conv"), f);
            bn.visit_params(&join(prefix, "shortcut.bn"), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.bn1.visit_buffers(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers(&join(prefix, "bn2"), f);
        if let Some((_, bn)) = &mut self.shortcut {
            bn.visit_buffers(&join(prefix, "shortcut.bn"), f);
        }
    }

    fn kink_signature(&self, sig: &mut KinkSignature) {
        Module::<T>::kink_signature(&self.relu1, sig);
        Module::<T>::kink_signature(&self.relu_out, sig);
    }
}
