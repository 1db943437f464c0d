use alloc::vec;
use alloc::vec::Vec;

use super::{Module, Mode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Global average pooling `(N, C, H, W) -> (N, C)`.
#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Module<T> for GlobalAvgPool {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let (n, c, h, w) = input.dims4("gap input")?;
        if h == 0 || w == 0 {
            return Err(Error::Shape { context: "gap spatial size", expected: vec![1, 1], got: vec![h, w] });
        }
        let hw = h * w;
        let out: Vec<T> = input
            .data()
            .chunks(hw)
            .map(|plane| T::from_f64(plane.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64))
            .collect();
        self.input_shape = Some(input.shape().to_vec());
        Tensor::new(&[n, c], out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input_shape.take().ok_or(Error::BackwardBeforeForward("gap"))?;
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if grad_output.shape() != [n, c] {
            return Err(Error::Shape { context: "gap upstream gradient", expected: vec![n, c], got: grad_output.shape().to_vec() });
        }
        let scale = T::from_f64(1.0 / (h * w) as f64);
        let mut dx = Vec::with_capacity(n * c * h * w);
        for &g in grad_output.data() {
            dx.extend(core::iter::repeat_n(g * scale, h * w));
        }
        Tensor::new(&shape, dx)
    }

    fn visit_params(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_each_plane() {
        let mut gap = GlobalAvgPool::new();
        let x = Tensor::<f32>::new(&[1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 7.0, 7.0, 7.0, 7.0]).unwrap();
        let y = gap.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[2.5, 7.0]);
    }
}
