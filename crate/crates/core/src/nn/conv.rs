use alloc::vec;
use alloc::vec::Vec;

use super::{he_normal, join, Module, Mode};
use crate::error::{invalid, Error, Result};
use crate::rng::Stream;
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// `floor((size + 2 * padding - kernel) / stride) + 1`, or `None` when the
/// kernel does not fit.
pub fn conv2d_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// 2-D convolution over NCHW input, computed as im2col + GEMM per sample.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar = f32> {
    /// `(out_channels, in_channels, kh, kw)`
    pub weight: Tensor<T>,
    /// `(out_channels)`
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
    cached_input: Option<Tensor<T>>,
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize, rng: &mut Stream) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            weight: he_normal(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
            bias: Tensor::zeros(&[out_channels]),
            stride,
            padding,
            cached_input: None,
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        if weight.shape().len() != 4 {
            return Err(Error::Shape { context: "conv2d weight", expected: vec![0, 0, 0, 0], got: weight.shape().to_vec() });
        }
        if bias.shape() != [weight.shape()[0]] {
            return Err(Error::Shape { context: "conv2d bias", expected: vec![weight.shape()[0]], got: bias.shape().to_vec() });
        }
        if stride == 0 {
            return Err(invalid("conv2d stride must be >= 1"));
        }
        Ok(Self { weight, bias, stride, padding, cached_input: None })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    fn geometry(&self, input: &Tensor<T>) -> Result<Geometry> {
        let (n, cin, h, w) = input.dims4("conv2d input")?;
        let ws = self.weight.shape();
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if cin != wcin {
            return Err(Error::Shape { context: "conv2d input channels", expected: vec![wcin], got: vec![cin] });
        }
        let ho = conv2d_output_size(h, kh, self.stride, self.padding);
        let wo = conv2d_output_size(w, kw, self.stride, self.padding);
        match (ho, wo) {
            (Some(ho), Some(wo)) => Ok(Geometry { n, cin, h, w, cout, kh, kw, ho, wo }),
            _ => Err(Error::Shape { context: "conv2d kernel larger than padded input", expected: vec![kh, kw], got: vec![h, w] }),
        }
    }

    fn im2col(&self, g: &Geometry, x: &[T], col: &mut [T]) {
        let p = g.ho * g.wo;
        let pad = self.padding as isize;
        for ci in 0..g.cin {
            let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let row = (ci * g.kh + ky) * g.kw + kx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..g.ho {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        if iy < 0 || iy >= g.h as isize {
                            drow.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, g: &Geometry, col: &[T], dx: &mut [T]) {
        let p = g.ho * g.wo;
        let pad = self.padding as isize;
        for ci in 0..g.cin {
            let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let row = (ci * g.kh + ky) * g.kw + kx;
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..g.ho {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if ix >= 0 && ix < g.w as isize {
                                drow[ix as usize] += src[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn forward(&mut self, input: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let g = self.geometry(input)?;
        let k = g.cin * g.kh * g.kw;
        let p = g.ho * g.wo;
        let mut out = vec![T::zero(); g.n * g.cout * p];
        let mut col = vec![T::zero(); k * p];
        let in_stride = g.cin * g.h * g.w;
        for s in 0..g.n {
            self.im2col(&g, &input.data()[s * in_stride..(s + 1) * in_stride], &mut col);
            let dst = &mut out[s * g.cout * p..(s + 1) * g.cout * p];
            gemm(T::one(), MatRef::new(self.weight.data(), g.cout, k), MatRef::new(&col, k, p), T::zero(), dst);
            for (co, chunk) in dst.chunks_mut(p).enumerate() {
                let b = self.bias.data()[co];
                chunk.iter_mut().for_each(|v| *v += b);
            }
        }
        self.cached_input = Some(input.clone());
        Tensor::new(&[g.n, g.cout, g.ho, g.wo], out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.cached_input.take().ok_or(Error::BackwardBeforeForward("conv2d"))?;
        let g = self.geometry(&input)?;
        let expected = [g.n, g.cout, g.ho, g.wo];
        if grad_output.shape() != expected {
            return Err(Error::Shape { context: "conv2d upstream gradient", expected: expected.to_vec(), got: grad_output.shape().to_vec() });
        }
        let k = g.cin * g.kh * g.kw;
        let p = g.ho * g.wo;
        let in_stride = g.cin * g.h * g.w;
        let mut dx: Vec<T> = vec![T::zero(); input.numel()];
        let mut col = vec![T::zero(); k * p];
        let mut dcol = vec![T::zero(); k * p];
        for s in 0..g.n {
            let dy = &grad_output.data()[s * g.cout * p..(s + 1) * g.cout * p];
            self.im2col(&g, &input.data()[s * in_stride..(s + 1) * in_stride], &mut col);
            gemm(T::one(), MatRef::new(dy, g.cout, p), MatRef::new(&col, k, p).t(), T::one(), self.weight.grad_mut());
            let db = self.bias.grad_mut();
            for (co, chunk) in dy.chunks(p).enumerate() {
                let sum: f64 = chunk.iter().map(|v| v.as_f64()).sum();
                db[co] += T::from_f64(sum);
            }
            gemm(T::one(), MatRef::new(self.weight.data(), g.cout, k).t(), MatRef::new(dy, g.cout, p), T::zero(), &mut dcol);
            self.col2im(&g, &dcol, &mut dx[s * in_stride..(s + 1) * in_stride]);
        }
        Tensor::new(input.shape(), dx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn output_size_formula() {
        assert_eq!(conv2d_output_size(8, 3, 1, 1), Some(8));
        assert_eq!(conv2d_output_size(8, 3, 2, 1), Some(4));
        assert_eq!(conv2d_output_size(7, 3, 2, 1), Some(4));
        assert_eq!(conv2d_output_size(2, 3, 1, 0), None);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let w = Tensor::<f32>::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let mut conv = Conv2d::from_parts(w, Tensor::zeros(&[1]), 1, 0).unwrap();
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f32 * 0.5 - 3.0);
        let y = conv.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn constant_field_with_all_ones_kernel() {
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let mut conv = Conv2d::from_parts(w, Tensor::zeros(&[1]), 1, 0).unwrap();
        let x = Tensor::full(&[1, 1, 5, 5], 7.0);
        let y = conv.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 63.0));
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut rng = stream(1, "t", &[]);
        let mut conv = Conv2d::<f32>::new(3, 4, 3, 1, 1, &mut rng);
        let x = Tensor::zeros(&[1, 2, 5, 5]);
        assert!(matches!(conv.forward(&x, Mode::Eval), Err(Error::Shape { .. })));
        assert!(matches!(conv.backward(&Tensor::zeros(&[1, 4, 5, 5])), Err(Error::BackwardBeforeForward(_))));
    }
}
