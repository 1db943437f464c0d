use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Row-major single-channel image with real-valued pixels (8-bit sources
/// hold integer values 0..=255).
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape { context: "GrayImage::new", expected: vec![height, width], got: vec![pixels.len()] });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| f32::from(b)).collect())
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    /// Clamp to 0..=255 and round to the nearest integer.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| libm::roundf(v.clamp(0.0, 255.0)) as u8).collect()
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(invalid("crop window exceeds image bounds"));
        }
        Ok(Self::from_fn(width, height, |r, c| self.get(row + r, col + c)))
    }

    /// Rotate 90 degrees counterclockwise.
    pub fn rotate90(&self) -> Self {
        let (h, w) = (self.height, self.width);
        Self::from_fn(h, w, |r, c| self.get(c, w - 1 - r))
    }

    /// Mirror left to right.
    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| self.get(r, self.width - 1 - c))
    }

    /// Mirror top to bottom.
    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |r, c| self.get(self.height - 1 - r, c))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { width: self.width, height: self.height, pixels: self.pixels.iter().map(|&v| f(v)).collect() }
    }
}

/// Stack equally sized images into an `(N, 1, H, W)` tensor.
pub fn stack<'a>(images: impl IntoIterator<Item = &'a GrayImage>) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut n = 0;
    for img in images {
        match dims {
            None => dims = Some((img.height, img.width)),
            Some(d) if d != (img.height, img.width) => {
                return Err(Error::Shape { context: "stacked images", expected: vec![d.0, d.1], got: vec![img.height, img.width] })
            }
            _ => {}
        }
        data.extend_from_slice(&img.pixels);
        n += 1;
    }
    let (h, w) = dims.ok_or_else(|| invalid("cannot stack an empty image list"))?;
    Tensor::new(&[n, 1, h, w], data)
}

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Three-stop blue (0) -> green (0.5) -> red (1) colormap as real channels
/// in `[0, 255]`. Inputs outside `[0, 1]` are clamped.
pub fn colormap(t: f64) -> [f64; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    if t <= 0.5 {
        let s = 2.0 * t;
        [0.0, 255.0 * s, 255.0 * (1.0 - s)]
    } else {
        let s = 2.0 * t - 1.0;
        [255.0 * s, 255.0 * (1.0 - s), 0.0]
    }
}

pub fn colormap_u8(t: f64) -> [u8; 3] {
    colormap(t).map(|v| libm::round(v) as u8)
}
