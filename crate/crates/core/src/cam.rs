//! Class activation maps for the GAP + linear head, and overlays.
//!
//! `raw[y][x] = sum_k w[class][k] * F_k[y][x]` over the last feature maps.
//! The averaged raw map therefore equals the class logit minus its bias.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::image::{colormap, GrayImage, RgbImage};
use crate::lbp::{extract_texture_map, LbpConfig};
use crate::nn::{Head, Mode, Module, Network};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap {
    pub class_index: usize,
    pub raw_rows: usize,
    pub raw_cols: usize,
    pub raw: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// Min-max normalized, input resolution.
    pub upsampled: Vec<f64>,
}

/// Weighted sum of `(k, h, w)` feature maps.
pub fn weighted_feature_sum(features: &[f64], channels: usize, h: usize, w: usize, weights: &[f64]) -> Result<Vec<f64>> {
    if features.len() != channels * h * w || weights.len() != channels {
        return Err(Error::Shape { context: "class activation inputs", expected: vec![channels, h, w], got: vec![features.len(), weights.len()] });
    }
    let mut raw = vec![0.0; h * w];
    for (k, &wk) in weights.iter().enumerate() {
        for (r, f) in raw.iter_mut().zip(&features[k * h * w..(k + 1) * h * w]) {
            *r += wk * f;
        }
    }
    Ok(raw)
}

fn bilinear(grid: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (libm::floor(y) as usize, libm::floor(x) as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = grid[y0 * w + x0] * (1.0 - fx) + grid[y0 * w + x1] * fx;
    let bottom = grid[y1 * w + x0] * (1.0 - fx) + grid[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Map a raw CAM onto an `out_rows x out_cols` image whose central
/// `map_rows x map_cols` region (offset by `margin`) is what the network saw.
#[allow(clippy::too_many_arguments)]
pub fn upsample_cam(raw: &[f64], h: usize, w: usize, map_rows: usize, map_cols: usize, margin: usize, out_rows: usize, out_cols: usize) -> Vec<f64> {
    let sy = h as f64 / map_rows as f64;
    let sx = w as f64 / map_cols as f64;
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for r in 0..out_rows {
        for c in 0..out_cols {
            let my = r as f64 - margin as f64;
            let mx = c as f64 - margin as f64;
            out.push(bilinear(raw, h, w, (my + 0.5) * sy - 0.5, (mx + 0.5) * sx - 0.5));
        }
    }
    min_max(&out)
}

/// CAM of `class_index` for a raw patch, at patch resolution.
pub fn compute_cam(network: &mut Network<f32>, patch: &GrayImage, class_index: usize, lbp: &LbpConfig) -> Result<ActivationMap> {
    let Head::Linear { fc } = &network.head else {
        return Err(invalid("class activation maps need a GAP + linear head"));
    };
    if class_index >= fc.outputs() {
        return Err(invalid("class index out of range"));
    }
    let map = extract_texture_map(patch, lbp)?;
    let img = map.normalized_image();
    let x = Tensor::new(&[1, 1, map.rows, map.cols], img.pixels().to_vec())?;
    network.forward(&x, Mode::Eval)?;
    let features = network.features().ok_or(Error::BackwardBeforeForward("class activation map"))?;
    let (_, k, h, w) = features.dims4("feature maps")?;
    let Head::Linear { fc } = &network.head else { unreachable!() };
    let weights: Vec<f64> = fc.weight.data()[class_index * k..(class_index + 1) * k].iter().map(|&v| f64::from(v)).collect();
    let feats: Vec<f64> = features.data().iter().map(|&v| f64::from(v)).collect();
    let raw = weighted_feature_sum(&feats, k, h, w, &weights)?;
    let upsampled = upsample_cam(&raw, h, w, map.rows, map.cols, lbp.margin(), patch.height(), patch.width());
    Ok(ActivationMap { class_index, raw_rows: h, raw_cols: w, raw, rows: patch.height(), cols: patch.width(), upsampled })
}

/// `(1 - alpha) * gray + alpha * colormap(cam)` per channel.
pub fn emit_overlay(patch: &GrayImage, map: &ActivationMap, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid("overlay alpha must lie in [0, 1]"));
    }
    if map.rows != patch.height() || map.cols != patch.width() {
        return Err(Error::Shape { context: "overlay", expected: vec![patch.height(), patch.width()], got: vec![map.rows, map.cols] });
    }
    let mut data = Vec::with_capacity(3 * patch.width() * patch.height());
    for (&g, &t) in patch.pixels().iter().zip(&map.upsampled) {
        let g = f64::from(g).clamp(0.0, 255.0);
        for ch in colormap(t) {
            data.push(libm::round((1.0 - alpha) * g + alpha * ch) as u8);
        }
    }
    Ok(RgbImage { width: patch.width(), height: patch.height(), data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_inputs_normalize_to_zero() {
        let raw = weighted_feature_sum(&[1.0; 2 * 3 * 3], 2, 3, 3, &[0.5, 0.5]).unwrap();
        assert!(raw.iter().all(|&v| v == 1.0));
        assert!(upsample_cam(&raw, 3, 3, 6, 6, 1, 8, 8).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_weights_select_a_map() {
        let feats: Vec<f64> = (0..2 * 2 * 2).map(|i| i as f64).collect();
        assert_eq!(weighted_feature_sum(&feats, 2, 2, 2, &[0.0, 1.0]).unwrap(), vec![4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn overlay_extremes() {
        let patch = GrayImage::from_fn(2, 2, |r, c| (r * 100 + c * 50) as f32);
        let map = ActivationMap { class_index: 0, raw_rows: 1, raw_cols: 1, raw: vec![0.0], rows: 2, cols: 2, upsampled: vec![0.0, 0.25, 0.75, 1.0] };
        let gray = emit_overlay(&patch, &map, 0.0).unwrap();
        for (px, &g) in gray.data.chunks(3).zip(patch.pixels()) {
            assert!(px.iter().all(|&v| f32::from(v) == g));
        }
        let pure = emit_overlay(&patch, &map, 1.0).unwrap();
        for (px, &t) in pure.data.chunks(3).zip(&map.upsampled) {
            assert_eq!(px, crate::image::colormap_u8(t));
        }
        assert!(emit_overlay(&patch, &map, 1.5).is_err());
    }
}
