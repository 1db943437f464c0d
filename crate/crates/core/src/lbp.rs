//! Rotation-invariant local binary patterns.
//!
//! Neighbor `p` of a center pixel sits at offset
//! `(row, col) = (-R sin(2 pi p / P), R cos(2 pi p / P))` and is sampled with
//! bilinear interpolation. Bit `p` is set when the sampled value is greater
//! than or equal to the center value.
//!
//! Interpolation works on differences to the center value and builds the
//! weights from the offset magnitude, so that a 90 degree image rotation
//! (with `P` a multiple of 4) reproduces every contrast bit for bit.

use alloc::vec::Vec;
use alloc::{format, vec};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::GrayImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbpConfig {
    /// Number of samples on the circle.
    pub points: u32,
    /// Circle radius in pixels.
    pub radius: f64,
}

impl Default for LbpConfig {
    fn default() -> Self {
        Self { points: 32, radius: 4.0 }
    }
}

impl LbpConfig {
    pub fn new(points: u32, radius: f64) -> Result<Self> {
        let c = Self { points, radius };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(4..=64).contains(&self.points) {
            return Err(invalid(format!("LBP point count {} outside 4..=64", self.points)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(invalid(format!("LBP radius {} must be positive", self.radius)));
        }
        Ok(())
    }

    /// Border width excluded from texture maps: `ceil(R)`.
    pub fn margin(&self) -> usize {
        libm::ceil(self.radius) as usize
    }

    /// Smallest image side accepted by [`extract_texture_map`].
    pub fn min_image_side(&self) -> usize {
        2 * self.margin() + 2
    }

    fn mask(&self) -> u64 {
        word_mask(self.points)
    }
}

fn word_mask(points: u32) -> u64 {
    if points >= 64 {
        u64::MAX
    } else {
        (1u64 << points) - 1
    }
}

fn snap(v: f64) -> f64 {
    let r = libm::round(v);
    if libm::fabs(v - r) < 1e-9 {
        r
    } else {
        v
    }
}

/// Neighbor offsets `(d_row, d_col)` for `p = 0..P`.
///
/// For `P % 4 == 0` the first quadrant is evaluated with sin/cos and the other
/// three are exact quarter turns `(dr, dc) -> (-dc, dr)` of it.
pub fn neighbor_offsets(config: &LbpConfig) -> Vec<(f64, f64)> {
    let p_count = config.points as usize;
    let r = config.radius;
    let angle = |p: usize| 2.0 * core::f64::consts::PI * p as f64 / p_count as f64;
    let direct = |p: usize| (snap(-r * libm::sin(angle(p))) + 0.0, snap(r * libm::cos(angle(p))) + 0.0);
    if !p_count.is_multiple_of(4) {
        return (0..p_count).map(direct).collect();
    }
    let quarter = p_count / 4;
    let mut out: Vec<(f64, f64)> = (0..quarter).map(direct).collect();
    for p in quarter..p_count {
        let (dr, dc) = out[p - quarter];
        out.push((-dc + 0.0, dr));
    }
    out
}

/// Integer corner offsets and weights along one axis:
/// `(near, far, weight_far)`, where `far` is unused when the weight is zero.
#[inline]
fn axis(d: f64) -> (isize, isize, f64) {
    let a = libm::fabs(d);
    let fl = libm::floor(a);
    let frac = a - fl;
    let s: isize = if d < 0.0 { -1 } else { 1 };
    let fl = fl as isize;
    (s * fl, s * (fl + 1), frac)
}

/// Interpolated `g_p - g_c` at offset `(dr, dc)` from `(row, col)`.
#[inline]
fn contrast(image: &GrayImage, row: usize, col: usize, dr: f64, dc: f64, center: f64) -> f64 {
    let (rn, rf, wr) = axis(dr);
    let (cn, cf, wc) = axis(dc);
    let at = |ro: isize, co: isize| {
        f64::from(image.get((row as isize + ro) as usize, (col as isize + co) as usize)) - center
    };
    let nn = (1.0 - wr) * (1.0 - wc) * at(rn, cn);
    let nf = if wc > 0.0 { (1.0 - wr) * wc * at(rn, cf) } else { 0.0 };
    let fnr = if wr > 0.0 { wr * (1.0 - wc) * at(rf, cn) } else { 0.0 };
    let ff = if wr > 0.0 && wc > 0.0 { wr * wc * at(rf, cf) } else { 0.0 };
    // (nn + ff) + (nf + fn) is unchanged when a quarter turn swaps nf and fn.
    (nn + ff) + (nf + fnr)
}

/// Contrasts this close to zero count as ties (bit set). At diagonal sample
/// points the exact interpolated contrast of integer images is often exactly
/// zero, and summation order alone would otherwise pick the bit.
pub const TIE_TOLERANCE: f64 = 1e-9;

fn code_unchecked(image: &GrayImage, row: usize, col: usize, offsets: &[(f64, f64)]) -> u64 {
    let center = f64::from(image.get(row, col));
    let mut code = 0u64;
    for (p, &(dr, dc)) in offsets.iter().enumerate() {
        if contrast(image, row, col, dr, dc, center) >= -TIE_TOLERANCE {
            code |= 1u64 << p;
        }
    }
    code
}

/// Raw (not rotation-normalized) LBP code of the pixel at `center`.
pub fn lbp_code_at(image: &GrayImage, center: (usize, usize), config: &LbpConfig) -> Result<u64> {
    config.validate()?;
    let m = config.margin();
    let (row, col) = center;
    if row < m || col < m || row + m >= image.height() || col + m >= image.width() {
        return Err(invalid(format!(
            "center ({row}, {col}) is closer than {m} pixels to the border of a {}x{} image",
            image.height(),
            image.width()
        )));
    }
    Ok(code_unchecked(image, row, col, &neighbor_offsets(config)))
}

/// Circular right rotation of the low `points` bits.
#[inline]
pub fn rotate_right(code: u64, shift: u32, points: u32) -> u64 {
    let shift = shift % points;
    if shift == 0 {
        return code & word_mask(points);
    }
    ((code >> shift) | (code << (points - shift))) & word_mask(points)
}

/// Minimum over all circular rotations of the `points`-bit word.
pub fn rotation_invariant(code: u64, points: u32) -> u64 {
    (0..points).map(|i| rotate_right(code, i, points)).min().unwrap_or(code)
}

/// Number of 0/1 transitions around the circular bit string.
pub fn transitions(code: u64, points: u32) -> u32 {
    (code ^ rotate_right(code, 1, points)).count_ones()
}

/// Rotation-invariant codes of every interior pixel plus their min-max
/// normalized form.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureMap {
    pub rows: usize,
    pub cols: usize,
    pub codes: Vec<u64>,
    pub normalized: Vec<f32>,
    pub source_size: (usize, usize),
    pub config: LbpConfig,
}

impl TextureMap {
    pub fn code(&self, row: usize, col: usize) -> u64 {
        self.codes[row * self.cols + col]
    }

    /// The normalized map as a `[0, 1]` image.
    pub fn normalized_image(&self) -> GrayImage {
        GrayImage::new(self.cols, self.rows, self.normalized.clone()).expect("map dimensions are consistent")
    }
}

/// Per-map min-max scaling; a constant map becomes all zeros.
pub fn min_max_normalize(codes: &[u64]) -> Vec<f32> {
    let (min, max) = codes.iter().fold((u64::MAX, 0u64), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    if codes.is_empty() || min == max {
        return vec![0.0; codes.len()];
    }
    let (lo, span) = (min as f64, (max - min) as f64);
    codes.iter().map(|&c| ((c as f64 - lo) / span) as f32).collect()
}

pub fn extract_texture_map(image: &GrayImage, config: &LbpConfig) -> Result<TextureMap> {
    config.validate()?;
    let min_side = config.min_image_side();
    if image.height() < min_side || image.width() < min_side {
        return Err(invalid(format!(
            "image {}x{} is smaller than {min_side}x{min_side} required for radius {}",
            image.height(),
            image.width(),
            config.radius
        )));
    }
    let m = config.margin();
    let offsets = neighbor_offsets(config);
    let rows = image.height() - 2 * m;
    let cols = image.width() - 2 * m;
    let mut codes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let raw = code_unchecked(image, r + m, c + m, &offsets);
            codes.push(rotation_invariant(raw, config.points));
        }
    }
    debug_assert!(codes.iter().all(|&c| c <= config.mask()));
    let normalized = min_max_normalize(&codes);
    Ok(TextureMap { rows, cols, codes, normalized, source_size: (image.height(), image.width()), config: *config })
}

/// `P + 2` bin histogram: uniform codes (at most two circular transitions)
/// go to their popcount bin `0..=P`, all others to bin `P + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureHistogram {
    pub bins: Vec<f64>,
}

pub fn uniform_bin(code: u64, points: u32) -> usize {
    if transitions(code, points) <= 2 {
        code.count_ones() as usize
    } else {
        points as usize + 1
    }
}

pub fn texture_histogram(map: &TextureMap) -> Result<TextureHistogram> {
    if map.codes.is_empty() {
        return Err(invalid("texture histogram of an empty map"));
    }
    let p = map.config.points;
    let mut counts = vec![0u64; p as usize + 2];
    for &c in &map.codes {
        counts[uniform_bin(c, p)] += 1;
    }
    let total = map.codes.len() as f64;
    Ok(TextureHistogram { bins: counts.iter().map(|&n| n as f64 / total).collect() })
}

/// Cosine similarity of two histograms.
pub fn patch_similarity(a: &TextureHistogram, b: &TextureHistogram) -> Result<f64> {
    if a.bins.len() != b.bins.len() {
        return Err(Error::Shape { context: "patch_similarity", expected: vec![a.bins.len()], got: vec![b.bins.len()] });
    }
    let dot: f64 = a.bins.iter().zip(&b.bins).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.bins.iter().map(|x| x * x).sum::<f64>());
    let nb = libm::sqrt(b.bins.iter().map(|x| x * x).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("patch_similarity"));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDistribution {
    pub values: Vec<f64>,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = pos - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

/// All cross-group pairwise similarities with box-plot summary statistics.
pub fn similarity_distribution(group_a: &[TextureHistogram], group_b: &[TextureHistogram]) -> Result<SimilarityDistribution> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(invalid("similarity distribution needs two non-empty groups"));
    }
    let mut values = Vec::with_capacity(group_a.len() * group_b.len());
    for a in group_a {
        for b in group_b {
            values.push(patch_similarity(a, b)?);
        }
    }
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(SimilarityDistribution {
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        values,
    })
}

/// Convenience: histograms of image groups, then [`similarity_distribution`].
pub fn image_similarity_distribution(group_a: &[GrayImage], group_b: &[GrayImage], config: &LbpConfig) -> Result<SimilarityDistribution> {
    let hist = |imgs: &[GrayImage]| -> Result<Vec<TextureHistogram>> {
        imgs.iter().map(|i| extract_texture_map(i, config).and_then(|m| texture_histogram(&m))).collect()
    };
    similarity_distribution(&hist(group_a)?, &hist(group_b)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_sets_every_bit() {
        let img = GrayImage::filled(9, 9, 42.0);
        let cfg = LbpConfig::new(8, 1.0).unwrap();
        assert_eq!(lbp_code_at(&img, (4, 4), &cfg).unwrap(), 255);
    }

    #[test]
    fn strict_local_maximum_gives_zero() {
        let mut px = vec![10.0f32; 81];
        px[4 * 9 + 4] = 200.0;
        let img = GrayImage::new(9, 9, px).unwrap();
        let cfg = LbpConfig::new(8, 1.0).unwrap();
        assert_eq!(lbp_code_at(&img, (4, 4), &cfg).unwrap(), 0);
    }

    #[test]
    fn border_centers_are_rejected() {
        let img = GrayImage::filled(9, 9, 0.0);
        let cfg = LbpConfig::new(8, 2.0).unwrap();
        assert!(lbp_code_at(&img, (1, 4), &cfg).is_err());
        assert!(lbp_code_at(&img, (4, 7), &cfg).is_err());
        assert!(lbp_code_at(&img, (2, 6), &cfg).is_ok());
    }

    #[test]
    fn config_bounds() {
        assert!(LbpConfig::new(3, 1.0).is_err());
        assert!(LbpConfig::new(65, 1.0).is_err());
        assert!(LbpConfig::new(8, 0.0).is_err());
        assert!(LbpConfig::new(64, 1.5).is_ok());
        assert_eq!(LbpConfig::default(), LbpConfig { points: 32, radius: 4.0 });
    }

    #[test]
    fn rotation_fixed_points_and_worked_value() {
        assert_eq!(rotation_invariant(0, 8), 0);
        assert_eq!(rotation_invariant(255, 8), 255);
        assert_eq!(rotation_invariant(6, 8), 3);
        assert_eq!(rotation_invariant(u64::MAX, 64), u64::MAX);
        assert_eq!(rotation_invariant(1 << 63, 64), 1);
    }

    #[test]
    fn quarter_turn_offsets_match_trigonometry() {
        let cfg = LbpConfig::new(16, 2.0).unwrap();
        let offs = neighbor_offsets(&cfg);
        assert_eq!(offs[0], (0.0, 2.0));
        assert_eq!(offs[4], (-2.0, 0.0));
        assert_eq!(offs[8], (0.0, -2.0));
        for (p, &(dr, dc)) in offs.iter().enumerate() {
            let a = 2.0 * core::f64::consts::PI * p as f64 / 16.0;
            assert!((dr + 2.0 * libm::sin(a)).abs() < 1e-12);
            assert!((dc - 2.0 * libm::cos(a)).abs() < 1e-12);
        }
    }

    #[test]
    fn undersized_image_is_rejected() {
        let cfg = LbpConfig::default();
        assert!(extract_texture_map(&GrayImage::filled(9, 9, 0.0), &cfg).is_err());
        let ok = extract_texture_map(&GrayImage::filled(10, 10, 0.0), &cfg).unwrap();
        assert_eq!((ok.rows, ok.cols), (2, 2));
    }

    #[test]
    fn constant_image_map_and_histogram() {
        let cfg = LbpConfig::new(8, 1.0).unwrap();
        let map = extract_texture_map(&GrayImage::filled(12, 12, 3.0), &cfg).unwrap();
        assert!(map.codes.iter().all(|&c| c == 255));
        assert!(map.normalized.iter().all(|&v| v == 0.0));
        let h = texture_histogram(&map).unwrap();
        assert_eq!(h.bins.len(), 10);
        assert_eq!(h.bins[8], 1.0);
    }

    #[test]
    fn zero_codes_fill_bin_zero() {
        let cfg = LbpConfig::new(8, 1.0).unwrap();
        let map = TextureMap { rows: 1, cols: 3, codes: vec![0, 0, 0], normalized: vec![0.0; 3], source_size: (4, 5), config: cfg };
        assert_eq!(texture_histogram(&map).unwrap().bins[0], 1.0);
    }

    #[test]
    fn similarity_worked_values() {
        let a = TextureHistogram { bins: vec![0.6, 0.8, 0.0] };
        let b = TextureHistogram { bins: vec![0.8, 0.6, 0.0] };
        assert!((patch_similarity(&a, &b).unwrap() - 0.96).abs() < 1e-12);
        assert!((patch_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let c = TextureHistogram { bins: vec![0.0, 0.0, 1.0] };
        assert_eq!(patch_similarity(&a, &c).unwrap(), 0.0);
        let z = TextureHistogram { bins: vec![0.0; 3] };
        assert_eq!(patch_similarity(&a, &z), Err(Error::ZeroNorm("patch_similarity")));
        let d = similarity_distribution(&[a.clone()], &[a]).unwrap();
        assert_eq!(d.values.len(), 1);
        assert!((d.median - 1.0).abs() < 1e-12);
    }
}
