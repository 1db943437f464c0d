//! Volume-level aggregation by cross-shaped threshold voting.
//!
//! A volume of `m` frames with `n` windows per frame yields an `m x n`
//! matrix of high-risk probabilities (rows are frames in acquisition order).
//! The volume is positive when some cell at or above the threshold lies in
//! both a vertical run (same window across consecutive frames) and a
//! horizontal run (consecutive windows of one frame) of at least
//! `run_length` cells at or above the threshold.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::classifier::{predict_maps, ClassProbabilities};
use crate::data::sliding_windows;
use crate::error::{invalid, Error, Result};
use crate::image::{colormap_u8, GrayImage, RgbImage};
use crate::lbp::{extract_texture_map, LbpConfig};
use crate::nn::Network;

#[derive(Clone, Debug, PartialEq)]
pub struct PatchPredictionMatrix {
    pub volume_id: String,
    rows: usize,
    cols: usize,
    probs: Vec<f64>,
}

impl PatchPredictionMatrix {
    pub fn new(volume_id: impl Into<String>, rows: usize, cols: usize, probs: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("prediction matrix needs at least one row and one column"));
        }
        if probs.len() != rows * cols {
            return Err(Error::Shape { context: "prediction matrix", expected: vec![rows, cols], got: vec![probs.len()] });
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(invalid(format!("probability {bad} outside [0, 1]")));
        }
        Ok(Self { volume_id: volume_id.into(), rows, cols, probs })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.probs[row * self.cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.probs
    }

    /// One `cell x cell` colored block per entry.
    pub fn heat_image(&self, cell: usize) -> RgbImage {
        let cell = cell.max(1);
        let (w, h) = (self.cols * cell, self.rows * cell);
        let mut data = Vec::with_capacity(3 * w * h);
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&colormap_u8(self.get(y / cell, x / cell)));
            }
        }
        RgbImage { width: w, height: h, data }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoteConfig {
    pub threshold: f64,
    pub run_length: usize,
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self { threshold: 0.8, run_length: 3 }
    }
}

impl VoteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid("vote threshold must lie strictly between 0 and 1"));
        }
        if self.run_length < 2 {
            return Err(invalid("vote run length must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub positive: bool,
    /// Cell where the two runs intersect.
    pub center: Option<(usize, usize)>,
    /// Union of the intersecting vertical and horizontal runs, sorted.
    pub witness: Vec<(usize, usize)>,
}

/// Maximal runs `(start, len)` of `true` in `hit`.
fn runs(hit: impl Iterator<Item = bool>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    let mut last = 0;
    for (i, h) in hit.enumerate() {
        match (h, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - s));
                start = None;
            }
            _ => {}
        }
        last = i + 1;
    }
    if let Some(s) = start {
        out.push((s, last - s));
    }
    out
}

pub fn cross_vote(matrix: &PatchPredictionMatrix, config: &VoteConfig) -> VoteOutcome {
    let (m, n) = (matrix.rows, matrix.cols);
    let hit = |r: usize, c: usize| matrix.get(r, c) >= config.threshold;
    let need = config.run_length.max(1);
    // Long run containing each cell, if any, as (start, len).
    let mut horizontal: Vec<Option<(usize, usize)>> = vec![None; m * n];
    let mut vertical: Vec<Option<(usize, usize)>> = vec![None; m * n];
    for r in 0..m {
        for (s, len) in runs((0..n).map(|c| hit(r, c))).into_iter().filter(|&(_, l)| l >= need) {
            (s..s + len).for_each(|c| horizontal[r * n + c] = Some((s, len)));
        }
    }
    for c in 0..n {
        for (s, len) in runs((0..m).map(|r| hit(r, c))).into_iter().filter(|&(_, l)| l >= need) {
            (s..s + len).for_each(|r| vertical[r * n + c] = Some((s, len)));
        }
    }
    for r in 0..m {
        for c in 0..n {
            if let (Some((hs, hl)), Some((vs, vl))) = (horizontal[r * n + c], vertical[r * n + c]) {
                let mut witness: Vec<(usize, usize)> = (hs..hs + hl).map(|cc| (r, cc)).chain((vs..vs + vl).map(|rr| (rr, c))).collect();
                witness.sort_unstable();
                witness.dedup();
                return VoteOutcome { positive: true, center: Some((r, c)), witness };
            }
        }
    }
    VoteOutcome { positive: false, center: None, witness: Vec::new() }
}

/// Anything that turns raw patches into class probabilities.
pub trait PatchScorer {
    fn score(&mut self, patches: &[GrayImage]) -> Result<Vec<ClassProbabilities>>;
}

/// Texture extraction followed by a downstream network.
#[derive(Debug)]
pub struct ModelScorer<'a> {
    pub network: &'a mut Network<f32>,
    pub lbp: LbpConfig,
}

impl PatchScorer for ModelScorer<'_> {
    fn score(&mut self, patches: &[GrayImage]) -> Result<Vec<ClassProbabilities>> {
        let maps = patches.iter().map(|p| Ok(extract_texture_map(p, &self.lbp)?.normalized_image())).collect::<Result<Vec<_>>>()?;
        predict_maps(self.network, &maps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub patch_size: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { patch_size: 64, stride: 32 }
    }
}

/// Score every sliding-window patch of every frame and vote. Patches span
/// the top `patch_size` rows of each frame.
pub fn predict_volume(
    scorer: &mut dyn PatchScorer,
    volume_id: &str,
    frames: &[GrayImage],
    window: &WindowConfig,
    vote: &VoteConfig,
) -> Result<(VoteOutcome, PatchPredictionMatrix)> {
    let first = frames.first().ok_or_else(|| invalid("volume has no frames"))?;
    if let Some(bad) = frames.iter().find(|f| f.width() != first.width() || f.height() != first.height()) {
        return Err(invalid(format!(
            "inconsistent frame sizes: {}x{} vs {}x{}",
            first.height(),
            first.width(),
            bad.height(),
            bad.width()
        )));
    }
    if first.height() < window.patch_size {
        return Err(invalid("frames are shorter than the patch size"));
    }
    let offsets = sliding_windows(first.width(), window.patch_size, window.stride)?;
    let mut probs = Vec::with_capacity(frames.len() * offsets.len());
    for frame in frames {
        let patches = offsets.iter().map(|&o| frame.crop(0, o, window.patch_size, window.patch_size)).collect::<Result<Vec<_>>>()?;
        probs.extend(scorer.score(&patches)?.iter().map(|p| p.high_risk_prob));
    }
    let matrix = PatchPredictionMatrix::new(volume_id, frames.len(), offsets.len(), probs)?;
    Ok((cross_vote(&matrix, vote), matrix))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: usize, cols: usize, hot: &[(usize, usize)]) -> PatchPredictionMatrix {
        let mut p = vec![0.1; rows * cols];
        for &(r, c) in hot {
            p[r * cols + c] = 0.9;
        }
        PatchPredictionMatrix::new("v", rows, cols, p).unwrap()
    }

    #[test]
    fn cross_fires_with_five_cell_witness() {
        let hot = [(7, 4), (8, 4), (9, 4), (8, 3), (8, 5)];
        let out = cross_vote(&matrix(10, 10, &hot), &VoteConfig::default());
        assert!(out.positive);
        assert_eq!(out.center, Some((8, 4)));
        let mut expected = hot.to_vec();
        expected.sort_unstable();
        assert_eq!(out.witness, expected);
    }

    #[test]
    fn lines_and_isolated_cells_do_not_fire() {
        let cfg = VoteConfig::default();
        assert!(!cross_vote(&matrix(4, 4, &[]), &cfg).positive);
        assert!(!cross_vote(&matrix(4, 4, &[(1, 1)]), &cfg).positive);
        assert!(!cross_vote(&matrix(4, 6, &[(2, 0), (2, 1), (2, 2), (2, 3), (2, 4), (2, 5)]), &cfg).positive);
    }

    #[test]
    fn invalid_matrices_are_rejected() {
        assert!(PatchPredictionMatrix::new("v", 0, 3, vec![]).is_err());
        assert!(PatchPredictionMatrix::new("v", 1, 2, vec![0.5, 1.5]).is_err());
        assert!(PatchPredictionMatrix::new("v", 1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn heat_image_colors() {
        let img = matrix(2, 2, &[]).heat_image(1);
        assert_eq!(img.pixel(0, 0), colormap_u8(0.1));
        let zeros = PatchPredictionMatrix::new("z", 2, 3, vec![0.0; 6]).unwrap().heat_image(2);
        assert!(zeros.data.chunks(3).all(|p| p == [0, 0, 255]));
    }
}
