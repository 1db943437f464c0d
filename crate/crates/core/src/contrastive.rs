//! Contrastive pretext task on augmented texture maps.
//!
//! A batch of `B` origin maps yields `2B` views ordered so that views
//! `2k` and `2k + 1` come from the same origin. The directed pair loss is
//!
//! `zeta(i, j) = -log( exp(cos(z_i, z_j) / tau) / sum_{k != i} exp(cos(z_i, z_k) / tau) )`
//!
//! and the batch loss `psi` averages both directions of every pair.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::ModelCheckpoint;
use crate::error::{invalid, Error, Result};
use crate::image::{stack, GrayImage};
use crate::lbp::LbpConfig;
use crate::nn::{EncoderSpec, HeadSpec, Mode, Module, Network, NetworkSpec};
use crate::optim::{OptimizerHyper, OptimizerState};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub rotate90: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { horizontal_flip: true, vertical_flip: true, rotate90: true }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self { horizontal_flip: false, vertical_flip: false, rotate90: false }
    }
}

/// Random horizontal flip, vertical flip and rotation by a multiple of 90
/// degrees. The three draws are always consumed so the stream position does
/// not depend on which transforms are enabled.
pub fn augment(map: &GrayImage, config: &AugmentConfig, rng: &mut Stream) -> GrayImage {
    let h: bool = rng.random();
    let v: bool = rng.random();
    let k: u32 = rng.random_range(0..4);
    let mut out = map.clone();
    if config.horizontal_flip && h {
        out = out.flip_horizontal();
    }
    if config.vertical_flip && v {
        out = out.flip_vertical();
    }
    if config.rotate90 {
        for _ in 0..k {
            out = out.rotate90();
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair {
    pub view_a: GrayImage,
    pub view_b: GrayImage,
    pub origin_id: usize,
}

pub fn augmented_pair(map: &GrayImage, origin_id: usize, config: &AugmentConfig, rng: &mut Stream) -> AugmentedPair {
    let view_a = augment(map, config, rng);
    let view_b = augment(map, config, rng);
    AugmentedPair { view_a, view_b, origin_id }
}

/// Row-major `(n, dim)` embedding matrix in 64-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub n: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Embeddings {
    pub fn new(n: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * dim {
            return Err(Error::Shape { context: "embeddings", expected: vec![n, dim], got: vec![values.len()] });
        }
        Ok(Self { n, dim, values })
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let (n, dim) = t.dims2("embeddings")?;
        Self::new(n, dim, t.data().iter().map(|&v| f64::from(v)).collect())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

struct Cosines {
    units: Vec<f64>,
    norms: Vec<f64>,
    cos: Vec<f64>,
}

fn cosines(z: &Embeddings) -> Result<Cosines> {
    let (n, d) = (z.n, z.dim);
    let mut units = vec![0.0; n * d];
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let norm = libm::sqrt(z.row(i).iter().map(|v| v * v).sum::<f64>());
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm("contrastive embedding"));
        }
        norms[i] = norm;
        for (u, v) in units[i * d..(i + 1) * d].iter_mut().zip(z.row(i)) {
            *u = v / norm;
        }
    }
    let mut cos = vec![0.0; n * n];
    for i in 0..n {
        for k in i..n {
            let c: f64 = units[i * d..(i + 1) * d].iter().zip(&units[k * d..(k + 1) * d]).map(|(a, b)| a * b).sum();
            cos[i * n + k] = c;
            cos[k * n + i] = c;
        }
    }
    Ok(Cosines { units, norms, cos })
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(invalid("temperature must be positive"))
    }
}

/// Softmax over `k != i` of row `i` of the scaled cosine matrix, and the
/// log of its normalizer.
fn row_softmax(cos: &[f64], n: usize, i: usize, tau: f64) -> (Vec<f64>, f64) {
    let row = &cos[i * n..(i + 1) * n];
    let max = (0..n).filter(|&k| k != i).map(|k| row[k] / tau).fold(f64::NEG_INFINITY, f64::max);
    let mut weights = vec![0.0; n];
    let mut total = 0.0;
    for k in (0..n).filter(|&k| k != i) {
        let e = libm::exp(row[k] / tau - max);
        weights[k] = e;
        total += e;
    }
    weights.iter_mut().for_each(|w| *w /= total);
    (weights, max + libm::log(total))
}

/// Directed loss of anchor `i` against positive `j`, with every other
/// embedding acting as a negative.
pub fn contrastive_pair_loss(z: &Embeddings, i: usize, j: usize, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if i == j || i >= z.n || j >= z.n {
        return Err(invalid("pair loss needs two distinct embedding indices"));
    }
    let c = cosines(z)?;
    let (_, log_norm) = row_softmax(&c.cos, z.n, i, tau);
    Ok((log_norm - c.cos[i * z.n + j] / tau).max(0.0))
}

/// Partner of view `i` under the canonical pairing.
pub fn partner(i: usize) -> usize {
    i ^ 1
}

fn check_batch(z: &Embeddings) -> Result<()> {
    if z.n == 0 || !z.n.is_multiple_of(2) {
        return Err(invalid("contrastive batch needs an even, non-zero number of views"));
    }
    Ok(())
}

pub fn batch_loss(z: &Embeddings, tau: f64) -> Result<f64> {
    Ok(batch_loss_and_grad(z, tau)?.0)
}

/// Batch loss and its gradient with respect to every embedding value.
pub fn batch_loss_and_grad(z: &Embeddings, tau: f64) -> Result<(f64, Vec<f64>)> {
    check_tau(tau)?;
    check_batch(z)?;
    let (n, d) = (z.n, z.dim);
    let c = cosines(z)?;
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    // dpsi / dcos(i, k), accumulated from both orientations.
    let mut dcos = vec![0.0; n * n];
    for i in 0..n {
        let j = partner(i);
        let (weights, log_norm) = row_softmax(&c.cos, n, i, tau);
        loss += (log_norm - c.cos[i * n + j] / tau).max(0.0);
        for k in (0..n).filter(|&k| k != i) {
            let ds = scale * (weights[k] - if k == j { 1.0 } else { 0.0 });
            dcos[i * n + k] += ds / tau;
            dcos[k * n + i] += ds / tau;
        }
    }
    let mut grad = vec![0.0; n * d];
    for i in 0..n {
        let mut du = vec![0.0; d];
        for k in (0..n).filter(|&k| k != i) {
            let w = dcos[i * n + k];
            for (g, u) in du.iter_mut().zip(&c.units[k * d..(k + 1) * d]) {
                *g += w * u;
            }
        }
        let ui = &c.units[i * d..(i + 1) * d];
        let radial: f64 = du.iter().zip(ui).map(|(a, b)| a * b).sum();
        for (t, (g, u)) in grad[i * d..(i + 1) * d].iter_mut().zip(du.iter().zip(ui)) {
            *t = (g - radial * u) / c.norms[i];
        }
    }
    Ok((loss * scale, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerHyper,
    pub augment: AugmentConfig,
    pub encoder: EncoderSpec,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            batch_size: 32,
            epochs: 30,
            optimizer: OptimizerHyper::adam(),
            augment: AugmentConfig::default(),
            encoder: EncoderSpec::default(),
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.temperature)?;
        if self.batch_size < 2 {
            return Err(invalid("pretraining batch size must be at least 2"));
        }
        self.encoder.validate()
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub network: Network<f32>,
    pub checkpoint: ModelCheckpoint,
    /// Mean batch loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
}

/// Contrastive pretraining of encoder plus projection head on unlabeled
/// normalized texture maps. Incomplete final batches are dropped.
pub fn pretrain(maps: &[GrayImage], config: &PretrainConfig, lbp: &LbpConfig, on_epoch: &mut dyn FnMut(usize, f64)) -> Result<PretrainOutcome> {
    config.validate()?;
    if maps.is_empty() {
        return Err(invalid("pretraining needs at least one texture map"));
    }
    if config.batch_size > maps.len() {
        return Err(invalid(alloc::format!("batch size {} exceeds the {} available maps", config.batch_size, maps.len())));
    }
    if maps.iter().any(|m| m.width() != maps[0].width() || m.height() != maps[0].height()) {
        return Err(invalid("texture maps must share one size"));
    }
    if config.augment.rotate90 && maps[0].width() != maps[0].height() {
        return Err(invalid("rotation augmentation needs square texture maps"));
    }
    let spec = NetworkSpec { encoder: config.encoder.clone(), head: HeadSpec::projection() };
    let mut network = Network::<f32>::new(&spec, config.seed)?;
    let mut optimizer = OptimizerState::adam(config.optimizer);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..maps.len()).collect();
        order.shuffle(&mut stream(config.seed, "pretrain-shuffle", &[epoch as u64]));
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks_exact(config.batch_size) {
            let mut views = Vec::with_capacity(2 * chunk.len());
            for &idx in chunk {
                let mut rng = stream(config.seed, "augment", &[epoch as u64, idx as u64]);
                let pair = augmented_pair(&maps[idx], idx, &config.augment, &mut rng);
                views.push(pair.view_a);
                views.push(pair.view_b);
            }
            let x = stack(&views)?;
            network.zero_grad();
            let z = network.forward(&x, Mode::Train)?;
            let (loss, grad) = batch_loss_and_grad(&Embeddings::from_tensor(&z)?, config.temperature)?;
            let grad = Tensor::new(z.shape(), grad.iter().map(|&g| g as f32).collect())?;
            network.backward(&grad)?;
            optimizer.step_module(&mut network)?;
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        on_epoch(epoch + 1, mean);
        epoch_losses.push(mean);
    }
    network.zero_grad();
    let checkpoint = ModelCheckpoint::from_network(&mut network, config.seed, lbp, Some(&optimizer));
    Ok(PretrainOutcome { network, checkpoint, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_has_zero_loss() {
        let z = Embeddings::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap();
        assert_eq!(contrastive_pair_loss(&z, 0, 1, 0.5).unwrap(), 0.0);
        assert_eq!(batch_loss(&z, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_negatives_value() {
        let z = Embeddings::new(4, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let expected = -libm::log(libm::exp(2.0) / (libm::exp(2.0) + 2.0));
        assert!((contrastive_pair_loss(&z, 0, 1, 0.5).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn odd_and_zero_inputs_are_rejected() {
        let odd = Embeddings::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(batch_loss(&odd, 0.5).is_err());
        let zero = Embeddings::new(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(batch_loss(&zero, 0.5), Err(Error::ZeroNorm("contrastive embedding")));
        let ok = Embeddings::new(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(batch_loss(&ok, 0.0).is_err());
    }

    #[test]
    fn disabled_augmentation_is_identity() {
        let img = GrayImage::from_fn(6, 6, |r, c| (r * 6 + c) as f32 / 35.0);
        let mut rng = stream(1, "t", &[]);
        for _ in 0..8 {
            assert_eq!(augment(&img, &AugmentConfig::none(), &mut rng), img);
        }
    }
}
