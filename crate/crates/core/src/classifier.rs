//! Downstream five-class classifier: GAP + linear head on the encoder,
//! cross-entropy fine-tuning and high-risk aggregation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::ModelCheckpoint;
use crate::data::{oversample, patient_fraction_subset, ClassLabel};
use crate::error::{invalid, Error, Result};
use crate::image::{stack, GrayImage};
use crate::lbp::{extract_texture_map, LbpConfig};
use crate::nn::{EncoderSpec, HeadSpec, Mode, Module, Network, NetworkSpec};
use crate::optim::{OptimizerHyper, OptimizerState};
use crate::rng::stream;
use crate::tensor::Tensor;

pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Softmax output over `ClassLabel::ALL` order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub p: [f64; ClassLabel::COUNT],
    pub predicted_label: ClassLabel,
    pub high_risk_prob: f64,
}

impl ClassProbabilities {
    /// Validate a probability vector (non-negative, summing to 1 within
    /// 1e-6) and derive the prediction. Ties go to the lower class index.
    pub fn new(p: [f64; ClassLabel::COUNT]) -> Result<Self> {
        if p.iter().any(|&v| !(v >= 0.0) || v > 1.0 + 1e-9) {
            return Err(invalid(format!("probabilities must lie in [0, 1]: {p:?}")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        let mut best = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = i;
            }
        }
        let high_risk_prob = (p[ClassLabel::HSIL.index()] + p[ClassLabel::CC.index()]).clamp(0.0, 1.0);
        Ok(Self { p, predicted_label: ClassLabel::ALL[best], high_risk_prob })
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() != ClassLabel::COUNT {
            return Err(Error::Shape { context: "class logits", expected: vec![ClassLabel::COUNT], got: vec![logits.len()] });
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p = [0.0; ClassLabel::COUNT];
        for (o, &l) in p.iter_mut().zip(logits) {
            *o = libm::exp(l - max);
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        Self::new(p)
    }

    pub fn low_risk_prob(&self) -> f64 {
        self.p[ClassLabel::MI.index()] + self.p[ClassLabel::EP.index()] + self.p[ClassLabel::CY.index()]
    }

    pub fn predicted_high_risk(&self) -> bool {
        self.high_risk_prob >= 0.5
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrossEntropy {
    pub loss: f64,
    /// Samples whose true-class probability was raised to the floor.
    pub clamped: usize,
}

/// Mean negative log-likelihood of the true classes.
pub fn cross_entropy_loss(probabilities: &[[f64; ClassLabel::COUNT]], labels: &[ClassLabel]) -> Result<CrossEntropy> {
    if probabilities.is_empty() || probabilities.len() != labels.len() {
        return Err(invalid("cross-entropy needs one label per probability row and at least one row"));
    }
    let mut clamped = 0;
    let mut total = 0.0;
    for (p, &y) in probabilities.iter().zip(labels) {
        let v = p[y.index()];
        if v < PROBABILITY_FLOOR {
            clamped += 1;
        }
        total -= libm::log(v.max(PROBABILITY_FLOOR));
    }
    Ok(CrossEntropy { loss: total / labels.len() as f64, clamped })
}

/// Cross-entropy of softmax(`logits`) and its gradient `(softmax - onehot) / N`
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor<f32>, labels: &[ClassLabel]) -> Result<(CrossEntropy, Tensor<f32>)> {
    let (n, k) = logits.dims2("classifier logits")?;
    if k != ClassLabel::COUNT || n != labels.len() {
        return Err(Error::Shape { context: "classifier logits", expected: vec![labels.len(), ClassLabel::COUNT], got: vec![n, k] });
    }
    let mut probs = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n * k);
    for (row, &y) in logits.data().chunks(k).zip(labels) {
        let l: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
        let cp = ClassProbabilities::from_logits(&l)?;
        for (c, &pc) in cp.p.iter().enumerate() {
            let onehot = if c == y.index() { 1.0 } else { 0.0 };
            grad.push(((pc - onehot) / n as f64) as f32);
        }
        probs.push(cp.p);
    }
    Ok((cross_entropy_loss(&probs, labels)?, Tensor::new(&[n, k], grad)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    FromCheckpoint,
    Random,
}

/// Encoder from `checkpoint` (or freshly initialized from `seed`), GAP and
/// a freshly initialized linear head. A checkpoint's projection head is
/// discarded.
pub fn build_downstream(checkpoint: Option<&ModelCheckpoint>, encoder: &EncoderSpec, seed: u64) -> Result<Network<f32>> {
    match checkpoint {
        None => Network::new(&NetworkSpec { encoder: encoder.clone(), head: HeadSpec::classifier() }, seed),
        Some(ck) => {
            let stored = ck.network_spec()?;
            if &stored.encoder != encoder {
                return Err(Error::ParameterMismatch(format!("checkpoint encoder {:?} differs from requested {:?}", stored.encoder, encoder)));
            }
            let mut net = Network::new(&NetworkSpec { encoder: stored.encoder, head: HeadSpec::classifier() }, seed)?;
            ck.load_encoder_into(&mut net)?;
            Ok(net)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    /// Normalized texture map.
    pub map: GrayImage,
    pub label: ClassLabel,
    pub patient_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub optimizer: OptimizerHyper,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_fraction: f64,
    pub freeze_encoder: bool,
    pub oversample: bool,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { optimizer: OptimizerHyper::sgd_momentum(), epochs: 30, batch_size: 32, label_fraction: 1.0, freeze_encoder: false, oversample: true, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneHistory {
    /// Indices into the sample list that survived label-fraction subsampling.
    pub selected: Vec<usize>,
    /// Size of the training list after oversampling.
    pub training_size: usize,
    pub epoch_losses: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    pub clamped: usize,
}

/// Fine-tune `network` with softmax cross-entropy and SGD-momentum.
pub fn finetune(network: &mut Network<f32>, samples: &[LabeledSample], config: &FinetuneConfig, on_epoch: &mut dyn FnMut(usize, f64, f64)) -> Result<FinetuneHistory> {
    if samples.is_empty() {
        return Err(invalid("fine-tuning needs at least one labeled sample"));
    }
    if config.batch_size < 2 {
        return Err(invalid("fine-tuning batch size must be at least 2"));
    }
    if !matches!(network.spec.head, HeadSpec::GapLinear { classes } if classes == ClassLabel::COUNT) {
        return Err(invalid("fine-tuning needs a five-class linear head"));
    }
    let selected = patient_fraction_subset(samples, |s| s.patient_id.as_str(), config.label_fraction, config.seed)?;
    let mut train: Vec<usize> = if config.oversample { oversample(&selected, |&i| samples[i].label)? } else { selected.clone() };
    if train.is_empty() {
        return Err(invalid("label fraction selected no samples"));
    }
    let mut optimizer = OptimizerState::sgd_momentum(config.optimizer);
    let encoder_mode = if config.freeze_encoder { Mode::Eval } else { Mode::Train };
    let mut history = FinetuneHistory { selected, training_size: train.len(), epoch_losses: Vec::new(), epoch_accuracy: Vec::new(), clamped: 0 };
    for epoch in 0..config.epochs {
        train.shuffle(&mut stream(config.seed, "finetune-shuffle", &[epoch as u64]));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for batch in train.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let x = stack(batch.iter().map(|&i| &samples[i].map))?;
            let labels: Vec<ClassLabel> = batch.iter().map(|&i| samples[i].label).collect();
            network.zero_grad();
            let logits = network.forward_modes(&x, encoder_mode, Mode::Train)?;
            let (ce, grad) = softmax_cross_entropy(&logits, &labels)?;
            if config.freeze_encoder {
                network.backward_head(&grad)?;
                optimizer.step_visited(&mut |f| network.visit_head_params(f))?;
            } else {
                network.backward(&grad)?;
                optimizer.step_module(network)?;
            }
            history.clamped += ce.clamped;
            loss_sum += ce.loss * batch.len() as f64;
            seen += batch.len();
            correct += predictions_from_logits(&logits)?.iter().zip(&labels).filter(|(p, &y)| p.predicted_label == y).count();
        }
        let (loss, acc) = if seen == 0 { (0.0, 0.0) } else { (loss_sum / seen as f64, correct as f64 / seen as f64) };
        on_epoch(epoch + 1, loss, acc);
        history.epoch_losses.push(loss);
        history.epoch_accuracy.push(acc);
    }
    network.zero_grad();
    Ok(history)
}

fn predictions_from_logits(logits: &Tensor<f32>) -> Result<Vec<ClassProbabilities>> {
    let (_, k) = logits.dims2("classifier logits")?;
    logits.data().chunks(k).map(|row| ClassProbabilities::from_logits(&row.iter().map(|&v| f64::from(v)).collect::<Vec<_>>())).collect()
}

/// Evaluation-mode probabilities for normalized texture maps, in chunks.
pub fn predict_maps(network: &mut Network<f32>, maps: &[GrayImage]) -> Result<Vec<ClassProbabilities>> {
    let mut out = Vec::with_capacity(maps.len());
    for chunk in maps.chunks(64) {
        let logits = network.forward(&stack(chunk)?, Mode::Eval)?;
        out.extend(predictions_from_logits(&logits)?);
    }
    Ok(out)
}

/// Full pipeline for one raw patch: texture extraction, normalization,
/// encoder, pooling, linear head, softmax.
pub fn predict_patch(network: &mut Network<f32>, patch: &GrayImage, lbp: &LbpConfig) -> Result<ClassProbabilities> {
    let map = extract_texture_map(patch, lbp)?;
    Ok(predict_maps(network, &[map.normalized_image()])?[0])
}

pub fn accuracy(predictions: &[ClassProbabilities], labels: &[ClassLabel]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(invalid("accuracy needs equally many predictions and labels"));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, &y)| p.predicted_label == y).count();
    Ok(correct as f64 / labels.len() as f64)
}
