//! End-to-end experiment steps shared by the CLI and the sweep harness.

use ctl_core::checkpoint::ModelCheckpoint;
use ctl_core::classifier::{build_downstream, finetune, predict_maps, ClassProbabilities, FinetuneConfig, FinetuneHistory, LabeledSample};
use ctl_core::contrastive::{pretrain, PretrainConfig, PretrainOutcome};
use ctl_core::data::ClassLabel;
use ctl_core::image::GrayImage;
use ctl_core::lbp::LbpConfig;
use ctl_core::metrics::{evaluate_run, EvaluationReport, Task};
use ctl_core::nn::{EncoderSpec, Network};

use crate::dataset::{extract_normalized, Dataset};
use crate::error::Result;

/// Texture maps of a dataset plus a patient-grouped train/test split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub lbp: LbpConfig,
    pub maps: Vec<GrayImage>,
    pub labels: Vec<ClassLabel>,
    pub patients: Vec<String>,
    pub sample_ids: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Prepared {
    pub fn new(dataset: &Dataset, lbp: &LbpConfig, split_ratio: f64, split_seed: u64, jobs: usize) -> Result<Self> {
        let plan = dataset.split(split_ratio, split_seed)?;
        let (train, test) = dataset.partition(&plan);
        Ok(Self {
            lbp: *lbp,
            maps: extract_normalized(&dataset.images, lbp, jobs)?,
            labels: dataset.labels(),
            patients: dataset.manifest.entries.iter().map(|e| e.patient_id.clone()).collect(),
            sample_ids: (0..dataset.images.len()).map(|i| dataset.sample_id(i)).collect(),
            train,
            test,
        })
    }

    /// Restrict to the listed entry indices (train and test sides filtered).
    pub fn subset(&self, keep: &[usize]) -> Self {
        let mut mask = vec![false; self.maps.len()];
        keep.iter().for_each(|&i| mask[i] = true);
        Self { train: self.train.iter().copied().filter(|&i| mask[i]).collect(), test: self.test.iter().copied().filter(|&i| mask[i]).collect(), ..self.clone() }
    }

    pub fn train_maps(&self) -> Vec<GrayImage> {
        self.train.iter().map(|&i| self.maps[i].clone()).collect()
    }

    pub fn train_samples(&self) -> Vec<LabeledSample> {
        self.train.iter().map(|&i| LabeledSample { map: self.maps[i].clone(), label: self.labels[i], patient_id: self.patients[i].clone() }).collect()
    }

    pub fn test_maps(&self) -> Vec<GrayImage> {
        self.test.iter().map(|&i| self.maps[i].clone()).collect()
    }

    pub fn test_labels(&self) -> Vec<ClassLabel> {
        self.test.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Contrastive pretraining on the training side only; labels are unused.
pub fn pretrain_split(prepared: &Prepared, config: &PretrainConfig, on_epoch: &mut dyn FnMut(usize, f64)) -> Result<PretrainOutcome> {
    Ok(pretrain(&prepared.train_maps(), config, &prepared.lbp, on_epoch)?)
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub network: Network<f32>,
    pub history: FinetuneHistory,
    pub predictions: Vec<ClassProbabilities>,
    pub five_class: EvaluationReport,
    pub binary: EvaluationReport,
}

impl RunResult {
    pub fn accuracy(&self) -> f64 {
        self.five_class.accuracy.value.unwrap_or(0.0)
    }

    pub fn auc(&self) -> Option<f64> {
        self.binary.auc
    }
}

/// Fine-tune from `init` (or random weights) on the training side and
/// evaluate on the test side.
pub fn finetune_and_evaluate(
    prepared: &Prepared,
    init: Option<&ModelCheckpoint>,
    encoder: &EncoderSpec,
    config: &FinetuneConfig,
    on_epoch: &mut dyn FnMut(usize, f64, f64),
) -> Result<RunResult> {
    let mut network = build_downstream(init, encoder, config.seed)?;
    let history = finetune(&mut network, &prepared.train_samples(), config, on_epoch)?;
    let predictions = predict_maps(&mut network, &prepared.test_maps())?;
    let truths = prepared.test_labels();
    let five_class = evaluate_run(&predictions, &truths, Task::FiveClass)?;
    let binary = evaluate_run(&predictions, &truths, Task::Binary)?;
    Ok(RunResult { network, history, predictions, five_class, binary })
}
