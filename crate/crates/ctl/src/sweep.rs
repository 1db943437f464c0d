//! Ablation protocols: the LBP (radius, points) grid and the label-fraction
//! study comparing contrastive and random initialization.

use std::path::Path;
use std::time::Instant;

use ctl_core::checkpoint::ModelCheckpoint;
use ctl_core::classifier::{FinetuneConfig, InitKind};
use ctl_core::contrastive::PretrainConfig;
use ctl_core::data::ClassLabel;
use ctl_core::lbp::LbpConfig;
use ctl_core::metrics::mean_std;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{CtlError, Result};
use crate::pipeline::{finetune_and_evaluate, pretrain_split, Prepared};
use crate::tables::write_table;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSettings {
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub seeds: Vec<u64>,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub radius: Option<f64>,
    pub points: Option<u32>,
    pub label_fraction: Option<f64>,
    pub init: Option<InitKind>,
    pub accuracies: Vec<f64>,
    pub aucs: Vec<f64>,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub auc_mean: Option<f64>,
    pub auc_std: Option<f64>,
    pub wall_seconds: f64,
    pub status: String,
}

impl SweepRow {
    fn new(radius: Option<f64>, points: Option<u32>, label_fraction: Option<f64>, init: Option<InitKind>) -> Self {
        Self { radius, points, label_fraction, init, accuracies: vec![], aucs: vec![], accuracy_mean: None, accuracy_std: None, auc_mean: None, auc_std: None, wall_seconds: 0.0, status: "ok".into() }
    }

    fn summarize(&mut self, started: Instant) {
        if let Some((m, s)) = mean_std(&self.accuracies) {
            self.accuracy_mean = Some(m);
            self.accuracy_std = s;
        }
        if let Some((m, s)) = mean_std(&self.aucs) {
            self.auc_mean = Some(m);
            self.auc_std = s;
        }
        self.wall_seconds = started.elapsed().as_secs_f64();
    }
}

/// Entry indices keeping, per class, the first `min class count` entries.
pub fn class_balanced_indices(dataset: &Dataset) -> Vec<usize> {
    let labels = dataset.labels();
    let count = |c: ClassLabel| labels.iter().filter(|&&l| l == c).count();
    let present: Vec<ClassLabel> = ClassLabel::ALL.iter().copied().filter(|&c| count(c) > 0).collect();
    let keep = present.iter().map(|&c| count(c)).min().unwrap_or(0);
    let mut taken = [0usize; ClassLabel::COUNT];
    let mut out = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if taken[l.index()] < keep {
            taken[l.index()] += 1;
            out.push(i);
        }
    }
    out
}

fn lbp_cell(dataset: &Dataset, balanced: &[usize], lbp: &LbpConfig, settings: &SweepSettings, row: &mut SweepRow) -> Result<()> {
    let prepared = Prepared::new(dataset, lbp, settings.split_ratio, settings.split_seed, settings.jobs)?.subset(balanced);
    for &seed in &settings.seeds {
        let pre = pretrain_split(&prepared, &PretrainConfig { seed, ..settings.pretrain.clone() }, &mut |_, _| {})?;
        let run = finetune_and_evaluate(&prepared, Some(&pre.checkpoint), &settings.pretrain.encoder, &FinetuneConfig { seed, ..settings.finetune.clone() }, &mut |_, _, _| {})?;
        row.accuracies.push(run.accuracy());
        if let Some(a) = run.auc() {
            row.aucs.push(a);
        }
    }
    Ok(())
}

/// One row per `(radius, points)` cell; a failing cell is reported and the
/// sweep continues.
pub fn lbp_sweep(dataset: &Dataset, radii: &[f64], points: &[u32], settings: &SweepSettings) -> Result<Vec<SweepRow>> {
    if radii.is_empty() || points.is_empty() || settings.seeds.is_empty() {
        return Err(CtlError::Invalid("sweep grid and seed list must be non-empty".into()));
    }
    let balanced = class_balanced_indices(dataset);
    let mut rows = Vec::new();
    for &r in radii {
        for &p in points {
            let started = Instant::now();
            let mut row = SweepRow::new(Some(r), Some(p), None, None);
            let outcome = LbpConfig::new(p, r).map_err(CtlError::from).and_then(|lbp| lbp_cell(dataset, &balanced, &lbp, settings, &mut row));
            if let Err(e) = outcome {
                row.status = format!("failed: {e}");
            }
            row.summarize(started);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Paired runs per label fraction: both arms share the split, the test set
/// and the per-seed labeled subset.
pub fn label_fraction_study(dataset: &Dataset, checkpoint: &ModelCheckpoint, fractions: &[f64], settings: &SweepSettings) -> Result<Vec<SweepRow>> {
    if fractions.is_empty() || settings.seeds.is_empty() {
        return Err(CtlError::Invalid("fraction and seed lists must be non-empty".into()));
    }
    let lbp = checkpoint.lbp_config()?;
    let encoder = checkpoint.network_spec()?.encoder;
    let prepared = Prepared::new(dataset, &lbp, settings.split_ratio, settings.split_seed, settings.jobs)?;
    study_on_prepared(&prepared, checkpoint, &encoder, fractions, settings)
}

pub fn study_on_prepared(
    prepared: &Prepared,
    checkpoint: &ModelCheckpoint,
    encoder: &ctl_core::nn::EncoderSpec,
    fractions: &[f64],
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &fraction in fractions {
        for init in [InitKind::FromCheckpoint, InitKind::Random] {
            let started = Instant::now();
            let mut row = SweepRow::new(None, None, Some(fraction), Some(init));
            for &seed in &settings.seeds {
                let cfg = FinetuneConfig { seed, label_fraction: fraction, ..settings.finetune.clone() };
                let ck = matches!(init, InitKind::FromCheckpoint).then_some(checkpoint);
                let run = finetune_and_evaluate(prepared, ck, encoder, &cfg, &mut |_, _, _| {})?;
                row.accuracies.push(run.accuracy());
                if let Some(a) = run.auc() {
                    row.aucs.push(a);
                }
            }
            row.summarize(started);
            rows.push(row);
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let header = ["radius", "points", "label_fraction", "init", "runs", "accuracy_mean", "accuracy_std", "auc_mean", "auc_std", "wall_seconds", "status"];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                opt(r.radius),
                r.points.map(|p| p.to_string()).unwrap_or_default(),
                opt(r.label_fraction),
                r.init.map(|i| if i == InitKind::Random { "random".to_string() } else { "ctl".to_string() }).unwrap_or_default(),
                r.accuracies.len().to_string(),
                opt(r.accuracy_mean),
                opt(r.accuracy_std),
                opt(r.auc_mean),
                opt(r.auc_std),
                format!("{:.3}", r.wall_seconds),
                r.status.clone(),
            ]
        })
        .collect();
    write_table(path, &header, &body)
}
