//! Dataset bookkeeping: labels, manifests, patient-grouped splits,
//! cross-validation folds, oversampling and sliding windows.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    MI,
    EP,
    CY,
    HSIL,
    CC,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskGroup {
    LowRisk,
    HighRisk,
}

impl ClassLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [ClassLabel; 5] = [ClassLabel::MI, ClassLabel::EP, ClassLabel::CY, ClassLabel::HSIL, ClassLabel::CC];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::MI => "MI",
            ClassLabel::EP => "EP",
            ClassLabel::CY => "CY",
            ClassLabel::HSIL => "HSIL",
            ClassLabel::CC => "CC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name().eq_ignore_ascii_case(s.trim()))
    }

    pub fn risk_group(self) -> RiskGroup {
        match self {
            ClassLabel::MI | ClassLabel::EP | ClassLabel::CY => RiskGroup::LowRisk,
            ClassLabel::HSIL | ClassLabel::CC => RiskGroup::HighRisk,
        }
    }

    pub fn is_high_risk(self) -> bool {
        self.risk_group() == RiskGroup::HighRisk
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub volume_id: String,
    pub frame_index: usize,
    pub patch_index: usize,
    pub image_path: String,
    pub label: ClassLabel,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub generator_seed: u64,
    pub patch_size: usize,
}

impl DatasetManifest {
    /// Check the uniqueness and volume-consistency invariants.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut volumes: BTreeMap<&str, (&str, ClassLabel)> = BTreeMap::new();
        for e in &self.entries {
            if !seen.insert((e.volume_id.as_str(), e.frame_index, e.patch_index)) {
                return Err(invalid(format!(
                    "duplicate patch ({}, frame {}, patch {})",
                    e.volume_id, e.frame_index, e.patch_index
                )));
            }
            let v = volumes.entry(&e.volume_id).or_insert((&e.patient_id, e.label));
            if v.0 != e.patient_id || v.1 != e.label {
                return Err(invalid(format!("volume {} has inconsistent patient or label", e.volume_id)));
            }
        }
        Ok(())
    }

    /// Distinct patient identifiers in sorted order.
    pub fn patients(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.entries.iter().map(|e| &e.patient_id).collect();
        set.into_iter().cloned().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_patient_ids: Vec<String>,
    pub test_patient_ids: Vec<String>,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    pub fn is_train(&self, patient: &str) -> bool {
        self.train_patient_ids.iter().any(|p| p == patient)
    }

    pub fn is_test(&self, patient: &str) -> bool {
        self.test_patient_ids.iter().any(|p| p == patient)
    }
}

/// Deterministically shuffle the given patients and cut at `ratio`.
///
/// The train side gets `round(ratio * n)` patients, clamped so both sides
/// are non-empty.
pub fn split_patients(patients: &[String], ratio: f64, seed: u64) -> Result<SplitPlan> {
    let mut ids: Vec<String> = patients.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.len() < 2 {
        return Err(invalid(format!("need at least 2 patients to split, got {}", ids.len())));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    ids.shuffle(&mut stream(seed, "split", &[]));
    let n_train = (libm::round(ratio * ids.len() as f64) as usize).clamp(1, ids.len() - 1);
    let test = ids.split_off(n_train);
    Ok(SplitPlan { train_patient_ids: ids, test_patient_ids: test, folds: Vec::new() })
}

pub fn split_by_patient(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<SplitPlan> {
    split_patients(&manifest.patients(), ratio, seed)
}

/// `k` near-equal, pairwise disjoint patient partitions of `train_patients`.
pub fn make_folds(train_patients: &[String], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let mut ids: Vec<String> = train_patients.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if k < 2 {
        return Err(invalid("cross-validation needs k >= 2"));
    }
    if ids.len() < k {
        return Err(invalid(format!("{} patients cannot fill {k} folds", ids.len())));
    }
    ids.shuffle(&mut stream(seed, "folds", &[]));
    let base = ids.len() / k;
    let extra = ids.len() % k;
    let mut parts = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        parts.push(ids[start..start + size].to_vec());
        start += size;
    }
    Ok((0..k)
        .map(|f| Fold {
            validation_ids: parts[f].clone(),
            train_ids: parts.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, p)| p.iter().cloned()).collect(),
        })
        .collect())
}

/// Duplicate minority-class entries round-robin until every present class
/// matches the majority count. Originals come first in input order.
pub fn oversample<E: Clone>(entries: &[E], label_of: impl Fn(&E) -> ClassLabel) -> Result<Vec<E>> {
    if entries.is_empty() {
        return Err(invalid("oversampling an empty entry list"));
    }
    let mut by_class: BTreeMap<ClassLabel, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        by_class.entry(label_of(e)).or_default().push(i);
    }
    let majority = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut out: Vec<E> = entries.to_vec();
    for members in by_class.values() {
        for j in 0..majority - members.len() {
            out.push(entries[members[j % members.len()]].clone());
        }
    }
    Ok(out)
}

/// Keep a `fraction` of the patients (at least one), chosen by a seeded
/// shuffle, and return the indices of their entries in input order.
pub fn patient_fraction_subset<E>(entries: &[E], patient_of: impl Fn(&E) -> &str, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!("label fraction {fraction} must lie in (0, 1]")));
    }
    if entries.is_empty() {
        return Err(invalid("label-fraction subset of an empty entry list"));
    }
    let mut patients: Vec<&str> = entries.iter().map(&patient_of).collect::<BTreeSet<_>>().into_iter().collect();
    if fraction < 1.0 {
        patients.shuffle(&mut stream(seed, "label-fraction", &[]));
        let keep = (libm::ceil(fraction * patients.len() as f64 - 1e-9) as usize).clamp(1, patients.len());
        patients.truncate(keep);
    }
    let keep: BTreeSet<&str> = patients.into_iter().collect();
    Ok((0..entries.len()).filter(|&i| keep.contains(patient_of(&entries[i]))).collect())
}

/// Column offsets of sliding windows of width `window` over `frame_width`.
///
/// Offsets are `0, s, 2s, ...` while they fit; if the last one does not reach
/// the right edge, a final right-aligned window at `frame_width - window` is
/// appended.
pub fn sliding_windows(frame_width: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || window > frame_width {
        return Err(invalid(format!("window {window} does not fit frame width {frame_width}")));
    }
    if stride == 0 {
        return Err(invalid("window stride must be >= 1"));
    }
    let last = frame_width - window;
    let mut offsets: Vec<usize> = (0..=last).step_by(stride).collect();
    if *offsets.last().expect("offset 0 always present") != last {
        offsets.push(last);
    }
    Ok(offsets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("P{i:03}")).collect()
    }

    #[test]
    fn risk_groups() {
        assert!(ClassLabel::HSIL.is_high_risk() && ClassLabel::CC.is_high_risk());
        assert!(!ClassLabel::MI.is_high_risk() && !ClassLabel::EP.is_high_risk() && !ClassLabel::CY.is_high_risk());
        assert_eq!(ClassLabel::parse("hsil"), Some(ClassLabel::HSIL));
    }

    #[test]
    fn ten_patients_split_eight_two() {
        let plan = split_patients(&ids(10), 0.8, 3).unwrap();
        assert_eq!(plan.train_patient_ids.len(), 8);
        assert_eq!(plan.test_patient_ids.len(), 2);
        assert!(plan.test_patient_ids.iter().all(|p| !plan.is_train(p)));
        assert!(split_patients(&ids(1), 0.8, 3).is_err());
    }

    #[test]
    fn fold_sizes() {
        let folds = make_folds(&ids(20), 10, 1).unwrap();
        assert!(folds.iter().all(|f| f.validation_ids.len() == 2 && f.train_ids.len() == 18));
        let folds = make_folds(&ids(23), 10, 1).unwrap();
        assert!(folds.iter().all(|f| (2..=3).contains(&f.validation_ids.len())));
        assert_eq!(folds.iter().map(|f| f.validation_ids.len()).sum::<usize>(), 23);
        assert!(make_folds(&ids(9), 10, 1).is_err());
    }

    #[test]
    fn oversampling_balances_round_robin() {
        let mut entries: Vec<(usize, ClassLabel)> = (0..10).map(|i| (i, ClassLabel::MI)).collect();
        entries.extend((10..14).map(|i| (i, ClassLabel::CC)));
        let out = oversample(&entries, |e| e.1).unwrap();
        assert_eq!(out.iter().filter(|e| e.1 == ClassLabel::CC).count(), 10);
        for i in 10..14 {
            let n = out.iter().filter(|e| e.0 == i).count();
            assert!(n == 2 || n == 3);
        }
        let balanced: Vec<(usize, ClassLabel)> = (0..4).map(|i| (i, if i % 2 == 0 { ClassLabel::MI } else { ClassLabel::EP })).collect();
        assert_eq!(oversample(&balanced, |e| e.1).unwrap(), balanced);
        assert!(oversample::<(usize, ClassLabel)>(&[], |e| e.1).is_err());
    }

    #[test]
    fn window_offsets() {
        assert_eq!(sliding_windows(600, 600, 300).unwrap(), vec![0]);
        assert_eq!(sliding_windows(1000, 600, 200).unwrap(), vec![0, 200, 400]);
        assert_eq!(sliding_windows(128, 64, 32).unwrap(), vec![0, 32, 64]);
        assert_eq!(sliding_windows(100, 64, 32).unwrap(), vec![0, 32, 36]);
        assert!(sliding_windows(10, 11, 1).is_err());
    }

    #[test]
    fn manifest_validation_catches_duplicates() {
        let e = ManifestEntry {
            patient_id: "P0".into(),
            volume_id: "V0".into(),
            frame_index: 0,
            patch_index: 0,
            image_path: "a.pgm".into(),
            label: ClassLabel::MI,
        };
        let mut m = DatasetManifest { entries: vec![e.clone(), e.clone()], generator_seed: 0, patch_size: 64 };
        assert!(m.validate().is_err());
        m.entries[1].patch_index = 1;
        assert!(m.validate().is_ok());
        m.entries[1].label = ClassLabel::CC;
        assert!(m.validate().is_err());
    }

    #[test]
    fn fraction_subset_is_patient_grouped() {
        let entries: Vec<String> = (0..40).map(|i| format!("P{}", i % 8)).collect();
        let idx = patient_fraction_subset(&entries, |e| e.as_str(), 0.25, 5).unwrap();
        let kept: BTreeSet<&str> = idx.iter().map(|&i| entries[i].as_str()).collect();
        assert_eq!(kept.len(), 2);
        assert_eq!(idx.len(), 10);
        assert_eq!(idx, patient_fraction_subset(&entries, |e| e.as_str(), 0.25, 5).unwrap());
        assert_eq!(patient_fraction_subset(&entries, |e| e.as_str(), 1.0, 5).unwrap().len(), 40);
    }
}
