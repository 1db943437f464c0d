use std::collections::BTreeSet;

use ctl_core::data::{make_folds, oversample, patient_fraction_subset, sliding_windows, split_patients, ClassLabel};
use ctl_core::synth::{generate_corpus, CorpusConfig};
use proptest::prelude::*;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("P{i:03}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn windows_cover_the_frame(width in 1usize..300, window in 1usize..80, stride in 1usize..80) {
        prop_assume!(window <= width);
        let offs = sliding_windows(width, window, stride).unwrap();
        prop_assert_eq!(offs[0], 0);
        prop_assert_eq!(*offs.last().unwrap(), width - window);
        prop_assert!(offs.windows(2).all(|w| w[0] < w[1] && w[1] - w[0] <= stride));
        if stride <= window {
            let mut covered = vec![false; width];
            for &o in &offs {
                covered[o..o + window].iter_mut().for_each(|c| *c = true);
            }
            prop_assert!(covered.iter().all(|&c| c));
        }
        let regular = (width - window) / stride + 1;
        prop_assert!(offs.len() == regular || offs.len() == regular + 1);
    }

    #[test]
    fn split_sides_partition_patients(n in 2usize..120, ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let patients = ids(n);
        let plan = split_patients(&patients, ratio, seed).unwrap();
        let train: BTreeSet<_> = plan.train_patient_ids.iter().collect();
        let test: BTreeSet<_> = plan.test_patient_ids.iter().collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.len() + test.len(), n);
        prop_assert!(!train.is_empty() && !test.is_empty());
        let ideal = ratio * n as f64;
        prop_assert!((train.len() as f64 - ideal).abs() <= 1.0 || train.len() == 1 || test.len() == 1);
        prop_assert_eq!(split_patients(&patients, ratio, seed).unwrap(), plan);
    }

    #[test]
    fn folds_are_disjoint_and_cover(n in 2usize..60, k in 2usize..11, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let folds = make_folds(&ids(n), k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = BTreeSet::new();
        for f in &folds {
            prop_assert!(n / k <= f.validation_ids.len() && f.validation_ids.len() <= n / k + 1);
            prop_assert_eq!(f.validation_ids.len() + f.train_ids.len(), n);
            for v in &f.validation_ids {
                prop_assert!(seen.insert(v.clone()));
                prop_assert!(!f.train_ids.contains(v));
            }
        }
        prop_assert_eq!(seen.len(), n);
    }

    #[test]
    fn oversampling_balances_present_classes(labels in prop::collection::vec(0usize..5, 1..80)) {
        let entries: Vec<(usize, ClassLabel)> = labels.iter().enumerate().map(|(i, &l)| (i, ClassLabel::from_index(l).unwrap())).collect();
        let out = oversample(&entries, |e| e.1).unwrap();
        prop_assert_eq!(&out[..entries.len()], &entries[..]);
        let count = |v: &[(usize, ClassLabel)], c: ClassLabel| v.iter().filter(|e| e.1 == c).count();
        let majority = ClassLabel::ALL.iter().map(|&c| count(&entries, c)).max().unwrap();
        for c in ClassLabel::ALL {
            let before = count(&entries, c);
            let after = count(&out, c);
            prop_assert_eq!(after, if before == 0 { 0 } else { majority });
        }
        prop_assert!(out.iter().all(|e| entries[e.0] == *e));
    }

    #[test]
    fn fraction_subset_is_patient_grouped(patients in prop::collection::vec(0usize..12, 1..60), fraction in 0.05f64..=1.0, seed in any::<u64>()) {
        let entries: Vec<String> = patients.iter().map(|p| format!("P{p:02}")).collect();
        let keep = patient_fraction_subset(&entries, |e| e.as_str(), fraction, seed).unwrap();
        let kept: BTreeSet<&str> = keep.iter().map(|&i| entries[i].as_str()).collect();
        for (i, e) in entries.iter().enumerate() {
            prop_assert_eq!(keep.contains(&i), kept.contains(e.as_str()));
        }
        let total: BTreeSet<&str> = entries.iter().map(|e| e.as_str()).collect();
        prop_assert!(!kept.is_empty());
        prop_assert_eq!(kept.len(), ((fraction * total.len() as f64 - 1e-9).ceil() as usize).clamp(1, total.len()));
        prop_assert_eq!(patient_fraction_subset(&entries, |e| e.as_str(), fraction, seed).unwrap(), keep);
    }
}

#[test]
fn default_window_count_and_corpus_size() {
    assert_eq!(sliding_windows(128, 64, 32).unwrap(), vec![0, 32, 64]);
    let cfg = CorpusConfig { patients_per_class: 2, frames_per_volume: 3, ..CorpusConfig::default() };
    let corpus = generate_corpus(&cfg).unwrap();
    assert_eq!(corpus.patches.len(), 5 * 2 * 3 * 3);
    corpus.manifest.validate().unwrap();
    let again = generate_corpus(&cfg).unwrap();
    assert_eq!(corpus.patches, again.patches);
    assert_eq!(corpus.manifest, again.manifest);
}
