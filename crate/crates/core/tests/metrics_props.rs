use ctl_core::classifier::ClassProbabilities;
use ctl_core::data::ClassLabel;
use ctl_core::metrics::{
    auc, beta_quantile, binary_metrics, clopper_pearson, evaluate_run, mean_std, micro_f1, regularized_incomplete_beta, wilcoxon_signed_rank, BinaryCounts,
    ConfusionMatrix, Task,
};
use proptest::prelude::*;

fn pair_auc(s: &[f64], t: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if t[i] && !t[j] {
                den += 1.0;
                num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

fn labeled() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u8..20, any::<bool>()), 2..120)
        .prop_map(|v| (v.iter().map(|(s, _)| f64::from(*s) / 19.0).collect(), v.iter().map(|(_, t)| *t).collect()))
        .prop_filter("both classes", |(_, t): &(Vec<f64>, Vec<bool>)| t.iter().any(|&x| x) && t.iter().any(|&x| !x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auc_matches_pair_counting((s, t) in labeled()) {
        let a = auc(&s, &t).unwrap();
        prop_assert!((a - pair_auc(&s, &t)).abs() < 1e-9);
        let shifted: Vec<f64> = s.iter().map(|x| 3.0 * x * x + 1.0).collect();
        prop_assert!((auc(&shifted, &t).unwrap() - a).abs() < 1e-12);
        let flipped: Vec<bool> = t.iter().map(|x| !x).collect();
        prop_assert!((auc(&s, &flipped).unwrap() - (1.0 - a)).abs() < 1e-9);
    }

    #[test]
    fn micro_f1_equals_accuracy(k in 2usize..7, counts in prop::collection::vec(0u64..40, 49)) {
        let mut counts = counts[..k * k].to_vec();
        counts[0] += 1;
        let m = ConfusionMatrix::new(k, counts).unwrap();
        prop_assert_eq!(Some(micro_f1(&m).unwrap()), m.accuracy());
    }

    #[test]
    fn clopper_pearson_brackets_the_estimate(n in 1u64..200, x_frac in 0.0f64..=1.0) {
        let x = (x_frac * n as f64).round() as u64;
        let (lo, hi) = clopper_pearson(x, n, 0.95).unwrap();
        let p = x as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
        if x == 0 { prop_assert_eq!(lo, 0.0); }
        if x == n { prop_assert_eq!(hi, 1.0); }
        let (lo90, hi90) = clopper_pearson(x, n, 0.90).unwrap();
        prop_assert!(lo90 >= lo - 1e-12 && hi90 <= hi + 1e-12);
    }

    #[test]
    fn beta_quantile_inverts_the_cdf(a in 0.5f64..30.0, b in 0.5f64..30.0, p in 0.01f64..0.99) {
        let q = beta_quantile(p, a, b);
        prop_assert!((regularized_incomplete_beta(q, a, b) - p).abs() < 1e-8);
    }

    #[test]
    fn wilcoxon_is_sign_symmetric(d in prop::collection::vec(prop::sample::select(vec![-3.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 4.0]), 5..30)) {
        let r = wilcoxon_signed_rank(&d).unwrap();
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let s = wilcoxon_signed_rank(&neg).unwrap();
        prop_assert_eq!(r.p_value, s.p_value);
        prop_assert_eq!(r.w_plus, s.w_minus);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        let n = r.n as f64;
        prop_assert!((r.w_plus + r.w_minus - n * (n + 1.0) / 2.0).abs() < 1e-9);
        prop_assert_eq!(r.exact, r.n <= 20);
    }
}

#[test]
fn clopper_pearson_worked_value() {
    let (lo, hi) = clopper_pearson(54, 59, 0.95).unwrap();
    assert!((lo * 100.0 - 81.32).abs() < 0.05, "{lo}");
    assert!((hi * 100.0 - 97.19).abs() < 0.05, "{hi}");
}

#[test]
fn wilcoxon_exact_small_case() {
    // All positive with distinct ranks: only one of 2^6 sign patterns is as extreme on each side.
    let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert!(r.exact);
    assert_eq!(r.p_value, 2.0 / 64.0);
    assert!(wilcoxon_signed_rank(&[1.0, 0.0, 0.0, 2.0]).is_err());
}

#[test]
fn binary_metrics_from_counts() {
    let m = binary_metrics(&BinaryCounts { tp: 8, fp: 2, tn: 6, fn_: 4 });
    assert_eq!(m.sensitivity, Some(8.0 / 12.0));
    assert_eq!(m.specificity, Some(6.0 / 8.0));
    assert_eq!(m.ppv, Some(0.8));
    assert_eq!(m.npv, Some(0.6));
    let none = binary_metrics(&BinaryCounts { tp: 0, fp: 0, tn: 3, fn_: 0 });
    assert_eq!(none.sensitivity, None);
    assert_eq!(mean_std(&[1.0, 3.0]), Some((2.0, Some(2f64.sqrt()))));
    assert_eq!(mean_std(&[1.0]), Some((1.0, None)));
}

#[test]
fn report_uses_summed_high_risk_probability() {
    let preds = vec![
        ClassProbabilities::new([0.1, 0.1, 0.1, 0.3, 0.4]).unwrap(),
        ClassProbabilities::new([0.6, 0.1, 0.1, 0.1, 0.1]).unwrap(),
        ClassProbabilities::new([0.1, 0.1, 0.35, 0.05, 0.4]).unwrap(),
    ];
    let truth = [ClassLabel::CC, ClassLabel::MI, ClassLabel::CY];
    let five = evaluate_run(&preds, &truth, Task::FiveClass).unwrap();
    assert_eq!(five.accuracy.successes, 2);
    let bin = evaluate_run(&preds, &truth, Task::Binary).unwrap();
    assert_eq!(bin.binary_counts, Some(BinaryCounts { tp: 1, fp: 0, tn: 2, fn_: 0 }));
    assert_eq!(bin.auc, Some(1.0));
}
