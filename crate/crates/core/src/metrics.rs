//! Evaluation metrics and statistics: binary and multiclass counts, ROC
//! AUC, exact binomial confidence intervals and the Wilcoxon signed-rank
//! test.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassProbabilities;
use crate::data::ClassLabel;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl BinaryCounts {
    pub fn from_predictions(predicted: &[bool], truth: &[bool]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(invalid("prediction and truth lists differ in length"));
        }
        let mut c = Self::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `None` marks a metric whose denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

pub fn binary_metrics(c: &BinaryCounts) -> BinaryMetrics {
    BinaryMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        ppv: ratio(c.tp, c.tp + c.fp),
        npv: ratio(c.tn, c.tn + c.fn_),
    }
}

/// `k x k` counts, rows are truth and columns prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if classes == 0 || counts.len() != classes * classes {
            return Err(invalid("confusion matrix must be square and non-empty"));
        }
        Ok(Self { classes, counts })
    }

    pub fn from_labels(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(invalid("prediction and truth lists differ in length"));
        }
        let mut counts = vec![0u64; classes * classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(invalid(format!("class index out of range for {classes} classes")));
            }
            counts[t * classes + p] += 1;
        }
        Self::new(classes, counts)
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.trace(), self.total())
    }
}

/// Micro-averaged F1 from pooled per-class TP, FP and FN.
pub fn micro_f1(m: &ConfusionMatrix) -> Result<f64> {
    if m.total() == 0 {
        return Err(invalid("micro-F1 of an empty confusion matrix"));
    }
    let k = m.classes;
    let tp: u64 = m.trace();
    let fp: u64 = (0..k).map(|j| (0..k).filter(|&i| i != j).map(|i| m.get(i, j)).sum::<u64>()).sum();
    let fn_: u64 = (0..k).map(|i| (0..k).filter(|&j| j != i).map(|j| m.get(i, j)).sum::<u64>()).sum();
    // 2PR / (P + R) in count form; exact integers, so F1 == TP / N bit for bit
    // whenever every sample carries one label.
    Ok((2 * tp) as f64 / (2 * tp + fp + fn_) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
}

/// ROC staircase; tied scores cross the threshold together.
pub fn roc_curve(scores: &[f64], truths: &[bool]) -> Result<RocCurve> {
    if scores.len() != truths.len() {
        return Err(invalid("score and truth lists differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid("scores must not be NaN"));
    }
    let pos = truths.iter().filter(|&&t| t).count();
    let neg = truths.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(invalid("ROC analysis needs at least one positive and one negative"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truths[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the ROC curve.
pub fn auc(scores: &[f64], truths: &[bool]) -> Result<f64> {
    let curve = roc_curve(scores, truths)?;
    Ok(curve.points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum())
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = f64::from(m);
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log(1.0 - x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Inverse of `I_x(a, b)` in `x` by bisection.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if regularized_incomplete_beta(mid, a, b) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact two-sided binomial interval for `successes` out of `trials`.
pub fn clopper_pearson(successes: u64, trials: u64, confidence: f64) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials {
        return Err(invalid(format!("invalid binomial counts {successes}/{trials}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(invalid("confidence level must lie strictly between 0 and 1"));
    }
    let alpha = 1.0 - confidence;
    let (x, n) = (successes as f64, trials as f64);
    let lower = if successes == 0 { 0.0 } else { beta_quantile(alpha / 2.0, x, n - x + 1.0) };
    let upper = if successes == trials { 1.0 } else { beta_quantile(1.0 - alpha / 2.0, x + 1.0, n - x) };
    Ok((lower, upper))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(w_plus, w_minus)`.
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
}

pub const WILCOXON_EXACT_MAX: usize = 20;

/// Average ranks of `|d|`, doubled so ties stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 averaged, doubled.
        let doubled = (i + 1 + j + 1) as u64;
        for &o in &order[i..=j] {
            ranks[o] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test. Zero differences are dropped; the
/// exact null distribution is used for up to 20 non-zero differences and a
/// tie-corrected normal approximation above.
pub fn wilcoxon_signed_rank(differences: &[f64]) -> Result<WilcoxonResult> {
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(invalid("differences must be finite"));
    }
    let nz: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
    if nz.is_empty() {
        return Err(invalid("all differences are zero"));
    }
    if nz.len() < 5 {
        return Err(invalid(format!("signed-rank test needs at least 5 non-zero differences, got {}", nz.len())));
    }
    let n = nz.len();
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let w_plus2: u64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total2: u64 = ranks.iter().sum();
    let w_plus = w_plus2 as f64 / 2.0;
    let w_minus = (total2 - w_plus2) as f64 / 2.0;
    if n <= WILCOXON_EXACT_MAX {
        let dist = signed_rank_distribution(&ranks);
        let le: u64 = dist[..=w_plus2 as usize].iter().sum();
        let ge: u64 = dist[w_plus2 as usize..].iter().sum();
        let p_value = (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0);
        return Ok(WilcoxonResult { n, w_plus, w_minus, statistic: w_plus.min(w_minus), p_value, exact: true });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let dev = ((w_plus - mean).abs() - 0.5).max(0.0);
    let z = dev / libm::sqrt(var);
    let p_value = libm::erfc(z / core::f64::consts::SQRT_2).min(1.0);
    Ok(WilcoxonResult { n, w_plus, w_minus, statistic: w_plus.min(w_minus), p_value, exact: false })
}

/// Number of sign assignments giving each doubled positive-rank sum.
fn signed_rank_distribution(doubled: &[u64]) -> Vec<u64> {
    let total: u64 = doubled.iter().sum();
    let mut dist = vec![0u64; total as usize + 1];
    dist[0] = 1;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if dist[s] > 0 {
                dist[s + r] += dist[s];
            }
        }
        reach += r;
    }
    dist
}

/// Mean and sample (n - 1) standard deviation; the deviation is absent for
/// fewer than two values.
pub fn mean_std(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)));
    Some((mean, std))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    FiveClass,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub value: Option<f64>,
    pub successes: u64,
    pub trials: u64,
    pub ci95: Option<(f64, f64)>,
}

impl Proportion {
    fn new(successes: u64, trials: u64) -> Self {
        Self { value: ratio(successes, trials), successes, trials, ci95: clopper_pearson(successes, trials, 0.95).ok() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub task: Task,
    pub samples: usize,
    pub accuracy: Proportion,
    pub micro_f1: Option<f64>,
    pub sensitivity: Option<Proportion>,
    pub specificity: Option<Proportion>,
    pub ppv: Option<Proportion>,
    pub npv: Option<Proportion>,
    pub auc: Option<f64>,
    pub binary_counts: Option<BinaryCounts>,
    pub confusion: Option<ConfusionMatrix>,
}

/// Metric bundle for one run. Binary positives are high-risk predictions
/// (`high_risk_prob >= 0.5`); the AUC ranks by `high_risk_prob`.
pub fn evaluate_run(predictions: &[ClassProbabilities], truths: &[ClassLabel], task: Task) -> Result<EvaluationReport> {
    if predictions.len() != truths.len() {
        return Err(invalid(format!("{} predictions for {} truths", predictions.len(), truths.len())));
    }
    if predictions.is_empty() {
        return Err(invalid("cannot evaluate an empty run"));
    }
    let truth_high: Vec<bool> = truths.iter().map(|t| t.is_high_risk()).collect();
    let scores: Vec<f64> = predictions.iter().map(|p| p.high_risk_prob).collect();
    let auc = auc(&scores, &truth_high).ok();
    match task {
        Task::Binary => {
            let predicted: Vec<bool> = predictions.iter().map(|p| p.predicted_high_risk()).collect();
            let c = BinaryCounts::from_predictions(&predicted, &truth_high)?;
            let opt = |s: u64, t: u64| (t > 0).then(|| Proportion::new(s, t));
            Ok(EvaluationReport {
                task,
                samples: truths.len(),
                accuracy: Proportion::new(c.tp + c.tn, c.total()),
                micro_f1: None,
                sensitivity: opt(c.tp, c.tp + c.fn_),
                specificity: opt(c.tn, c.tn + c.fp),
                ppv: opt(c.tp, c.tp + c.fp),
                npv: opt(c.tn, c.tn + c.fn_),
                auc,
                binary_counts: Some(c),
                confusion: None,
            })
        }
        Task::FiveClass => {
            let t: Vec<usize> = truths.iter().map(|l| l.index()).collect();
            let p: Vec<usize> = predictions.iter().map(|p| p.predicted_label.index()).collect();
            let m = ConfusionMatrix::from_labels(ClassLabel::COUNT, &t, &p)?;
            Ok(EvaluationReport {
                task,
                samples: truths.len(),
                accuracy: Proportion::new(m.trace(), m.total()),
                micro_f1: Some(micro_f1(&m)?),
                sensitivity: None,
                specificity: None,
                ppv: None,
                npv: None,
                auc,
                binary_counts: None,
                confusion: Some(m),
            })
        }
    }
}
