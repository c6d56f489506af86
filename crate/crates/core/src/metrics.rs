//! Classification and ranking metrics for one (concept, group) sample.
//!
//! Undefined values (e.g. precision with no predicted positives) are `None`,
//! never 0 or NaN.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::concepts::{ConceptId, ScoredRow};
use crate::rng::StreamKey;

/// A row that can be ranked: a score, a binary label, and a tie-breaking key.
pub trait Scored {
    fn score(&self) -> f64;
    fn label(&self) -> bool;
    fn key(&self) -> &str;
}

impl Scored for ScoredRow {
    fn score(&self) -> f64 {
        self.score
    }
    fn label(&self) -> bool {
        self.label
    }
    fn key(&self) -> &str {
        &self.image_id
    }
}

impl<T: Scored + ?Sized> Scored for &T {
    fn score(&self) -> f64 {
        (**self).score()
    }
    fn label(&self) -> bool {
        (**self).label()
    }
    fn key(&self) -> &str {
        (**self).key()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("no positive rows")]
    NoPositives,
    #[error("validation fraction must lie in (0, 1)")]
    InvalidFraction,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("image {image_id} has {available} scored concepts, fewer than k = {k}")]
    TooFewScores { image_id: String, available: usize, k: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn total(&self) -> u64 {
        self.positives() + self.negatives()
    }
}

/// Predicts positive iff `score >= threshold`.
pub fn confusion_at_threshold<T: Scored>(rows: &[T], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for r in rows {
        match (r.score() >= threshold, r.label()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBundle {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub prevalence: Option<f64>,
}

pub fn rates_from_confusion(c: &ConfusionCounts) -> RateBundle {
    let tpr = ratio(c.tp, c.positives());
    RateBundle {
        tpr,
        fpr: ratio(c.fp, c.negatives()),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: tpr,
        accuracy: ratio(c.tp + c.tn, c.total()),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        prevalence: ratio(c.positives(), c.total()),
    }
}

/// Precision expressed through prevalence, TPR and FPR:
/// `α·TPR / (α·TPR + (1−α)·FPR)`.
pub fn precision_from_rates(prevalence: f64, tpr: f64, fpr: f64) -> Option<f64> {
    let hits = prevalence * tpr;
    let den = hits + (1.0 - prevalence) * fpr;
    (den > 0.0).then(|| hits / den)
}

/// Accuracy expressed through prevalence, TPR and FPR: `α·TPR + (1−α)(1−FPR)`.
pub fn accuracy_from_rates(prevalence: f64, tpr: f64, fpr: f64) -> f64 {
    prevalence * tpr + (1.0 - prevalence) * (1.0 - fpr)
}

/// Descending score, ties by ascending key.
fn rank_order<T: Scored>(a: &T, b: &T) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| a.key().cmp(b.key()))
}

/// Non-interpolated average precision: the mean, over positives, of the
/// precision at that positive's rank.
pub fn average_precision<T: Scored>(rows: &[T]) -> Option<f64> {
    let mut order: Vec<&T> = rows.iter().collect();
    order.sort_by(|a, b| rank_order(*a, *b));
    let mut hits = 0u64;
    let mut sum = 0.0;
    for (rank, r) in order.iter().enumerate() {
        if r.label() {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties counting ½.
pub fn auc_roc<T: Scored>(rows: &[T]) -> Option<f64> {
    let mut order: Vec<&T> = rows.iter().collect();
    order.sort_by(|a, b| a.score().total_cmp(&b.score()));
    let (mut pos, mut neg) = (0u64, 0u64);
    // Twice the pair count, so ties stay integral.
    let mut doubled: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = order[i].score();
        let (mut tie_pos, mut tie_neg) = (0u64, 0u64);
        while i < order.len() && order[i].score() == s {
            if order[i].label() { tie_pos += 1 } else { tie_neg += 1 }
            i += 1;
        }
        doubled += u128::from(tie_pos) * (2 * u128::from(neg) + u128::from(tie_neg));
        pos += tie_pos;
        neg += tie_neg;
    }
    (pos > 0 && neg > 0).then(|| doubled as f64 / (2.0 * pos as f64 * neg as f64))
}

/// A per-concept decision threshold and the F1 it reached on validation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f1: f64,
}

/// Picks the F1-maximizing threshold on validation rows.
///
/// Candidates are the midpoints between consecutive distinct scores plus one
/// value below the minimum; labeling everything negative is never a candidate.
/// Ties go to the lowest threshold.
pub fn select_threshold<T: Scored>(rows: &[T]) -> Result<ThresholdChoice, MetricError> {
    let positives = rows.iter().filter(|r| r.label()).count() as u64;
    if positives == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<&T> = rows.iter().collect();
    order.sort_by(|a, b| b.score().total_cmp(&a.score()));

    // Walk thresholds from high to low; after consuming each tie block of scores
    // the predicted-positive set is every row scored >= that block.
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut best: Option<(u64, u64, f64)> = None; // (2tp, 2tp+fp+fn, threshold)
    let mut i = 0;
    while i < order.len() {
        let s = order[i].score();
        while i < order.len() && order[i].score() == s {
            if order[i].label() { tp += 1 } else { fp += 1 }
            i += 1;
        }
        let threshold = match order.get(i) {
            Some(next) => midpoint(next.score(), s),
            None => s - 1.0,
        };
        let num = 2 * tp;
        let den = 2 * tp + fp + (positives - tp);
        // Later candidates are lower thresholds, so ties replace the incumbent.
        let better = match best {
            None => true,
            Some((bn, bd, _)) => u128::from(num) * u128::from(bd) >= u128::from(bn) * u128::from(den),
        };
        if better {
            best = Some((num, den, threshold));
        }
    }
    let (num, den, threshold) = best.expect("non-empty rows");
    Ok(ThresholdChoice { threshold, f1: num as f64 / den as f64 })
}

/// A value strictly above `lo` and at most `hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo / 2.0 + hi / 2.0;
    if mid > lo { mid } else { hi }
}

/// Indices of a validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// False when positives were too few to stratify and the split fell back to
    /// a plain random partition.
    pub stratified: bool,
}

/// Random partition, stratified by label, with `round(fraction·n)` validation rows.
pub fn split_validation_test<T: Scored>(rows: &[T], fraction: f64, key: &StreamKey) -> Result<Split, MetricError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(MetricError::InvalidFraction);
    }
    let n = rows.len();
    let mut rng = key.rng();
    let n_val = libm::round(fraction * n as f64) as usize;
    let n_val = if n >= 2 { n_val.clamp(1, n - 1) } else { n_val.min(n) };

    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| rows[*i].label());
    let pos_val = libm::round(fraction * pos.len() as f64) as usize;

    let mut validation;
    let mut test;
    let stratified = pos_val >= 1;
    if stratified {
        let pos_val = pos_val.min(n_val);
        let neg_val = (n_val - pos_val).min(neg.len());
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        validation = pos[..pos_val].to_vec();
        validation.extend_from_slice(&neg[..neg_val]);
        test = pos[pos_val..].to_vec();
        test.extend_from_slice(&neg[neg_val..]);
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        validation = all[..n_val].to_vec();
        test = all[n_val..].to_vec();
    }
    validation.sort_unstable();
    test.sort_unstable();
    Ok(Split { validation, test, stratified })
}

/// True when any of the `k` highest-scored concepts is in `targets`.
/// Score ties rank concepts by key.
pub fn hit_at_k(
    image_id: &str,
    scores: &BTreeMap<ConceptId, f64>,
    targets: &BTreeSet<ConceptId>,
    k: usize,
) -> Result<bool, MetricError> {
    if k == 0 {
        return Err(MetricError::InvalidK);
    }
    if scores.len() < k {
        return Err(MetricError::TooFewScores { image_id: image_id.into(), available: scores.len(), k });
    }
    let mut ranked: Vec<(&ConceptId, f64)> = scores.iter().map(|(c, s)| (c, *s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked.iter().take(k).any(|(c, _)| targets.contains(*c)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitRate {
    pub rate: Option<f64>,
    pub hits: usize,
    pub evaluated: usize,
    /// Images skipped because their target set was empty.
    pub skipped_empty: usize,
}

/// Fraction of images whose top-k concepts intersect their target set.
pub fn hit_rate_at_k<'a>(
    images: impl IntoIterator<Item = (&'a str, &'a BTreeMap<ConceptId, f64>, &'a BTreeSet<ConceptId>)>,
    k: usize,
) -> Result<HitRate, MetricError> {
    let (mut hits, mut evaluated, mut skipped_empty) = (0, 0, 0);
    for (id, scores, targets) in images {
        if targets.is_empty() {
            skipped_empty += 1;
            continue;
        }
        evaluated += 1;
        if hit_at_k(id, scores, targets, k)? {
            hits += 1;
        }
    }
    Ok(HitRate {
        rate: (evaluated > 0).then(|| hits as f64 / evaluated as f64),
        hits,
        evaluated,
        skipped_empty,
    })
}
