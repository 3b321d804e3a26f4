//! Fairness and utility metrics over a set of predictions: demographic
//! parity gap, equalized odds gap, accuracy, and per-group ROC curves with
//! AUC.
//!
//! Gap metrics sum |rate difference| over unordered group pairs, so two
//! groups give the familiar single absolute difference. Rates come either
//! from hard labels (score at or above the threshold counts as positive) or
//! from mean soft scores; reported numbers use hard mode, soft mode exists
//! for differentiable training-time diagnostics.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Rates are fractions of positive hard labels.
    Hard,
    /// Rates are mean soft scores.
    Soft,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hard => "hard",
            Mode::Soft => "soft",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Mode::Hard),
            "soft" => Ok(Mode::Soft),
            other => {
                Err(Error::config(format!("unknown metric mode {other:?}, expected hard or soft")))
            }
        }
    }
}

/// Aligned prediction data for one evaluation: soft scores, derived hard
/// labels, ground truth, and group membership. Construction validates the
/// invariants; hard labels are always `score >= threshold`.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    soft_scores: Vec<f64>,
    hard_labels: Vec<bool>,
    true_labels: Vec<bool>,
    group_ids: Vec<usize>,
    threshold: f64,
    n_groups: usize,
}

impl PredictionSet {
    pub fn new(
        soft_scores: Vec<f64>,
        true_labels: Vec<bool>,
        group_ids: Vec<usize>,
        threshold: f64,
    ) -> Result<Self> {
        if soft_scores.is_empty() {
            return Err(Error::Metric("prediction set is empty".to_string()));
        }
        if soft_scores.len() != true_labels.len() || soft_scores.len() != group_ids.len() {
            return Err(Error::shape(format!(
                "prediction set lengths disagree: {} scores, {} labels, {} group ids",
                soft_scores.len(),
                true_labels.len(),
                group_ids.len()
            )));
        }
        if let Some(s) = soft_scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Metric(format!("soft score {s} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Metric(format!("threshold {threshold} outside [0, 1]")));
        }
        let hard_labels = soft_scores.iter().map(|&s| s >= threshold).collect();
        let n_groups = group_ids.iter().max().unwrap() + 1;
        Ok(PredictionSet {
            soft_scores,
            hard_labels,
            true_labels,
            group_ids,
            threshold,
            n_groups,
        })
    }

    pub fn len(&self) -> usize {
        self.soft_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Number of groups, taken as one past the largest group id.
    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn soft_scores(&self) -> &[f64] {
        &self.soft_scores
    }

    pub fn hard_labels(&self) -> &[bool] {
        &self.hard_labels
    }

    pub fn true_labels(&self) -> &[bool] {
        &self.true_labels
    }

    pub fn group_ids(&self) -> &[usize] {
        &self.group_ids
    }

    fn positive_value(&self, idx: usize, mode: Mode) -> f64 {
        match mode {
            Mode::Hard => {
                if self.hard_labels[idx] {
                    1.0
                } else {
                    0.0
                }
            }
            Mode::Soft => self.soft_scores[idx],
        }
    }
}

pub(crate) fn unordered_pair_gap_sum(rates: &[f64]) -> f64 {
    let mut sum = 0.0;
    for g in 0..rates.len() {
        for h in g + 1..rates.len() {
            sum += (rates[g] - rates[h]).abs();
        }
    }
    sum
}

/// Demographic parity gap: sum over unordered group pairs of the absolute
/// difference in positive rates.
pub fn delta_dp(preds: &PredictionSet, mode: Mode) -> Result<f64> {
    let g_count = preds.n_groups();
    let mut counts = vec![0usize; g_count];
    let mut sums = vec![0.0f64; g_count];
    for idx in 0..preds.len() {
        let g = preds.group_ids[idx];
        counts[g] += 1;
        sums[g] += preds.positive_value(idx, mode);
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Metric(format!("group {g} has no samples")));
    }
    let rates: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    Ok(unordered_pair_gap_sum(&rates))
}

/// Equalized odds gap: the demographic parity pair sum computed separately
/// within the true-label slices y = 1 and y = 0, added together.
pub fn delta_eo(preds: &PredictionSet, mode: Mode) -> Result<f64> {
    let g_count = preds.n_groups();
    let mut total = 0.0;
    for y in [true, false] {
        let mut counts = vec![0usize; g_count];
        let mut sums = vec![0.0f64; g_count];
        for idx in 0..preds.len() {
            if preds.true_labels[idx] != y {
                continue;
            }
            let g = preds.group_ids[idx];
            counts[g] += 1;
            sums[g] += preds.positive_value(idx, mode);
        }
        if let Some(g) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Metric(format!(
                "group {g} has no samples with true label y={}",
                y as u8
            )));
        }
        let rates: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
        total += unordered_pair_gap_sum(&rates);
    }
    Ok(total)
}

/// Fraction of hard labels matching the true labels.
pub fn accuracy(preds: &PredictionSet) -> f64 {
    let correct =
        preds.hard_labels.iter().zip(&preds.true_labels).filter(|(h, t)| h == t).count();
    correct as f64 / preds.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone)]
pub struct GroupRoc {
    pub group_id: usize,
    /// (FPR, TPR) sweep from (0, 0) to (1, 1), one point per distinct score.
    pub points: Vec<RocPoint>,
    /// Trapezoidal area under the sweep; ties contribute half weight.
    pub auc: f64,
}

/// Per-group ROC curve and AUC over soft scores. Every group must contain
/// both a positive and a negative sample, otherwise its rates are undefined.
pub fn groupwise_roc_auc(preds: &PredictionSet) -> Result<Vec<GroupRoc>> {
    (0..preds.n_groups())
        .map(|g| {
            let scored: Vec<(f64, bool)> = (0..preds.len())
                .filter(|&idx| preds.group_ids[idx] == g)
                .map(|idx| (preds.soft_scores[idx], preds.true_labels[idx]))
                .collect();
            let positives = scored.iter().filter(|(_, y)| *y).count();
            let negatives = scored.len() - positives;
            if positives == 0 || negatives == 0 {
                return Err(Error::Metric(format!(
                    "group {g} has only one class ({positives} positive, {negatives} negative), \
                     ROC is undefined"
                )));
            }
            let (points, auc) = roc_sweep(scored, positives, negatives);
            Ok(GroupRoc { group_id: g, points, auc })
        })
        .collect()
}

fn roc_sweep(mut scored: Vec<(f64, bool)>, positives: usize, negatives: usize) -> (Vec<RocPoint>, f64) {
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (idx, &(score, label)) in scored.iter().enumerate() {
        if label {
            tp += 1;
        } else {
            fp += 1;
        }
        let next_differs = scored.get(idx + 1).map_or(true, |&(next, _)| next != score);
        if next_differs {
            points.push(RocPoint {
                fpr: fp as f64 / negatives as f64,
                tpr: tp as f64 / positives as f64,
            });
        }
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum();
    (points, auc)
}
