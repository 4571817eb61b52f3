//! Classification, rejection-rate, ROC and latency statistics.

use std::time::Instant;

use ndarray::Array2;

use crate::error::{DeepKeyError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    /// Rows are true labels, columns predictions.
    pub confusion: Array2<usize>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1; classes with no support are left out of
/// the macro averages. A class never predicted gets precision 0.
pub fn classification_report(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ClassificationReport> {
    if y_true.len() != y_pred.len() {
        return Err(DeepKeyError::Shape(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(DeepKeyError::Data("no predictions to score".into()));
    }
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&l| l >= k) {
        return Err(DeepKeyError::Data(format!("label {bad} outside 0..{k}")));
    }
    let mut confusion = Array2::zeros((k, k));
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[[t, p]] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[[c, c]];
            let support = confusion.row(c).sum();
            let predicted = confusion.column(c).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64;
    let trace: usize = (0..k).map(|c| confusion[[c, c]]).sum();
    Ok(ClassificationReport {
        accuracy: trace as f64 / y_true.len() as f64,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        confusion,
        per_class,
    })
}

/// Rejection rates from `(is_genuine, accepted)` pairs. A rate whose
/// denominator is empty is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarFrr {
    pub far: Option<f64>,
    pub frr: Option<f64>,
    pub impostors: usize,
    pub accepted_impostors: usize,
    pub genuines: usize,
    pub rejected_genuines: usize,
}

pub fn far_frr(decisions: &[(bool, bool)]) -> FarFrr {
    let mut out = FarFrr {
        far: None,
        frr: None,
        impostors: 0,
        accepted_impostors: 0,
        genuines: 0,
        rejected_genuines: 0,
    };
    for &(genuine, accepted) in decisions {
        if genuine {
            out.genuines += 1;
            out.rejected_genuines += usize::from(!accepted);
        } else {
            out.impostors += 1;
            out.accepted_impostors += usize::from(accepted);
        }
    }
    if out.impostors > 0 {
        out.far = Some(out.accepted_impostors as f64 / out.impostors as f64);
    }
    if out.genuines > 0 {
        out.frr = Some(out.rejected_genuines as f64 / out.genuines as f64);
    }
    out
}

/// Area under the ROC curve via average ranks (equal to the trapezoid rule
/// with tied scores sharing a step). `None` unless both classes occur.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    if scores.len() != labels.len() {
        return None;
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let p = positives as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

/// `(false positive rate, true positive rate)` points, thresholds descending,
/// starting at (0, 0) and ending at (1, 1).
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let positives = labels.iter().filter(|&&l| l).count().max(1) as f64;
    let negatives = labels.iter().filter(|&&l| !l).count().max(1) as f64;
    let mut order: Vec<usize> = (0..scores.len().min(labels.len())).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (idx, &k) in order.iter().enumerate() {
        if labels[k] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(idx + 1).map_or(true, |&n| scores[n] != scores[k]);
        if last_of_tie {
            points.push((fp as f64 / negatives, tp as f64 / positives));
        }
    }
    points
}

/// Named wall-clock durations of pipeline stages, in seconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub stages: Vec<(String, f64)>,
}

impl StageTimings {
    /// Runs `f` and records how long it took under `name`.
    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push((name.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn total(&self) -> f64 {
        self.stages.iter().map(|(_, s)| s).sum()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.stages.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }
}

/// Times each named stage in order.
pub fn time_stages(stages: Vec<(&str, Box<dyn FnOnce() + '_>)>) -> StageTimings {
    let mut timings = StageTimings::default();
    for (name, f) in stages {
        timings.time(name, f);
    }
    timings
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub mean: f64,
    /// Nearest-rank 95th percentile.
    pub p95: f64,
    pub count: usize,
}

pub fn latency_stats(samples: &[f64]) -> Option<LatencyStats> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(LatencyStats {
        mean: samples.iter().sum::<f64>() / samples.len() as f64,
        p95: sorted[rank - 1],
        count: samples.len(),
    })
}
