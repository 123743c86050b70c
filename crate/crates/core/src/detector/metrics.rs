use serde::{Deserialize, Serialize};

use super::{forward, Model};
use crate::degradation::{make_test_condition, DegradationRanges, Sample, TestCondition};
use crate::tensor::Result;

/// Cell-level detection metrics; positives are object cells and the
/// decision threshold is 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    pub cells: usize,
    pub positives: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap: f64,
}

/// Area under the precision-recall curve with all-points interpolation.
/// Equal scores form one threshold. Returns 0 when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    // (recall, precision) after each distinct threshold
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            tp += usize::from(labels[idx[i]]);
            seen += 1;
            i += 1;
        }
        points.push((tp as f64 / total_pos as f64, tp as f64 / seen as f64));
    }
    let mut ap = 0.0;
    let mut best = 0.0f64;
    for k in (0..points.len()).rev() {
        best = best.max(points[k].1);
        let prev_recall = if k == 0 { 0.0 } else { points[k - 1].0 };
        ap += (points[k].0 - prev_recall) * best;
    }
    ap
}

/// Object probability per cell for every sample, cells pooled in sample
/// order, plus the matching labels.
pub fn positive_scores(model: &Model, samples: &[Sample]) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for s in samples {
        scores.extend(forward(model, s)?.object_probabilities());
        labels.extend(s.labels.cells.iter().map(|&c| c != 0));
    }
    Ok((scores, labels))
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn metrics_from_scores(samples: usize, scores: &[f64], labels: &[bool]) -> Metrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > 0.5, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Metrics {
        samples,
        cells: scores.len(),
        positives: tp + fn_,
        accuracy: ratio(tp + tn, scores.len()),
        precision,
        recall,
        f1,
        ap: average_precision(scores, labels),
    }
}

pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<Metrics> {
    let (scores, labels) = positive_scores(model, samples)?;
    Ok(metrics_from_scores(samples.len(), &scores, &labels))
}

/// Builds the test condition from clean samples and evaluates it.
pub fn evaluate_condition(
    model: &Model,
    clean: &[Sample],
    condition: TestCondition,
    seed: u64,
    ranges: &DegradationRanges,
) -> Result<Metrics> {
    evaluate(model, &make_test_condition(clean, condition, seed, ranges))
}
