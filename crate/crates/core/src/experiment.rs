//! Desk-scale train/evaluate runs shared by the command line and the
//! acceptance suite.

use serde::{Deserialize, Serialize};

use crate::degradation::{make_test_condition, DegradationRanges, Sample, TestCondition};
use crate::detector::{evaluate, gating_report, occlusion_locality, Locality, Metrics, Model};
use crate::synth::{generate_dataset, split, SceneParams};
use crate::tensor::Result;

/// Paired train and test sets drawn from one generated pool.
pub fn desk_datasets(seed: u64, train: usize, test: usize, scene: &SceneParams) -> (Vec<Sample>, Vec<Sample>) {
    let pool = generate_dataset(train + test, seed, scene);
    split(&pool, train as f64 / (train + test).max(1) as f64, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub condition: TestCondition,
    pub metrics: Metrics,
}

/// Per-sample gating medians on one test condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatingMedians {
    pub condition: TestCondition,
    pub median_w1: f64,
    pub median_w2: f64,
    pub mean_w1: f64,
    pub mean_w2: f64,
}

/// Everything measured for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub conditions: Vec<ConditionMetrics>,
    /// Gating on blank-modality-1 inputs; absent for modes without a fusion
    /// block.
    pub blank_m1: Option<GatingMedians>,
    pub occlusion_locality: Option<Locality>,
}

impl ModelReport {
    pub fn metrics(&self, condition: TestCondition) -> Option<&Metrics> {
        self.conditions.iter().find(|c| c.condition == condition).map(|c| &c.metrics)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Medians over samples of the per-sample mean weights of the deepest
/// fusion layer.
pub fn gating_medians(model: &Model, samples: &[Sample], condition: TestCondition) -> Result<Option<GatingMedians>> {
    let report = gating_report(model, samples)?;
    let Some(layer) = report.layers.first() else { return Ok(None) };
    let w1: Vec<f64> = layer.per_sample.iter().map(|p| p.0).collect();
    let w2: Vec<f64> = layer.per_sample.iter().map(|p| p.1).collect();
    Ok(Some(GatingMedians {
        condition,
        median_w1: median(&w1),
        median_w2: median(&w2),
        mean_w1: layer.stats.mean_w1,
        mean_w2: layer.stats.mean_w2,
    }))
}

/// Evaluates `model` on every test condition built from `test` with
/// `condition_seed`.
pub fn report_model(model: &Model, test: &[Sample], condition_seed: u64, ranges: &DegradationRanges) -> Result<ModelReport> {
    report_conditions(model, test, &TestCondition::ALL, condition_seed, ranges)
}

/// Same as [`report_model`] restricted to `conditions`.
pub fn report_conditions(
    model: &Model,
    test: &[Sample],
    conditions: &[TestCondition],
    condition_seed: u64,
    ranges: &DegradationRanges,
) -> Result<ModelReport> {
    let mut out = Vec::new();
    let mut blank_m1 = None;
    let mut locality = None;
    for &condition in conditions {
        let samples = make_test_condition(test, condition, condition_seed, ranges);
        out.push(ConditionMetrics { condition, metrics: evaluate(model, &samples)? });
        if model.config.mode.has_fusion_block() {
            match condition {
                TestCondition::BlankM1 => blank_m1 = gating_medians(model, &samples, condition)?,
                TestCondition::OcclusionM1 => locality = occlusion_locality(model, &samples)?,
                _ => {}
            }
        }
    }
    Ok(ModelReport { conditions: out, blank_m1, occlusion_locality: locality })
}
