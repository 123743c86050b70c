use std::time::Instant;

use gif_fusion::degradation::{make_test_condition, TestCondition};
use gif_fusion::detector::{gating_report, FusionMode, GatingReport, Metrics, Trainer};
use gif_fusion::experiment::{report_conditions, GatingMedians};
use gif_fusion::detector::Locality;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::datasets;
use crate::config::{checkpoint_name, ExperimentConfig};
use crate::error::{to_json, write_file, CliError, CliResult};
use crate::EvalArgs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub condition: TestCondition,
    pub mode: FusionMode,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingEntry {
    pub mode: FusionMode,
    pub condition: TestCondition,
    pub report: GatingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: FusionMode,
    pub blank_m1: Option<GatingMedians>,
    pub occlusion_locality: Option<Locality>,
}

/// Evaluation of every requested mode on every requested condition for one
/// seed. Wall time lives in a separate sidecar so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub config_hash: String,
    pub test_samples: usize,
    pub modes: Vec<FusionMode>,
    pub conditions: Vec<TestCondition>,
    pub rows: Vec<Row>,
    pub summaries: Vec<ModeSummary>,
    pub gating: Vec<GatingEntry>,
}

pub const CSV_HEADER: &str = "seed,condition,mode,samples,cells,positives,accuracy,precision,recall,f1,ap";

impl SeedReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                self.seed, r.condition, r.mode, m.samples, m.cells, m.positives, m.accuracy, m.precision, m.recall, m.f1, m.ap
            ));
        }
        out
    }
}

pub fn evaluate_seed(cfg: &ExperimentConfig, seed: u64) -> CliResult<SeedReport> {
    let (_, test) = datasets(cfg, seed)?;
    let ck_dir = cfg.checkpoint_dir();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut gating = Vec::new();
    for &mode in &cfg.modes {
        let path = ck_dir.join(checkpoint_name(mode, seed));
        let trainer = Trainer::load(&path).map_err(|e| CliError::from(e).context(path.display().to_string()))?;
        if trainer.model.config != cfg.model_for(mode) {
            return Err(CliError::config(format!("{} holds a {} model with a different configuration", path.display(), trainer.model.config.mode)));
        }
        let model = &trainer.model;
        let report = report_conditions(model, &test, &cfg.conditions, seed, &cfg.train.ranges)?;
        rows.extend(report.conditions.into_iter().map(|c| Row { condition: c.condition, mode, metrics: c.metrics }));
        if mode.has_fusion_block() {
            for &condition in &cfg.conditions {
                let samples = make_test_condition(&test, condition, seed, &cfg.train.ranges);
                gating.push(GatingEntry { mode, condition, report: gating_report(model, &samples)? });
            }
        }
        summaries.push(ModeSummary { mode, blank_m1: report.blank_m1, occlusion_locality: report.occlusion_locality });
    }
    // condition-major rows, matching the table layout
    rows.sort_by_key(|r| {
        (cfg.conditions.iter().position(|&c| c == r.condition), cfg.modes.iter().position(|&m| m == r.mode))
    });
    Ok(SeedReport {
        seed,
        config_hash: cfg.hash(),
        test_samples: test.len(),
        modes: cfg.modes.clone(),
        conditions: cfg.conditions.clone(),
        rows,
        summaries,
        gating,
    })
}

pub fn run(args: &EvalArgs) -> CliResult<()> {
    let cfg = args.experiment.resolve()?;
    let dir = cfg.output_dir.join("eval");
    for &seed in &cfg.seeds {
        let start = Instant::now();
        let report = evaluate_seed(&cfg, seed)?;
        let stem = format!("seed{seed}");
        write_file(&dir.join(format!("{stem}.json")), to_json(&report))?;
        write_file(&dir.join(format!("{stem}.csv")), report.to_csv())?;
        let timing = json!({ "seed": seed, "seconds": start.elapsed().as_secs_f64() });
        write_file(&dir.join(format!("{stem}.timing.json")), to_json(&timing))?;
        for r in report.rows.iter().filter(|r| r.condition == TestCondition::Total || r.condition == TestCondition::Clean) {
            println!("seed {seed} {:<9} {:<14} AP {:.4} acc {:.4}", r.condition.name(), r.mode.name(), r.metrics.ap, r.metrics.accuracy);
        }
        println!("{}", dir.join(format!("{stem}.json")).display());
    }
    Ok(())
}
