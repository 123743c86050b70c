use std::collections::BTreeMap;
use std::path::PathBuf;

use gif_fusion::degradation::{Modality, TestCondition};
use gif_fusion::detector::{FusionMode, LayerGating};
use gif_fusion::gif::WeightStats;
use serde::Serialize;

use super::eval::SeedReport;
use crate::error::{to_json, write_file, CliError, CliResult, IoContext};
use crate::ReportArgs;

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

const METRICS: [&str; 5] = ["ap", "accuracy", "precision", "recall", "f1"];

#[derive(Debug, Serialize)]
struct AggregateRow {
    condition: TestCondition,
    mode: FusionMode,
    seeds: usize,
    mean: BTreeMap<&'static str, f64>,
    std: BTreeMap<&'static str, f64>,
}

#[derive(Debug, Serialize)]
struct GatingSummary {
    mode: FusionMode,
    seeds: Vec<u64>,
    blank_m1_median_w1: Vec<f64>,
    blank_m1_median_w2: Vec<f64>,
    occlusion_gap: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct Aggregate {
    inputs: Vec<String>,
    seeds: Vec<u64>,
    config_hashes: Vec<String>,
    rows: Vec<AggregateRow>,
    gating: Vec<GatingSummary>,
}

/// Pools one fusion layer over seeds: histograms add, maps and means
/// average.
fn pool_layers(layers: &[&LayerGating]) -> LayerGating {
    let first = layers[0];
    let n = layers.len() as f64;
    let mut out = first.clone();
    for l in &layers[1..] {
        out.stats.hist_w1.merge(&l.stats.hist_w1);
        out.stats.hist_w2.merge(&l.stats.hist_w2);
        out.per_sample.extend(&l.per_sample);
        for (a, b) in out.mean_w1_map.iter_mut().zip(&l.mean_w1_map) {
            *a += b;
        }
        for (a, b) in out.mean_w2_map.iter_mut().zip(&l.mean_w2_map) {
            *a += b;
        }
    }
    if layers.len() > 1 {
        out.mean_w1_map.iter_mut().chain(out.mean_w2_map.iter_mut()).for_each(|v| *v /= n);
        let mean = |f: fn(&WeightStats) -> f64| layers.iter().map(|l| f(&l.stats)).sum::<f64>() / n;
        out.stats.mean_w1 = mean(|s| s.mean_w1);
        out.stats.mean_w2 = mean(|s| s.mean_w2);
    }
    out
}

pub fn run(args: &ReportArgs) -> CliResult<()> {
    if args.reports.is_empty() {
        return Err(CliError::config("no reports given"));
    }
    let mut reports = Vec::new();
    for p in &args.reports {
        let text = std::fs::read_to_string(p).at(p)?;
        let r: SeedReport = serde_json::from_str(&text).at(p)?;
        reports.push(r);
    }
    let first = &reports[0];
    if reports.iter().any(|r| r.modes != first.modes || r.conditions != first.conditions) {
        return Err(CliError::config("reports cover different modes or conditions"));
    }
    let out_dir: PathBuf = args.out.clone();

    let mut rows = Vec::new();
    let mut csv = String::from("condition,mode,seeds");
    for m in METRICS {
        csv.push_str(&format!(",{m}_mean,{m}_std"));
    }
    csv.push('\n');
    for &condition in &first.conditions {
        for &mode in &first.modes {
            let picked: Vec<_> = reports
                .iter()
                .filter_map(|r| r.rows.iter().find(|row| row.condition == condition && row.mode == mode))
                .map(|row| row.metrics.clone())
                .collect();
            if picked.len() != reports.len() {
                return Err(CliError::config(format!("a report is missing {condition} / {mode}")));
            }
            let mut mean = BTreeMap::new();
            let mut std = BTreeMap::new();
            csv.push_str(&format!("{condition},{mode},{}", picked.len()));
            for name in METRICS {
                let values: Vec<f64> = picked
                    .iter()
                    .map(|m| match name {
                        "ap" => m.ap,
                        "accuracy" => m.accuracy,
                        "precision" => m.precision,
                        "recall" => m.recall,
                        _ => m.f1,
                    })
                    .collect();
                let (mu, sd) = mean_std(&values);
                csv.push_str(&format!(",{mu:.6},{sd:.6}"));
                mean.insert(name, mu);
                std.insert(name, sd);
            }
            csv.push('\n');
            rows.push(AggregateRow { condition, mode, seeds: picked.len(), mean, std });
        }
    }
    write_file(&out_dir.join("summary.csv"), csv)?;

    let mut gating = Vec::new();
    for &mode in first.modes.iter().filter(|m| m.has_fusion_block()) {
        let summaries: Vec<_> = reports.iter().filter_map(|r| r.summaries.iter().find(|s| s.mode == mode)).collect();
        gating.push(GatingSummary {
            mode,
            seeds: reports.iter().map(|r| r.seed).collect(),
            blank_m1_median_w1: summaries.iter().filter_map(|s| s.blank_m1.map(|g| g.median_w1)).collect(),
            blank_m1_median_w2: summaries.iter().filter_map(|s| s.blank_m1.map(|g| g.median_w2)).collect(),
            occlusion_gap: summaries.iter().filter_map(|s| s.occlusion_locality.as_ref().map(|l| l.gap())).collect(),
        });
        for &condition in &first.conditions {
            let entries: Vec<_> =
                reports.iter().filter_map(|r| r.gating.iter().find(|g| g.mode == mode && g.condition == condition)).collect();
            if entries.len() != reports.len() {
                continue;
            }
            for l in 0..entries[0].report.layers.len() {
                let layers: Vec<&LayerGating> = entries.iter().filter_map(|e| e.report.layers.get(l)).collect();
                let pooled = pool_layers(&layers);
                let stem = format!("{mode}_{condition}_l{l}");
                write_file(&out_dir.join(format!("hist_{stem}.csv")), pooled.histogram_csv())?;
                for (m, tag) in [(Modality::One, "w1"), (Modality::Two, "w2")] {
                    write_file(&out_dir.join(format!("map_{stem}_{tag}.pgm")), pooled.map_pgm(m, args.map_scale).encode())?;
                }
            }
        }
    }

    let aggregate = Aggregate {
        inputs: args.reports.iter().map(|p| p.display().to_string()).collect(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        config_hashes: reports.iter().map(|r| r.config_hash.clone()).collect(),
        rows,
        gating,
    };
    write_file(&out_dir.join("summary.json"), to_json(&aggregate))?;
    println!("{}", out_dir.join("summary.csv").display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_arithmetic() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
