use serde::{Deserialize, Serialize};

use super::{forward, Model};
use crate::degradation::{DegradationKind, Modality, Sample};
use crate::gif::{weight_statistics, Histogram, WeightStats, WEIGHT_BINS};
use crate::pnm::PnmImage;
use crate::tensor::{Result, Tensor};

/// Gating weights of one fusion layer aggregated over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGating {
    pub height: usize,
    pub width: usize,
    /// Means over every map pixel of every sample; histograms count every
    /// map pixel.
    pub stats: WeightStats,
    /// Per-pixel mean over samples, row-major.
    pub mean_w1_map: Vec<f64>,
    pub mean_w2_map: Vec<f64>,
    /// `(mean w1, mean w2)` of each sample.
    pub per_sample: Vec<(f64, f64)>,
}

impl LayerGating {
    /// Map scaled to 0..255 and enlarged `scale` times with nearest
    /// neighbour.
    pub fn map_pgm(&self, modality: Modality, scale: usize) -> PnmImage {
        let map = match modality {
            Modality::One => &self.mean_w1_map,
            Modality::Two => &self.mean_w2_map,
        };
        let scale = scale.max(1);
        let (w, h) = (self.width * scale, self.height * scale);
        let data = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w / scale, i % w / scale);
                (map[y * self.width + x].clamp(0.0, 1.0) * 255.0).round() as u8
            })
            .collect();
        PnmImage { width: w, height: h, channels: 1, data }
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_start,bin_end,w1_count,w2_count\n");
        let bins = self.stats.hist_w1.counts.len();
        for i in 0..bins {
            let lo = self.stats.hist_w1.bin_start(i);
            let hi = lo + 1.0 / bins as f64;
            out.push_str(&format!("{lo:.2},{hi:.2},{},{}\n", self.stats.hist_w1.counts[i], self.stats.hist_w2.counts[i]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingReport {
    pub samples: usize,
    /// One entry per fusion layer, deepest first. Empty for modes without a
    /// fusion block.
    pub layers: Vec<LayerGating>,
}

/// Running sums for one fusion layer.
struct LayerAcc {
    hist_w1: Histogram,
    hist_w2: Histogram,
    sum_w1: Tensor,
    sum_w2: Tensor,
    per_sample: Vec<(f64, f64)>,
}

pub fn gating_report(model: &Model, samples: &[Sample]) -> Result<GatingReport> {
    let mut acc: Vec<LayerAcc> = Vec::new();
    for s in samples {
        let pred = forward(model, s)?;
        for (l, out) in pred.fusion.iter().enumerate() {
            if acc.len() <= l {
                let z = Tensor::zeros(out.w1.shape());
                acc.push(LayerAcc {
                    hist_w1: Histogram::new(WEIGHT_BINS),
                    hist_w2: Histogram::new(WEIGHT_BINS),
                    sum_w1: z.clone(),
                    sum_w2: z,
                    per_sample: Vec::new(),
                });
            }
            let st = weight_statistics(out);
            let entry = &mut acc[l];
            entry.hist_w1.merge(&st.hist_w1);
            entry.hist_w2.merge(&st.hist_w2);
            entry.sum_w1.data_mut().iter_mut().zip(out.w1.data()).for_each(|(a, b)| *a += b);
            entry.sum_w2.data_mut().iter_mut().zip(out.w2.data()).for_each(|(a, b)| *a += b);
            entry.per_sample.push((st.mean_w1, st.mean_w2));
        }
    }
    let n = samples.len().max(1) as f64;
    let layers = acc
        .into_iter()
        .map(|a| {
            let (height, width) = (a.sum_w1.shape()[0], a.sum_w1.shape()[1]);
            let mean_w1_map: Vec<f64> = a.sum_w1.data().iter().map(|v| v / n).collect();
            let mean_w2_map: Vec<f64> = a.sum_w2.data().iter().map(|v| v / n).collect();
            let mean = |m: &[f64]| m.iter().sum::<f64>() / m.len().max(1) as f64;
            let stats = WeightStats { mean_w1: mean(&mean_w1_map), mean_w2: mean(&mean_w2_map), hist_w1: a.hist_w1, hist_w2: a.hist_w2 };
            LayerGating { height, width, stats, mean_w1_map, mean_w2_map, per_sample: a.per_sample }
        })
        .collect();
    Ok(GatingReport { samples: samples.len(), layers })
}

/// Modality-1 gating inside versus outside occluded boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Locality {
    pub samples: usize,
    /// Test-set mean of the per-sample mean `w1` over pixels in the box.
    pub inside: f64,
    /// Same over pixels outside the box.
    pub outside: f64,
}

impl Locality {
    pub fn gap(&self) -> f64 {
        self.outside - self.inside
    }
}

/// Uses the deepest fusion layer. The weight map is enlarged to image
/// resolution with nearest neighbour before splitting pixels into inside and
/// outside. Samples without a modality-1 occlusion, or whose box covers the
/// whole image, are skipped.
pub fn occlusion_locality(model: &Model, samples: &[Sample]) -> Result<Option<Locality>> {
    let (mut inside, mut outside, mut used) = (0.0, 0.0, 0usize);
    for s in samples {
        let Some(spec) = &s.applied else { continue };
        if spec.kind != DegradationKind::Occlusion || spec.target != Modality::One {
            continue;
        }
        let Some(area) = spec.occlusion else { continue };
        let (h, w) = (s.modality1.height, s.modality1.width);
        let area = area.clipped(h, w);
        let pred = forward(model, s)?;
        let Some(out) = pred.fusion.first() else { return Ok(None) };
        let (m, n) = (out.w1.shape()[0], out.w1.shape()[1]);
        let (mut si, mut ci, mut so, mut co) = (0.0, 0usize, 0.0, 0usize);
        for y in 0..h {
            for x in 0..w {
                let v = out.w1.data()[(y * m / h) * n + x * n / w];
                if area.contains(x, y) {
                    si += v;
                    ci += 1;
                } else {
                    so += v;
                    co += 1;
                }
            }
        }
        if ci == 0 || co == 0 {
            continue;
        }
        inside += si / ci as f64;
        outside += so / co as f64;
        used += 1;
    }
    if used == 0 {
        return Ok(None);
    }
    Ok(Some(Locality { samples: used, inside: inside / used as f64, outside: outside / used as f64 }))
}
