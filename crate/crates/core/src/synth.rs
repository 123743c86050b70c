//! Synthetic paired scenes.
//!
//! Modality 1 is camera-like: a shaded, noisy background with darker colored
//! objects. Modality 2 is depth-like: a dark background with objects whose
//! brightness falls off with distance. Each modality alone is enough to find
//! the objects.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::degradation::Sample;
use crate::image::Image;
use crate::pnm::{PnmError, PnmImage};
use crate::rng::{derive_seed, rng_for, stream, Rng};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Pnm(#[from] PnmError),
    #[error("index: {0}")]
    Index(#[from] serde_json::Error),
    #[error("dataset: {0}")]
    Invalid(String),
}

/// Per-cell object presence, row-major; a cell is positive iff an object's
/// center lies in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelGrid {
    pub grid: usize,
    pub cells: Vec<u8>,
}

impl LabelGrid {
    pub fn empty(grid: usize) -> Self {
        Self { grid, cells: vec![0; grid * grid] }
    }

    pub fn positives(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.cells.iter().map(|&c| usize::from(c != 0)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Square,
    Disk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub size: f64,
    /// Camera-modality color.
    pub color: [f64; 3],
    /// Distance proxy in meters for the depth modality.
    pub distance: f64,
}

impl SceneObject {
    fn covers(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = (px - self.cx, py - self.cy);
        let r = self.size / 2.0;
        match self.shape {
            ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
            ShapeKind::Disk => dx * dx + dy * dy <= r * r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub size: usize,
    pub grid: usize,
    pub max_objects: usize,
    pub object_size: (f64, f64),
    pub camera_background: (f64, f64),
    pub camera_object: (f64, f64),
    pub depth_background: (f64, f64),
    pub distance: (f64, f64),
    pub max_distance: f64,
    pub camera_noise_std: f64,
    pub depth_noise_std: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            size: 32,
            grid: 4,
            max_objects: 3,
            object_size: (6.0, 10.0),
            camera_background: (120.0, 170.0),
            camera_object: (50.0, 90.0),
            depth_background: (10.0, 30.0),
            distance: (8.0, 45.0),
            max_distance: 80.0,
            camera_noise_std: 6.0,
            depth_noise_std: 4.0,
        }
    }
}

impl SceneParams {
    pub fn cell_size(&self) -> f64 {
        self.size as f64 / self.grid as f64
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.grid == 0 || self.size < self.grid {
            return Err(DatasetError::Invalid(format!("grid {} does not fit image size {}", self.grid, self.size)));
        }
        if self.object_size.0 < 4.0 || self.object_size.1 < self.object_size.0 || self.object_size.1 > self.size as f64 {
            return Err(DatasetError::Invalid(format!("object size range {:?} must lie in [4, {}]", self.object_size, self.size)));
        }
        Ok(())
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

pub fn labels_for(objects: &[SceneObject], params: &SceneParams) -> LabelGrid {
    let mut labels = LabelGrid::empty(params.grid);
    let cell = params.cell_size();
    for o in objects {
        let gx = ((o.cx / cell).floor() as usize).min(params.grid - 1);
        let gy = ((o.cy / cell).floor() as usize).min(params.grid - 1);
        labels.cells[gy * params.grid + gx] = 1;
    }
    labels
}

/// Draws up to `max_objects` objects, fully inside the frame, with centers
/// in distinct cells.
pub fn random_objects(rng: &mut Rng, params: &SceneParams) -> Vec<SceneObject> {
    let count = rng.random_range(0..=params.max_objects);
    let cell = params.cell_size();
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    let mut tries = 0;
    while objects.len() < count && tries < 64 {
        tries += 1;
        let size = uniform(rng, params.object_size);
        let half = size / 2.0;
        let cx = rng.random_range(half..=params.size as f64 - half);
        let cy = rng.random_range(half..=params.size as f64 - half);
        let key = |x: f64, y: f64| ((x / cell).floor() as usize, (y / cell).floor() as usize);
        if objects.iter().any(|o| key(o.cx, o.cy) == key(cx, cy)) {
            continue;
        }
        let shape = if rng.random_bool(0.5) { ShapeKind::Square } else { ShapeKind::Disk };
        let color = [0; 3].map(|_| uniform(rng, params.camera_object));
        let distance = uniform(rng, params.distance);
        objects.push(SceneObject { shape, cx, cy, size, color, distance });
    }
    objects
}

/// Renders both modalities of a scene from `objects`.
pub fn render(objects: &[SceneObject], params: &SceneParams, rng: &mut Rng) -> Sample {
    let n = params.size;
    let bg_cam = [0; 3].map(|_| uniform(rng, params.camera_background));
    let bg_depth = uniform(rng, params.depth_background);
    let cam_noise = Normal::new(0.0, params.camera_noise_std.max(0.0)).expect("finite std");
    let depth_noise = Normal::new(0.0, params.depth_noise_std.max(0.0)).expect("finite std");
    // nearer objects drawn last so they occlude farther ones
    let mut order: Vec<&SceneObject> = objects.iter().collect();
    order.sort_by(|a, b| b.distance.total_cmp(&a.distance));

    let mut m1 = Image::zeros(3, n, n);
    let mut m2 = Image::zeros(3, n, n);
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let hit = order.iter().rev().find(|o| o.covers(px, py));
            // gentle vertical shading keeps the background from being flat
            let shade = 10.0 * (py / n as f64 - 0.5);
            for c in 0..3 {
                let base = hit.map_or(bg_cam[c] + shade, |o| o.color[c]);
                m1.set(c, y, x, (base + cam_noise.sample(rng)).clamp(0.0, 255.0));
            }
            let (d, h, i) = match hit {
                Some(o) => {
                    let d = 255.0 * (1.0 - (o.distance / params.max_distance).min(1.0));
                    (d, 0.6 * d + 40.0, 0.5 * d + 30.0)
                }
                None => (bg_depth, bg_depth + 20.0, bg_depth),
            };
            for (c, v) in [d, h, i].into_iter().enumerate() {
                m2.set(c, y, x, (v + depth_noise.sample(rng)).clamp(0.0, 255.0));
            }
        }
    }
    Sample { modality1: m1, modality2: m2, labels: labels_for(objects, params), clean: true, applied: None }
}

/// `n` samples; sample `i` depends only on `(seed, i)`.
pub fn generate_dataset(n: usize, seed: u64, params: &SceneParams) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, &[stream::GENERATE, i as u64]);
            let objects = random_objects(&mut rng, params);
            render(&objects, params, &mut rng)
        })
        .collect()
}

/// Seeded disjoint split; the first `round(train_frac * n)` shuffled samples
/// go to the training side.
pub fn split(dataset: &[Sample], train_frac: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut rng_for(seed, &[stream::SPLIT]));
    let n_train = ((train_frac.clamp(0.0, 1.0) * dataset.len() as f64).round() as usize).min(dataset.len());
    let (a, b) = idx.split_at(n_train);
    let pick = |ids: &[usize]| {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.into_iter().map(|i| dataset[i].clone()).collect()
    };
    (pick(a), pick(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: usize,
    pub modality1: String,
    pub modality2: String,
    pub labels: LabelGrid,
    pub clean: bool,
    #[serde(default)]
    pub applied: Option<crate::degradation::DegradationSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub seed: u64,
    pub params: SceneParams,
    pub samples: Vec<IndexEntry>,
}

/// Writes `NNNNN_m1.ppm` / `NNNNN_m2.ppm` pairs plus `index.json`.
pub fn save_dataset(dir: &Path, samples: &[Sample], seed: u64, params: &SceneParams) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let (a, b) = (format!("{i:05}_m1.ppm"), format!("{i:05}_m2.ppm"));
        s.modality1.to_pnm().write(dir.join(&a))?;
        s.modality2.to_pnm().write(dir.join(&b))?;
        entries.push(IndexEntry {
            id: i,
            modality1: a,
            modality2: b,
            labels: s.labels.clone(),
            clean: s.clean,
            applied: s.applied.clone(),
            seed: derive_seed(seed, &[stream::GENERATE, i as u64]),
        });
    }
    let index = DatasetIndex { seed, params: params.clone(), samples: entries };
    fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)? + "\n")?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetIndex, Vec<Sample>), DatasetError> {
    let index: DatasetIndex = serde_json::from_str(&fs::read_to_string(dir.join("index.json"))?)?;
    let mut samples = Vec::with_capacity(index.samples.len());
    for e in &index.samples {
        let m1 = Image::from_pnm(&PnmImage::read(dir.join(&e.modality1))?);
        let m2 = Image::from_pnm(&PnmImage::read(dir.join(&e.modality2))?);
        if !m1.same_shape(&m2) {
            return Err(DatasetError::Invalid(format!("sample {} has mismatched modality shapes", e.id)));
        }
        samples.push(Sample { modality1: m1, modality2: m2, labels: e.labels.clone(), clean: e.clean, applied: e.applied.clone() });
    }
    Ok((index, samples))
}
