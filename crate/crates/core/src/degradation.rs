//! Modality corruptions used both for training-time augmentation and for the
//! extended test conditions.
//!
//! All operations work on float images on the 0-255 scale, before the model
//! rescales its inputs.

use std::fmt;
use std::str::FromStr;

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::rng::{rng_for, stream, Rng};
use crate::synth::LabelGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::One, Modality::Two];

    pub fn number(self) -> u8 {
        match self {
            Modality::One => 1,
            Modality::Two => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DegradationKind {
    Blank,
    Occlusion,
    Illumination,
    Noise,
    NoAction,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 5] = [
        DegradationKind::Blank,
        DegradationKind::Occlusion,
        DegradationKind::Illumination,
        DegradationKind::Noise,
        DegradationKind::NoAction,
    ];

    /// Kinds that only make sense for the camera modality.
    pub fn camera_only(self) -> bool {
        matches!(self, DegradationKind::Illumination | DegradationKind::Noise)
    }
}

/// What to do when a camera-only kind is paired with the other modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InapplicablePolicy {
    /// Keep the kind and retarget it to the camera modality. Kinds stay
    /// uniform; the target is uniform over the modalities the kind applies to.
    #[default]
    RetargetModality,
    /// Keep the modality and redraw the kind among the applicable ones.
    ResampleKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityConstraints {
    pub camera: Modality,
    pub policy: InapplicablePolicy,
}

impl Default for ModalityConstraints {
    fn default() -> Self {
        Self { camera: Modality::One, policy: InapplicablePolicy::default() }
    }
}

/// Sampling ranges for the random corruption parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationRanges {
    /// Box side as a fraction of the image side.
    pub occlusion_frac: (f64, f64),
    /// Disk radius as a fraction of `min(H, W)`.
    pub radius_frac: (f64, f64),
    pub brightness: (f64, f64),
    pub noise_sigma: (f64, f64),
}

impl Default for DegradationRanges {
    fn default() -> Self {
        Self { occlusion_frac: (0.2, 0.6), radius_frac: (0.15, 0.4), brightness: (40.0, 120.0), noise_sigma: (5.0, 30.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl OcclusionBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    /// Clipped to a `height x width` frame.
    pub fn clipped(&self, height: usize, width: usize) -> Self {
        let x = self.x.min(width);
        let y = self.y.min(height);
        Self { x, y, w: self.w.min(width - x), h: self.h.min(height - y) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IlluminationDisk {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub delta: f64,
}

/// One sampled corruption event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub target: Modality,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub occlusion: Option<OcclusionBox>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub illumination: Option<IlluminationDisk>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noise_sigma: Option<f64>,
    /// Seed of the noise stream.
    pub seed: u64,
}

impl DegradationSpec {
    pub fn no_action() -> Self {
        Self { kind: DegradationKind::NoAction, target: Modality::One, occlusion: None, illumination: None, noise_sigma: None, seed: 0 }
    }
}

/// Parameters for a given `kind` on a `height x width` image.
pub fn draw_parameters(
    kind: DegradationKind,
    target: Modality,
    rng: &mut Rng,
    height: usize,
    width: usize,
    ranges: &DegradationRanges,
) -> DegradationSpec {
    let mut spec = DegradationSpec { kind, target, occlusion: None, illumination: None, noise_sigma: None, seed: rng.random() };
    let uniform = |rng: &mut Rng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    match kind {
        DegradationKind::Occlusion => {
            let w = ((uniform(rng, ranges.occlusion_frac) * width as f64).round() as usize).clamp(1, width);
            let h = ((uniform(rng, ranges.occlusion_frac) * height as f64).round() as usize).clamp(1, height);
            let x = rng.random_range(0..=width - w);
            let y = rng.random_range(0..=height - h);
            spec.occlusion = Some(OcclusionBox { x, y, w, h });
        }
        DegradationKind::Illumination => {
            let radius = uniform(rng, ranges.radius_frac) * height.min(width) as f64;
            let cx = rng.random_range(0.0..width as f64);
            let cy = rng.random_range(0.0..height as f64);
            let delta = uniform(rng, ranges.brightness);
            spec.illumination = Some(IlluminationDisk { cx, cy, radius, delta });
        }
        DegradationKind::Noise => spec.noise_sigma = Some(uniform(rng, ranges.noise_sigma)),
        DegradationKind::Blank | DegradationKind::NoAction => {}
    }
    spec
}

/// Draws a kind uniformly from the five options and a target modality
/// uniformly, then resolves camera-only kinds per `constraints.policy`.
pub fn sample_spec(
    rng: &mut Rng,
    constraints: &ModalityConstraints,
    height: usize,
    width: usize,
    ranges: &DegradationRanges,
) -> DegradationSpec {
    let mut kind = DegradationKind::ALL[rng.random_range(0..DegradationKind::ALL.len())];
    let mut target = Modality::BOTH[rng.random_range(0..2)];
    if kind.camera_only() && target != constraints.camera {
        match constraints.policy {
            InapplicablePolicy::RetargetModality => target = constraints.camera,
            InapplicablePolicy::ResampleKind => {
                const APPLICABLE: [DegradationKind; 3] =
                    [DegradationKind::Blank, DegradationKind::Occlusion, DegradationKind::NoAction];
                kind = APPLICABLE[rng.random_range(0..APPLICABLE.len())];
            }
        }
    }
    draw_parameters(kind, target, rng, height, width, ranges)
}

pub fn apply_blank(img: &Image) -> Image {
    Image::zeros(img.channels, img.height, img.width)
}

pub fn apply_occlusion(img: &Image, area: &OcclusionBox) -> Image {
    let b = area.clipped(img.height, img.width);
    let mut out = img.clone();
    for c in 0..img.channels {
        for y in b.y..b.y + b.h {
            for x in b.x..b.x + b.w {
                out.set(c, y, x, 0.0);
            }
        }
    }
    out
}

pub fn apply_illumination(img: &Image, cx: f64, cy: f64, radius: f64, delta: f64) -> Image {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            if (dx * dx + dy * dy).sqrt() <= radius {
                for c in 0..img.channels {
                    out.set(c, y, x, (img.get(c, y, x) + delta).clamp(0.0, 255.0));
                }
            }
        }
    }
    out
}

pub fn apply_noise(img: &Image, sigma: f64, rng: &mut Rng) -> Image {
    let mut out = img.clone();
    if sigma <= 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in &mut out.data {
        *v = (*v + normal.sample(rng)).clamp(0.0, 255.0);
    }
    out
}

pub fn apply_to_image(img: &Image, spec: &DegradationSpec) -> Image {
    match spec.kind {
        DegradationKind::Blank => apply_blank(img),
        DegradationKind::Occlusion => apply_occlusion(img, &spec.occlusion.expect("occlusion spec carries a box")),
        DegradationKind::Illumination => {
            let d = spec.illumination.expect("illumination spec carries a disk");
            apply_illumination(img, d.cx, d.cy, d.radius, d.delta)
        }
        DegradationKind::Noise => {
            let mut rng = Rng::seed_from_u64(spec.seed);
            apply_noise(img, spec.noise_sigma.expect("noise spec carries sigma"), &mut rng)
        }
        DegradationKind::NoAction => img.clone(),
    }
}

/// Paired two-modality training or test example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub modality1: Image,
    pub modality2: Image,
    pub labels: LabelGrid,
    pub clean: bool,
    #[serde(default)]
    pub applied: Option<DegradationSpec>,
}

impl Sample {
    pub fn image(&self, m: Modality) -> &Image {
        match m {
            Modality::One => &self.modality1,
            Modality::Two => &self.modality2,
        }
    }
}

/// Applies `spec` to its target modality; labels are untouched.
pub fn apply(sample: &Sample, spec: &DegradationSpec) -> Sample {
    if spec.kind == DegradationKind::NoAction {
        return sample.clone();
    }
    let mut out = sample.clone();
    match spec.target {
        Modality::One => out.modality1 = apply_to_image(&sample.modality1, spec),
        Modality::Two => out.modality2 = apply_to_image(&sample.modality2, spec),
    }
    out.clean = false;
    out.applied = Some(spec.clone());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TestCondition {
    Total,
    Clean,
    BlankM1,
    BlankM2,
    OcclusionM1,
    OcclusionM2,
    NoiseM1,
    IlluminationM1,
}

impl TestCondition {
    pub const ALL: [TestCondition; 8] = [
        TestCondition::Total,
        TestCondition::Clean,
        TestCondition::BlankM1,
        TestCondition::BlankM2,
        TestCondition::OcclusionM1,
        TestCondition::OcclusionM2,
        TestCondition::NoiseM1,
        TestCondition::IlluminationM1,
    ];

    /// Conditions pooled by [`TestCondition::Total`].
    pub const PARTS: [TestCondition; 7] = [
        TestCondition::Clean,
        TestCondition::BlankM1,
        TestCondition::BlankM2,
        TestCondition::OcclusionM1,
        TestCondition::OcclusionM2,
        TestCondition::NoiseM1,
        TestCondition::IlluminationM1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestCondition::Total => "total",
            TestCondition::Clean => "clean",
            TestCondition::BlankM1 => "blank-m1",
            TestCondition::BlankM2 => "blank-m2",
            TestCondition::OcclusionM1 => "occl-m1",
            TestCondition::OcclusionM2 => "occl-m2",
            TestCondition::NoiseM1 => "noise-m1",
            TestCondition::IlluminationM1 => "illum-m1",
        }
    }

    /// The single corruption this condition applies, if it is not pooled.
    pub fn corruption(self) -> Option<(DegradationKind, Modality)> {
        match self {
            TestCondition::Total => None,
            TestCondition::Clean => Some((DegradationKind::NoAction, Modality::One)),
            TestCondition::BlankM1 => Some((DegradationKind::Blank, Modality::One)),
            TestCondition::BlankM2 => Some((DegradationKind::Blank, Modality::Two)),
            TestCondition::OcclusionM1 => Some((DegradationKind::Occlusion, Modality::One)),
            TestCondition::OcclusionM2 => Some((DegradationKind::Occlusion, Modality::Two)),
            TestCondition::NoiseM1 => Some((DegradationKind::Noise, Modality::One)),
            TestCondition::IlluminationM1 => Some((DegradationKind::Illumination, Modality::One)),
        }
    }

    fn id(self) -> u64 {
        Self::ALL.iter().position(|&c| c == self).unwrap() as u64
    }
}

impl fmt::Display for TestCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown test condition {0:?}")]
pub struct UnknownCondition(pub String);

impl FromStr for TestCondition {
    type Err = UnknownCondition;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Self::ALL.into_iter().find(|c| c.name() == lower).ok_or(UnknownCondition(s.to_string()))
    }
}

impl From<TestCondition> for String {
    fn from(c: TestCondition) -> String {
        c.name().to_string()
    }
}

impl TryFrom<String> for TestCondition {
    type Error = UnknownCondition;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Deterministically corrupts every sample per `condition`. `Total`
/// interleaves every other condition, sample by sample, so each part holds
/// the same number of examples.
pub fn make_test_condition(dataset: &[Sample], condition: TestCondition, seed: u64, ranges: &DegradationRanges) -> Vec<Sample> {
    let single = |cond: TestCondition, i: usize, s: &Sample| {
        let (kind, target) = cond.corruption().expect("not pooled");
        let mut rng = rng_for(seed, &[stream::CONDITION, cond.id(), i as u64]);
        let spec = draw_parameters(kind, target, &mut rng, s.modality1.height, s.modality1.width, ranges);
        apply(s, &spec)
    };
    match condition {
        TestCondition::Total => dataset
            .iter()
            .enumerate()
            .flat_map(|(i, s)| TestCondition::PARTS.into_iter().map(move |c| single(c, i, s)))
            .collect(),
        c => dataset.iter().enumerate().map(|(i, s)| single(c, i, s)).collect(),
    }
}
