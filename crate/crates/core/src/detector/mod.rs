//! Two-stream cell classifier.
//!
//! Each modality passes through its own stack of 3x3 stride-2 convolutions
//! down to the label grid; the streams are fused (or not, depending on the
//! mode) and a 1x1 head predicts background/object logits per cell.

mod gating;
mod metrics;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::degradation::Sample;
use crate::gif::{gif_on_tape, uniform, GateMode, GifNodes, GifOutput, GifParams, GifVars};
use crate::rng::{rng_for, stream, Rng};
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

pub use gating::{gating_report, occlusion_locality, GatingReport, LayerGating, Locality};
pub use metrics::{average_precision, evaluate, evaluate_condition, metrics_from_scores, positive_scores, Metrics};
pub use train::{train, EpochMetrics, TrainConfig, TrainError, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FusionMode {
    /// Gated fusion of the last stream layer.
    Gif,
    /// Same block with both gating weights fixed to one.
    FixedWeights,
    /// Both modalities concatenated at the input of one stream.
    Early,
    /// Two single-modality models whose per-cell softmax scores are averaged.
    LateAverage,
    Modality1Only,
    Modality2Only,
}

impl FusionMode {
    pub const ALL: [FusionMode; 6] = [
        FusionMode::Gif,
        FusionMode::FixedWeights,
        FusionMode::Early,
        FusionMode::LateAverage,
        FusionMode::Modality1Only,
        FusionMode::Modality2Only,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Gif => "gif",
            FusionMode::FixedWeights => "fixed-weights",
            FusionMode::Early => "early",
            FusionMode::LateAverage => "late-average",
            FusionMode::Modality1Only => "m1-only",
            FusionMode::Modality2Only => "m2-only",
        }
    }

    /// Modes that fuse through a gating block, learned or fixed.
    pub fn has_fusion_block(self) -> bool {
        self.gated().is_some()
    }

    fn gated(self) -> Option<GateMode> {
        match self {
            FusionMode::Gif => Some(GateMode::Learned),
            FusionMode::FixedWeights => Some(GateMode::Fixed),
            _ => None,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown fusion mode {0:?} (expected one of gif, fixed-weights, early, late-average, m1-only, m2-only)")]
pub struct UnknownMode(pub String);

impl FromStr for FusionMode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase().replace('_', "-");
        let alias = match lower.as_str() {
            "fixed" | "fixedweights" => "fixed-weights",
            "late" | "lateaverage" => "late-average",
            other => other,
        };
        Self::ALL.into_iter().find(|m| m.name() == alias).ok_or(UnknownMode(s.to_string()))
    }
}

impl From<FusionMode> for String {
    fn from(m: FusionMode) -> String {
        m.name().to_string()
    }
}

impl TryFrom<String> for FusionMode {
    type Error = UnknownMode;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub mode: FusionMode,
    /// Output channels of each stream layer; every layer halves the
    /// resolution.
    pub channels: Vec<usize>,
    pub input_channels: [usize; 2],
    /// Adds a second fusion block one layer earlier whose logits are merged
    /// through a stride-2 head.
    pub second_scale: bool,
    /// Pixels are first mapped to `[0, 1]`, then to `(x - input_center) *
    /// input_gain`. The defaults give `[-1, 1]`, so a blank image is a strong
    /// constant signal rather than an all-zero one.
    pub input_center: f64,
    pub input_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Gif,
            channels: vec![8, 16, 16],
            input_channels: [3, 3],
            second_scale: false,
            input_center: 0.5,
            input_gain: 2.0,
        }
    }
}

impl ModelConfig {
    pub fn with_mode(mode: FusionMode) -> Self {
        Self { mode, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(TensorError::Dimension { op: "model_config", message });
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad(format!("stream channels {:?} must be nonempty and positive", self.channels));
        }
        if self.input_channels.contains(&0) {
            return bad("input channels must be positive".into());
        }
        if !(self.input_center.is_finite() && self.input_gain.is_finite() && self.input_gain > 0.0) {
            return bad(format!("input normalization ({}, {}) needs a finite center and a positive gain", self.input_center, self.input_gain));
        }
        if self.second_scale && (self.channels.len() < 2 || self.mode.gated().is_none()) {
            return bad("a second fusion scale needs a gated mode and at least two stream layers".into());
        }
        Ok(())
    }

    pub fn normalize(&self, img: &crate::image::Image) -> Tensor {
        let mut t = img.to_tensor();
        t.data_mut().iter_mut().for_each(|v| *v = (*v - self.input_center) * self.input_gain);
        t
    }

    /// Grid size produced from a square input of side `size`.
    pub fn grid_for(&self, size: usize) -> usize {
        self.channels.iter().fold(size, |s, _| s.div_ceil(2))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    /// Named parameters in a fixed order.
    pub params: Vec<(String, Tensor)>,
}

fn stream_params(prefix: &str, c_in: usize, channels: &[usize], rng: &mut Rng, out: &mut Vec<(String, Tensor)>) {
    let mut c = c_in;
    for (i, &c_out) in channels.iter().enumerate() {
        let fan_in = (c * 9) as f64;
        out.push((format!("{prefix}.conv{i}.weight"), uniform(&[c_out, c, 3, 3], (6.0 / fan_in).sqrt(), rng)));
        out.push((format!("{prefix}.conv{i}.bias"), Tensor::zeros(&[c_out]).with_grad()));
        c = c_out;
    }
}

fn head_params(prefix: &str, c_in: usize, kernel: usize, rng: &mut Rng, out: &mut Vec<(String, Tensor)>) {
    let bound = 1.0 / ((c_in * kernel * kernel) as f64).sqrt();
    out.push((format!("{prefix}.weight"), uniform(&[2, c_in, kernel, kernel], bound, rng)));
    out.push((format!("{prefix}.bias"), Tensor::zeros(&[2]).with_grad()));
}

fn gif_params(prefix: &str, k: usize, rng: &mut Rng, out: &mut Vec<(String, Tensor)>) {
    let p = GifParams::init(k, rng);
    for (name, t) in GifParams::NAMES.iter().zip(p.tensors()) {
        out.push((format!("{prefix}.{name}"), t.clone()));
    }
}

impl Model {
    /// Random initialization driven only by `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &[stream::INIT]);
        let [a, b] = config.input_channels;
        let ch = &config.channels;
        let last = *ch.last().expect("validated");
        let mut p = Vec::new();
        match config.mode {
            FusionMode::Gif | FusionMode::FixedWeights => {
                stream_params("stream1", a, ch, &mut rng, &mut p);
                stream_params("stream2", b, ch, &mut rng, &mut p);
                gif_params("fuse0", last, &mut rng, &mut p);
                head_params("head", last, 1, &mut rng, &mut p);
                if config.second_scale {
                    let k = ch[ch.len() - 2];
                    gif_params("fuse1", k, &mut rng, &mut p);
                    head_params("head1", k, 3, &mut rng, &mut p);
                }
            }
            FusionMode::Early => {
                stream_params("stream", a + b, ch, &mut rng, &mut p);
                head_params("head", last, 1, &mut rng, &mut p);
            }
            FusionMode::LateAverage => {
                stream_params("stream1", a, ch, &mut rng, &mut p);
                head_params("head1", last, 1, &mut rng, &mut p);
                stream_params("stream2", b, ch, &mut rng, &mut p);
                head_params("head2", last, 1, &mut rng, &mut p);
            }
            FusionMode::Modality1Only => {
                stream_params("stream1", a, ch, &mut rng, &mut p);
                head_params("head", last, 1, &mut rng, &mut p);
            }
            FusionMode::Modality2Only => {
                stream_params("stream2", b, ch, &mut rng, &mut p);
                head_params("head", last, 1, &mut rng, &mut p);
            }
        }
        Ok(Self { config, params: p })
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Copies every named parameter out of `ck`, checking shapes against a
    /// freshly built model of the same configuration.
    pub fn from_checkpoint(config: ModelConfig, ck: &Checkpoint) -> std::result::Result<Self, crate::checkpoint::CheckpointError> {
        use crate::checkpoint::CheckpointError;
        let mut model = Model::init(config, 0).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        for (name, t) in model.params.iter_mut() {
            let src = ck.get(name)?;
            if src.shape() != t.shape() {
                return Err(CheckpointError::Corrupt(format!("{name}: shape {:?}, expected {:?}", src.shape(), t.shape())));
            }
            *t = Tensor::new(src.shape(), src.data().to_vec()).expect("same shape").with_grad();
        }
        Ok(model)
    }

    pub fn named_tensors(&self) -> Vec<(&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t)).collect()
    }
}

/// Parameter handles on a tape, looked up by name.
pub(crate) struct TapeParams<'a> {
    names: Vec<&'a str>,
    pub vars: Vec<Var>,
}

impl<'a> TapeParams<'a> {
    pub fn put(tape: &mut Tape, model: &'a Model, track: bool) -> Self {
        let vars = model
            .params
            .iter()
            .map(|(_, t)| {
                let copy = Tensor::new(t.shape(), t.data().to_vec()).expect("consistent tensor");
                if track {
                    tape.variable(copy)
                } else {
                    tape.constant(copy)
                }
            })
            .collect();
        Self { names: model.params.iter().map(|(n, _)| n.as_str()).collect(), vars }
    }

    fn get(&self, name: &str) -> Var {
        let i = self.names.iter().position(|n| *n == name).unwrap_or_else(|| panic!("model has no parameter {name}"));
        self.vars[i]
    }

    fn gif(&self, prefix: &str) -> GifVars {
        let g = |n: &str| self.get(&format!("{prefix}.{n}"));
        GifVars { c1: g("c1"), b1: g("b1"), c2: g("c2"), b2: g("b2"), cj: g("cj"), bf: g("bf") }
    }
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct ForwardNodes {
    /// One `[2,G,G]` logit map per independently trained head. Only
    /// late averaging has more than one.
    pub logits: Vec<Var>,
    pub fusion: Vec<GifNodes>,
}

fn run_stream(tape: &mut Tape, p: &TapeParams, prefix: &str, input: Var, layers: usize) -> Result<Vec<Var>> {
    let mut x = input;
    let mut outs = Vec::with_capacity(layers);
    for i in 0..layers {
        let k = p.get(&format!("{prefix}.conv{i}.weight"));
        let b = p.get(&format!("{prefix}.conv{i}.bias"));
        let z = tape.conv2d(x, k, b, 1, 2)?;
        x = tape.relu(z)?;
        outs.push(x);
    }
    Ok(outs)
}

fn head(tape: &mut Tape, p: &TapeParams, prefix: &str, x: Var, padding: usize, stride: usize) -> Result<Var> {
    tape.conv2d(x, p.get(&format!("{prefix}.weight")), p.get(&format!("{prefix}.bias")), padding, stride)
}

pub(crate) fn forward_on_tape(tape: &mut Tape, model: &Model, p: &TapeParams, sample: &Sample) -> Result<ForwardNodes> {
    let cfg = &model.config;
    let layers = cfg.channels.len();
    let [a, b] = cfg.input_channels;
    for (img, c) in [(&sample.modality1, a), (&sample.modality2, b)] {
        if img.channels != c {
            return Err(TensorError::ShapeMismatch {
                op: "detector_forward",
                expected: vec![c, img.height, img.width],
                got: vec![img.channels, img.height, img.width],
            });
        }
    }
    if !sample.modality1.same_shape(&sample.modality2) && !matches!(cfg.mode, FusionMode::Modality1Only | FusionMode::Modality2Only) {
        return Err(TensorError::ShapeMismatch {
            op: "detector_forward",
            expected: vec![a, sample.modality1.height, sample.modality1.width],
            got: vec![b, sample.modality2.height, sample.modality2.width],
        });
    }
    let mut input = |img: &crate::image::Image| tape.constant(cfg.normalize(img));
    let x1 = input(&sample.modality1);
    let x2 = input(&sample.modality2);
    let mut fusion = Vec::new();
    let logits = match cfg.mode {
        FusionMode::Gif | FusionMode::FixedWeights => {
            let gate = cfg.mode.gated().expect("gated mode");
            let s1 = run_stream(tape, p, "stream1", x1, layers)?;
            let s2 = run_stream(tape, p, "stream2", x2, layers)?;
            let top = gif_on_tape(tape, s1[layers - 1], s2[layers - 1], &p.gif("fuse0"), gate)?;
            fusion.push(top);
            let mut logits = head(tape, p, "head", top.fused, 0, 1)?;
            if cfg.second_scale {
                let mid = gif_on_tape(tape, s1[layers - 2], s2[layers - 2], &p.gif("fuse1"), gate)?;
                fusion.push(mid);
                let extra = head(tape, p, "head1", mid.fused, 1, 2)?;
                logits = tape.add(logits, extra)?;
            }
            vec![logits]
        }
        FusionMode::Early => {
            let x = tape.concat_channels(x1, x2)?;
            let s = run_stream(tape, p, "stream", x, layers)?;
            vec![head(tape, p, "head", s[layers - 1], 0, 1)?]
        }
        FusionMode::LateAverage => {
            let s1 = run_stream(tape, p, "stream1", x1, layers)?;
            let s2 = run_stream(tape, p, "stream2", x2, layers)?;
            vec![head(tape, p, "head1", s1[layers - 1], 0, 1)?, head(tape, p, "head2", s2[layers - 1], 0, 1)?]
        }
        FusionMode::Modality1Only => {
            let s = run_stream(tape, p, "stream1", x1, layers)?;
            vec![head(tape, p, "head", s[layers - 1], 0, 1)?]
        }
        FusionMode::Modality2Only => {
            let s = run_stream(tape, p, "stream2", x2, layers)?;
            vec![head(tape, p, "head", s[layers - 1], 0, 1)?]
        }
    };
    Ok(ForwardNodes { logits, fusion })
}

/// Loss of one sample: per-cell softmax cross-entropy averaged over cells,
/// summed over independently trained heads.
pub(crate) fn loss_on_tape(tape: &mut Tape, nodes: &ForwardNodes, sample: &Sample) -> Result<Var> {
    let classes = sample.labels.classes();
    let mut total: Option<Var> = None;
    for &l in &nodes.logits {
        let s = tape.shape(l).to_vec();
        if s[1] * s[2] != classes.len() {
            return Err(TensorError::ShapeMismatch { op: "detector_loss", expected: vec![2, sample.labels.grid, sample.labels.grid], got: s });
        }
        let ce = tape.cross_entropy(l, &classes)?;
        total = Some(match total {
            Some(t) => tape.add(t, ce)?,
            None => ce,
        });
    }
    Ok(total.expect("at least one head"))
}

/// Result of running a model on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `[2,G,G]` scores. For late averaging these are the log of the averaged
    /// probabilities, so a softmax recovers the averaged scores.
    pub logits: Tensor,
    pub fusion: Vec<GifOutput>,
}

impl Prediction {
    /// Object probability per cell, row-major.
    pub fn object_probabilities(&self) -> Vec<f64> {
        let cells = self.logits.len() / 2;
        let d = self.logits.data();
        (0..cells).map(|i| softmax2(d[i], d[cells + i]).1).collect()
    }
}

fn softmax2(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    (ea / (ea + eb), eb / (ea + eb))
}

fn average_heads(maps: &[&Tensor]) -> Tensor {
    let shape = maps[0].shape().to_vec();
    let cells = maps[0].len() / 2;
    let mut out = vec![0.0; 2 * cells];
    for i in 0..cells {
        let (mut p0, mut p1) = (0.0, 0.0);
        for m in maps {
            let (a, b) = softmax2(m.data()[i], m.data()[cells + i]);
            p0 += a;
            p1 += b;
        }
        let n = maps.len() as f64;
        out[i] = (p0 / n).ln();
        out[cells + i] = (p1 / n).ln();
    }
    Tensor::new(&shape, out).expect("same shape")
}

/// Inference; never touches the model.
pub fn forward(model: &Model, sample: &Sample) -> Result<Prediction> {
    let mut tape = Tape::new();
    let p = TapeParams::put(&mut tape, model, false);
    let nodes = forward_on_tape(&mut tape, model, &p, sample)?;
    let maps: Vec<&Tensor> = nodes.logits.iter().map(|&v| tape.value(v)).collect();
    let logits = if maps.len() == 1 {
        Tensor::new(maps[0].shape(), maps[0].data().to_vec()).expect("same shape")
    } else {
        average_heads(&maps)
    };
    let fusion = nodes.fusion.iter().map(|n| GifOutput::from_tape(&tape, n)).collect();
    Ok(Prediction { logits, fusion })
}

/// Mean loss of one sample without building gradients.
pub fn sample_loss(model: &Model, sample: &Sample) -> Result<f64> {
    let mut tape = Tape::new();
    let p = TapeParams::put(&mut tape, model, false);
    let nodes = forward_on_tape(&mut tape, model, &p, sample)?;
    let loss = loss_on_tape(&mut tape, &nodes, sample)?;
    Ok(tape.value(loss).data()[0])
}
