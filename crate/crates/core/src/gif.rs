//! Gated information fusion of two modality feature maps.
//!
//! Both `[K,M,N]` maps are concatenated and fed to two 3x3 single-output
//! convolutions followed by a sigmoid, giving one `M x N` weight map per
//! modality. Each map scales every channel of its modality, the weighted maps
//! are concatenated again and a 1x1 convolution with ReLU produces the `[K,M,N]`
//! joint map.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

/// Number of histogram bins over `[0, 1]` used for gating weights.
pub const WEIGHT_BINS: usize = 20;

const WG_KERNEL: usize = 3;
const INITIAL_GATE_BIAS: f64 = 1.0;

/// Learnable tensors of one fusion block.
#[derive(Debug, Clone, PartialEq)]
pub struct GifParams {
    /// `[1, 2K, 3, 3]`
    pub c1: Tensor,
    /// `[1]`
    pub b1: Tensor,
    pub c2: Tensor,
    pub b2: Tensor,
    /// `[K, 2K, 1, 1]`
    pub cj: Tensor,
    /// `[K]`
    pub bf: Tensor,
}

pub(crate) fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape and data agree").with_grad()
}

impl GifParams {
    pub const NAMES: [&'static str; 6] = ["c1", "b1", "c2", "b2", "cj", "bf"];

    /// Weight-generation kernels uniform in `+-1/sqrt(fan_in)` with gate
    /// biases at +1, fusion kernel He-uniform with zero bias.
    pub fn init(k: usize, rng: &mut Rng) -> Self {
        let wg_bound = 1.0 / ((2 * k * WG_KERNEL * WG_KERNEL) as f64).sqrt();
        let he_bound = (6.0 / (2 * k) as f64).sqrt();
        Self {
            c1: uniform(&[1, 2 * k, WG_KERNEL, WG_KERNEL], wg_bound, rng),
            b1: Tensor::full(&[1], INITIAL_GATE_BIAS).with_grad(),
            c2: uniform(&[1, 2 * k, WG_KERNEL, WG_KERNEL], wg_bound, rng),
            b2: Tensor::full(&[1], INITIAL_GATE_BIAS).with_grad(),
            cj: uniform(&[k, 2 * k, 1, 1], he_bound, rng),
            bf: Tensor::zeros(&[k]).with_grad(),
        }
    }

    /// Feature depth `K` the block was built for.
    pub fn depth(&self) -> usize {
        self.bf.len()
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        [&self.c1, &self.b1, &self.c2, &self.b2, &self.cj, &self.bf]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [&mut self.c1, &mut self.b1, &mut self.c2, &mut self.b2, &mut self.cj, &mut self.bf]
    }

    pub fn from_tensors(mut t: Vec<Tensor>) -> Result<Self> {
        if t.len() != 6 {
            return Err(TensorError::Dimension { op: "gif_params", message: format!("expected 6 tensors, got {}", t.len()) });
        }
        let bf = t.pop().unwrap();
        let cj = t.pop().unwrap();
        let b2 = t.pop().unwrap();
        let c2 = t.pop().unwrap();
        let b1 = t.pop().unwrap();
        let c1 = t.pop().unwrap();
        let p = Self { c1, b1, c2, b2, cj, bf };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.depth();
        let expect = |t: &Tensor, shape: Vec<usize>| {
            if t.shape() == shape.as_slice() {
                Ok(())
            } else {
                Err(TensorError::ShapeMismatch { op: "gif_params", expected: shape, got: t.shape().to_vec() })
            }
        };
        expect(&self.c1, vec![1, 2 * k, WG_KERNEL, WG_KERNEL])?;
        expect(&self.c2, vec![1, 2 * k, WG_KERNEL, WG_KERNEL])?;
        expect(&self.b1, vec![1])?;
        expect(&self.b2, vec![1])?;
        expect(&self.cj, vec![k, 2 * k, 1, 1])
    }

    pub fn on_tape(&self, tape: &mut Tape) -> GifVars {
        GifVars {
            c1: tape.leaf(&self.c1),
            b1: tape.leaf(&self.b1),
            c2: tape.leaf(&self.c2),
            b2: tape.leaf(&self.b2),
            cj: tape.leaf(&self.cj),
            bf: tape.leaf(&self.bf),
        }
    }
}

/// Tape handles for one block's parameters, in [`GifParams::NAMES`] order.
#[derive(Debug, Clone, Copy)]
pub struct GifVars {
    pub c1: Var,
    pub b1: Var,
    pub c2: Var,
    pub b2: Var,
    pub cj: Var,
    pub bf: Var,
}

impl GifVars {
    pub fn all(&self) -> [Var; 6] {
        [self.c1, self.b1, self.c2, self.b2, self.cj, self.bf]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateMode {
    /// Weights from the weight-generation convolutions.
    Learned,
    /// Weights fixed to one; the weight-generation branch is never evaluated.
    Fixed,
    /// Weight-generation branch is evaluated but its outputs are replaced by
    /// ones before fusion. Only useful for equivalence checks.
    LearnedPinned,
}

/// Tape handles produced by one fusion block.
#[derive(Debug, Clone, Copy)]
pub struct GifNodes {
    pub fused: Var,
    pub w1: Var,
    pub w2: Var,
    pub gated: Var,
}

/// Fusion on an existing tape.
pub fn gif_on_tape(tape: &mut Tape, f1: Var, f2: Var, p: &GifVars, mode: GateMode) -> Result<GifNodes> {
    let s1 = tape.shape(f1).to_vec();
    let s2 = tape.shape(f2).to_vec();
    if s1.len() != 3 || s1 != s2 {
        return Err(TensorError::ShapeMismatch { op: "gif_forward", expected: s1, got: s2 });
    }
    let (k, m, n) = (s1[0], s1[1], s1[2]);
    let cj_shape = tape.shape(p.cj).to_vec();
    if cj_shape.len() != 4 || cj_shape[1] != 2 * k {
        return Err(TensorError::Dimension {
            op: "gif_forward",
            message: format!("fusion kernel {cj_shape:?} needs input depth 2K = {}", 2 * k),
        });
    }
    let (w1, w2) = match mode {
        GateMode::Fixed => (tape.constant(Tensor::ones(&[m, n])), tape.constant(Tensor::ones(&[m, n]))),
        GateMode::Learned | GateMode::LearnedPinned => {
            for c in [p.c1, p.c2] {
                let cs = tape.shape(c);
                if cs.len() != 4 || cs[0] != 1 || cs[1] != 2 * k {
                    return Err(TensorError::Dimension {
                        op: "gif_forward",
                        message: format!("weight kernel {cs:?} needs shape [1, {}, kH, kW]", 2 * k),
                    });
                }
            }
            let joint = tape.concat_channels(f1, f2)?;
            let pad = tape.shape(p.c1)[2] / 2;
            let z1 = tape.conv2d(joint, p.c1, p.b1, pad, 1)?;
            let z2 = tape.conv2d(joint, p.c2, p.b2, pad, 1)?;
            let w1 = tape.sigmoid(z1)?;
            let w2 = tape.sigmoid(z2)?;
            let w1 = tape.reshape(w1, &[m, n])?;
            let w2 = tape.reshape(w2, &[m, n])?;
            if mode == GateMode::LearnedPinned {
                (tape.constant(Tensor::ones(&[m, n])), tape.constant(Tensor::ones(&[m, n])))
            } else {
                (w1, w2)
            }
        }
    };
    let g1 = tape.broadcast_mul(f1, w1)?;
    let g2 = tape.broadcast_mul(f2, w2)?;
    let gated = tape.concat_channels(g1, g2)?;
    let pre = tape.conv2d(gated, p.cj, p.bf, 0, 1)?;
    let fused = tape.relu(pre)?;
    Ok(GifNodes { fused, w1, w2, gated })
}

/// Materialised output of one fusion block.
#[derive(Debug, Clone, PartialEq)]
pub struct GifOutput {
    pub fused: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
    pub gated: Tensor,
}

impl GifOutput {
    pub fn from_tape(tape: &Tape, nodes: &GifNodes) -> Self {
        let grab = |v: Var| {
            let t = tape.value(v);
            Tensor::new(t.shape(), t.data().to_vec()).expect("tape tensor")
        };
        Self { fused: grab(nodes.fused), w1: grab(nodes.w1), w2: grab(nodes.w2), gated: grab(nodes.gated) }
    }
}

fn run(f1: &Tensor, f2: &Tensor, params: &GifParams, mode: GateMode) -> Result<GifOutput> {
    let mut tape = Tape::new();
    let a = tape.constant(f1.clone());
    let b = tape.constant(f2.clone());
    let vars = params.on_tape(&mut tape);
    let nodes = gif_on_tape(&mut tape, a, b, &vars, mode)?;
    Ok(GifOutput::from_tape(&tape, &nodes))
}

pub fn gif_forward(f1: &Tensor, f2: &Tensor, params: &GifParams) -> Result<GifOutput> {
    run(f1, f2, params, GateMode::Learned)
}

/// Learned pipeline with the generated weights replaced by ones just before
/// fusion.
pub fn pinned_weight_forward(f1: &Tensor, f2: &Tensor, params: &GifParams) -> Result<GifOutput> {
    run(f1, f2, params, GateMode::LearnedPinned)
}

/// Same pipeline with both weight maps fixed to one.
pub fn fixed_weight_forward(f1: &Tensor, f2: &Tensor, params: &GifParams) -> Result<GifOutput> {
    run(f1, f2, params, GateMode::Fixed)
}

/// Counts of values in `[0, 1]` split into equal-width bins; values at 1.0
/// land in the last bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bins: usize) -> Self {
        Self { counts: vec![0; bins] }
    }

    pub fn add(&mut self, value: f64) {
        let bins = self.counts.len();
        let idx = ((value.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        self.counts[idx] += 1;
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn occupied_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Lower edge of bin `i`.
    pub fn bin_start(&self, i: usize) -> f64 {
        i as f64 / self.counts.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub mean_w1: f64,
    pub mean_w2: f64,
    pub hist_w1: Histogram,
    pub hist_w2: Histogram,
}

pub fn weight_statistics(out: &GifOutput) -> WeightStats {
    let stats = |w: &Tensor| {
        let mut h = Histogram::new(WEIGHT_BINS);
        w.data().iter().for_each(|&v| h.add(v));
        (w.data().iter().sum::<f64>() / w.len().max(1) as f64, h)
    };
    let (mean_w1, hist_w1) = stats(&out.w1);
    let (mean_w2, hist_w2) = stats(&out.w2);
    WeightStats { mean_w1, mean_w2, hist_w1, hist_w2 }
}
