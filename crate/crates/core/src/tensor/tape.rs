use super::conv::{self, ConvGeom};
use super::{Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    Sigmoid,
    Relu,
    Mul,
    BroadcastMul,
    Concat,
    Slice,
    Reshape,
    Add,
    Scale,
    Sum,
    Mean,
    CrossEntropy,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Relu => "relu",
            OpKind::Mul => "elemwise_mul",
            OpKind::BroadcastMul => "broadcast_mul",
            OpKind::Concat => "concat_channels",
            OpKind::Slice => "slice_channels",
            OpKind::Reshape => "reshape",
            OpKind::Add => "add",
            OpKind::Scale => "scale",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }
}

/// Deliberate backward-rule corruption, used to check that the gradient
/// checker actually catches broken rules.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    FlipSign(OpKind),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, geom: ConvGeom },
    Sigmoid(Var),
    Relu(Var),
    Mul(Var, Var),
    BroadcastMul { features: Var, map: Var },
    Concat(Var, Var),
    Slice { input: Var, start: usize },
    Reshape(Var),
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Relu(_) => OpKind::Relu,
            Op::Mul(..) => OpKind::Mul,
            Op::BroadcastMul { .. } => OpKind::BroadcastMul,
            Op::Concat(..) => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Add(..) => OpKind::Add,
            Op::Scale(..) => OpKind::Scale,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

/// `value` never carries its own gradient or flag; both live on the tape.
#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation record for one forward pass.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// Gradients from [`Tape::backward`] accumulate across calls until
/// [`Tape::zero_grad`].
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    faults: Vec<Fault>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.faults.push(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Copies `t` onto the tape. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let value = Tensor::new(t.shape(), t.data().to_vec()).expect("consistent tensor");
        self.push(value, Op::Leaf, t.requires_grad())
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.set_requires_grad(false);
        t.clear_grad();
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that always receives a gradient.
    pub fn variable(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.set_requires_grad(false);
        t.clear_grad();
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, shape: &[usize], data: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op.kind().name() });
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, op, rg))
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// 2-D cross-correlation. `input` is `[C_in,H,W]`, `kernel` is
    /// `[C_out,C_in,kH,kW]`, `bias` is `[C_out]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: usize, stride: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let is = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        let bs = self.shape(bias).to_vec();
        if is.len() != 3 {
            return Err(TensorError::Dimension { op: OP, message: format!("input must be [C,H,W], got {is:?}") });
        }
        if ks.len() != 4 {
            return Err(TensorError::Dimension { op: OP, message: format!("kernel must be [C_out,C_in,kH,kW], got {ks:?}") });
        }
        let (c_in, h, w) = (is[0], is[1], is[2]);
        let (c_out, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c_in {
            return Err(TensorError::Dimension {
                op: OP,
                message: format!("kernel input depth {kc} does not match input channels {c_in}"),
            });
        }
        if bs != [c_out] {
            return Err(TensorError::ShapeMismatch { op: OP, expected: vec![c_out], got: bs });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(TensorError::Dimension { op: OP, message: format!("kernel extents must be odd, got {kh}x{kw}") });
        }
        if stride == 0 {
            return Err(TensorError::Dimension { op: OP, message: "stride must be at least 1".into() });
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(TensorError::Dimension {
                op: OP,
                message: format!("padded input {}x{} smaller than kernel {kh}x{kw}", h + 2 * padding, w + 2 * padding),
            });
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            padding,
            stride,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (w + 2 * padding - kw) / stride + 1,
        };
        let out = conv::forward(&geom, self.data(input), self.data(kernel), self.data(bias));
        self.push_checked(&[c_out, geom.oh, geom.ow], out, Op::Conv2d { input, kernel, bias, geom }, &[input, kernel, bias])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push_checked(&shape, out, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = self.shape(x).to_vec();
        self.push_checked(&shape, out, Op::Relu(x), &[x])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elemwise_mul", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push_checked(&shape, out, Op::Mul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push_checked(&shape, out, Op::Add(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.data(a).iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        self.push_checked(&shape, out, Op::Scale(a, factor), &[a])
    }

    /// Multiplies every channel of `features` (`[K,H,W]`) by `map` (`[H,W]`).
    pub fn broadcast_mul(&mut self, features: Var, map: Var) -> Result<Var> {
        let fs = self.shape(features).to_vec();
        let ms = self.shape(map).to_vec();
        if fs.len() != 3 || ms.len() != 2 || fs[1..] != ms[..] {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_mul",
                expected: fs.get(1..).map(<[usize]>::to_vec).unwrap_or_default(),
                got: ms,
            });
        }
        let plane = fs[1] * fs[2];
        let m = self.data(map);
        let out = self
            .data(features)
            .chunks(plane)
            .flat_map(|c| c.iter().zip(m).map(|(x, y)| x * y))
            .collect();
        self.push_checked(&fs, out, Op::BroadcastMul { features, map }, &[features, map])
    }

    /// Concatenates along the leading (channel) axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                expected: sa.get(1..).map(<[usize]>::to_vec).unwrap_or_default(),
                got: sb.get(1..).map(<[usize]>::to_vec).unwrap_or(sb.clone()),
            });
        }
        let mut out = self.data(a).to_vec();
        out.extend_from_slice(self.data(b));
        self.push_checked(&[sa[0] + sb[0], sa[1], sa[2]], out, Op::Concat(a, b), &[a, b])
    }

    /// Channels `start..start+len` of a `[C,H,W]` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || start + len > s[0] {
            return Err(TensorError::Dimension {
                op: "slice_channels",
                message: format!("channels {start}..{} out of range for {s:?}", start + len),
            });
        }
        let plane = s[1] * s[2];
        let out = self.data(x)[start * plane..(start + len) * plane].to_vec();
        self.push_checked(&[len, s[1], s[2]], out, Op::Slice { input: x, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(TensorError::ShapeMismatch { op: "reshape", expected: self.shape(x).to_vec(), got: shape.to_vec() });
        }
        let out = self.data(x).to_vec();
        self.push_checked(shape, out, Op::Reshape(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        self.push_checked(&[], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len().max(1) as f64;
        let s = self.data(x).iter().sum::<f64>() / n;
        self.push_checked(&[], vec![s], Op::Mean(x), &[x])
    }

    /// Mean softmax cross-entropy over cells. `logits` is `[C,H,W]` with the
    /// class axis first; `labels` holds one class index per cell, row-major.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        const OP: &str = "cross_entropy";
        let s = self.shape(logits).to_vec();
        if s.len() != 3 {
            return Err(TensorError::Dimension { op: OP, message: format!("logits must be [C,H,W], got {s:?}") });
        }
        let (c, cells) = (s[0], s[1] * s[2]);
        if labels.len() != cells {
            return Err(TensorError::Dimension { op: OP, message: format!("{} labels for {cells} cells", labels.len()) });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::Dimension { op: OP, message: format!("label {bad} out of range for {c} classes") });
        }
        let z = self.data(logits);
        let mut probs = vec![0.0; c * cells];
        let mut loss = 0.0;
        for cell in 0..cells {
            let max = (0..c).map(|k| z[k * cells + cell]).fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = (0..c).map(|k| (z[k * cells + cell] - max).exp()).sum();
            for k in 0..c {
                probs[k * cells + cell] = (z[k * cells + cell] - max).exp() / denom;
            }
            loss += denom.ln() + max - z[labels[cell] * cells + cell];
        }
        loss /= cells as f64;
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), probs };
        self.push_checked(&[], vec![loss], op, &[logits])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch { op, expected: self.shape(a).to_vec(), got: self.shape(b).to_vec() });
        }
        Ok(())
    }

    /// Reverse pass from a scalar `loss`. Gradients add onto any left by a
    /// previous call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.shape(loss).to_vec() });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let sign = if self.faults.contains(&Fault::FlipSign(node.op.kind())) { -1.0 } else { 1.0 };
            let mut send = |v: Var, contrib: Vec<f64>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += sign * b),
                    slot @ None => {
                        *slot = Some(if sign < 0.0 { contrib.into_iter().map(|x| -x).collect() } else { contrib })
                    }
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { input, kernel, bias, geom } => {
                    let (di, dk, db) = conv::backward(
                        geom,
                        self.nodes[input.0].value.data(),
                        self.nodes[kernel.0].value.data(),
                        &g,
                    );
                    send(*input, di);
                    send(*kernel, dk);
                    send(*bias, db);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    send(*x, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
                }
                Op::Relu(x) => {
                    let xv = self.nodes[x.0].value.data();
                    send(*x, g.iter().zip(xv).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect());
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a.0].value.data();
                    let bv = self.nodes[b.0].value.data();
                    send(*a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                    send(*b, g.iter().zip(av).map(|(g, a)| g * a).collect());
                }
                Op::BroadcastMul { features, map } => {
                    let fv = self.nodes[features.0].value.data();
                    let mv = self.nodes[map.0].value.data();
                    let plane = mv.len();
                    let df = g.chunks(plane).flat_map(|c| c.iter().zip(mv).map(|(g, m)| g * m)).collect();
                    let mut dm = vec![0.0; plane];
                    for (gc, fc) in g.chunks(plane).zip(fv.chunks(plane)) {
                        for ((d, g), f) in dm.iter_mut().zip(gc).zip(fc) {
                            *d += g * f;
                        }
                    }
                    send(*features, df);
                    send(*map, dm);
                }
                Op::Concat(a, b) => {
                    let na = self.nodes[a.0].value.len();
                    send(*a, g[..na].to_vec());
                    send(*b, g[na..].to_vec());
                }
                Op::Slice { input, start } => {
                    let src = &self.nodes[input.0].value;
                    let plane = src.shape()[1] * src.shape()[2];
                    let mut d = vec![0.0; src.len()];
                    d[start * plane..start * plane + g.len()].copy_from_slice(&g);
                    send(*input, d);
                }
                Op::Reshape(x) => send(*x, g.clone()),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.clone());
                }
                Op::Scale(x, f) => send(*x, g.iter().map(|v| v * f).collect()),
                Op::Sum(x) => send(*x, vec![g[0]; self.nodes[x.0].value.len()]),
                Op::Mean(x) => {
                    let n = self.nodes[x.0].value.len();
                    send(*x, vec![g[0] / n.max(1) as f64; n]);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let cells = labels.len();
                    let scale = g[0] / cells as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (cell, &l) in labels.iter().enumerate() {
                        d[l * cells + cell] -= scale;
                    }
                    send(*logits, d);
                }
            }
            match &mut self.grads[i] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

/// Logistic function, clamped so the result stays strictly inside (0, 1)
/// even where `exp` saturates.
pub(crate) fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}
