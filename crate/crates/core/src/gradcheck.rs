//! Central finite-difference checks of the tape's backward rules.
//!
//! The numeric side only ever runs forward passes on perturbed copies of the
//! inputs, so it shares no code with the backward rules it verifies.

use rand::Rng as _;
use serde::Serialize;

use crate::gif::{gif_on_tape, GateMode, GifParams};
use crate::rng::{rng_for, stream, Rng};
use crate::tensor::{Fault, Result, Tape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that gradients near zero are
/// compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-3;
/// Elements this close to a ReLU kink are resampled.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub elements: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Compares backward-pass gradients of `f` against central differences for
/// every element of every input. `f` must return a scalar.
pub fn max_gradient_error<F>(inputs: &[Tensor], f: F, eps: f64, faults: &[Fault]) -> Result<(f64, usize)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    for &fault in faults {
        tape.inject_fault(fault);
    }
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut worst = 0.0f64;
    let mut count = 0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[i][j], numeric));
            count += 1;
        }
    }
    Ok((worst, count))
}

/// Reduces any tensor to a scalar through fixed random weights, so every
/// output element carries a distinct upstream gradient.
pub fn weighted_sum(tape: &mut Tape, v: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(v, w)?;
    tape.sum(prod)
}

fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Random values with `|x| > KINK_MARGIN`.
fn away_from_kink(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let x: f64 = rng.random_range(-1.0..1.0);
            if x.abs() > KINK_MARGIN {
                break x;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

fn spatial(rng: &mut Rng) -> [usize; 3] {
    [rng.random_range(1..=4), rng.random_range(1..=8), rng.random_range(1..=8)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Gif,
    All,
}

impl Scope {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ops" => Some(Scope::Ops),
            "gif" => Some(Scope::Gif),
            "all" => Some(Scope::All),
            _ => None,
        }
    }
}

type Case = (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);
type CaseGen = fn(&mut Rng) -> Case;

fn op_cases() -> Vec<(&'static str, CaseGen)> {
    vec![
        ("conv2d", |rng| {
            let c_in = rng.random_range(1..=4);
            let h = rng.random_range(3..=8);
            let w = rng.random_range(3..=8);
            let c_out = rng.random_range(1..=4);
            let k = if rng.random_bool(0.5) { 3 } else { 1 };
            let pad = rng.random_range(0..=1);
            let stride = rng.random_range(1..=2);
            let oh = (h + 2 * pad - k) / stride + 1;
            let ow = (w + 2 * pad - k) / stride + 1;
            let weights = random_tensor(&[c_out, oh, ow], rng);
            (
                vec![random_tensor(&[c_in, h, w], rng), random_tensor(&[c_out, c_in, k, k], rng), random_tensor(&[c_out], rng)],
                Box::new(move |t, v| {
                    let y = t.conv2d(v[0], v[1], v[2], pad, stride)?;
                    weighted_sum(t, y, &weights)
                }),
            )
        }),
        ("sigmoid", |rng| {
            let s = spatial(rng);
            let weights = random_tensor(&s, rng);
            let x = random_tensor(&s, rng);
            let mut x4 = x.clone();
            x4.data_mut().iter_mut().for_each(|v| *v *= 4.0);
            (
                vec![x4],
                Box::new(move |t, v| {
                    let y = t.sigmoid(v[0])?;
                    weighted_sum(t, y, &weights)
                }),
            )
        }),
        ("relu", |rng| {
            let s = spatial(rng);
            let weights = random_tensor(&s, rng);
            (
                vec![away_from_kink(&s, rng)],
                Box::new(move |t, v| {
                    let y = t.relu(v[0])?;
                    weighted_sum(t, y, &weights)
                }),
            )
        }),
        ("elemwise_mul", |rng| {
            let s = spatial(rng);
            let weights = random_tensor(&s, rng);
            (
                vec![random_tensor(&s, rng), random_tensor(&s, rng)],
                Box::new(move |t, v| {
                    let y = t.mul(v[0], v[1])?;
                    weighted_sum(t, y, &weights)
                }),
            )
        }),
        ("broadcast_mul", |rng| {
            let s = spatial(rng);
            let weights = random_tensor(&s, rng);
            (
                vec![random_tensor(&s, rng), random_tensor(&s[1..], rng)],
                Box::new(move |t, v| {
                    let y = t.broadcast_mul(v[0], v[1])?;
                    weighted_sum(t, y, &weights)
                }),
            )
        }),
        ("concat_channels", |rng| {
            let a = spatial(rng);
            let k2 = rng.random_range(1..=4);
            let weights = random_tensor(&[a[0] + k2, a[1], a[2]], rng);
            (
                vec![random_tensor(&a, rng), random_tensor(&[k2, a[1], a[2]], rng)],
                Box::new(move |t, v| {
                    let y = t.concat_channels(v[0], v[1])?;
                    weighted_sum(t, y, &weights)
                }),
            )
        }),
        ("slice_channels", |rng| {
            let s = spatial(rng);
            let start = rng.random_range(0..s[0]);
            let len = rng.random_range(1..=s[0] - start);
            let weights = random_tensor(&[len, s[1], s[2]], rng);
            (
                vec![random_tensor(&s, rng)],
                Box::new(move |t, v| {
                    let y = t.slice_channels(v[0], start, len)?;
                    weighted_sum(t, y, &weights)
                }),
            )
        }),
        ("add_scale_mean", |rng| {
            let s = spatial(rng);
            let factor = rng.random_range(-2.0..2.0);
            (
                vec![random_tensor(&s, rng), random_tensor(&s, rng)],
                Box::new(move |t, v| {
                    let a = t.add(v[0], v[1])?;
                    let b = t.mul(a, v[0])?;
                    let c = t.scale(b, factor)?;
                    t.mean(c)
                }),
            )
        }),
        ("cross_entropy", |rng| {
            let g = rng.random_range(1..=4);
            let c = rng.random_range(2..=3);
            let labels: Vec<usize> = (0..g * g).map(|_| rng.random_range(0..c)).collect();
            let mut z = random_tensor(&[c, g, g], rng);
            z.data_mut().iter_mut().for_each(|v| *v *= 3.0);
            (vec![z], Box::new(move |t, v| t.cross_entropy(v[0], &labels)))
        }),
        ("composite", |rng| {
            // conv -> relu -> gate by sigmoid of a second conv -> cross-entropy
            let c = rng.random_range(1..=4);
            let h = rng.random_range(3..=8);
            let w = rng.random_range(3..=8);
            let labels: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..2)).collect();
            (
                vec![
                    random_tensor(&[c, h, w], rng),
                    random_tensor(&[2, c, 3, 3], rng),
                    random_tensor(&[2], rng),
                    random_tensor(&[1, c, 3, 3], rng),
                    random_tensor(&[1], rng),
                ],
                Box::new(move |t, v| {
                    let a = t.conv2d(v[0], v[1], v[2], 1, 1)?;
                    let a = t.relu(a)?;
                    let g = t.conv2d(v[0], v[3], v[4], 1, 1)?;
                    let g = t.sigmoid(g)?;
                    let shape = t.shape(g)[1..].to_vec();
                    let g = t.reshape(g, &shape)?;
                    let y = t.broadcast_mul(a, g)?;
                    t.cross_entropy(y, &labels)
                }),
            )
        }),
    ]
}

fn gif_case(rng: &mut Rng, mode: GateMode) -> Case {
    let k = rng.random_range(1..=4);
    let m = rng.random_range(2..=6);
    let n = rng.random_range(2..=6);
    let mut p = GifParams::init(k, rng);
    // spread gate biases so weights away from saturation are exercised
    p.b1 = random_tensor(&[1], rng);
    p.b2 = random_tensor(&[1], rng);
    p.bf = random_tensor(&[k], rng);
    let weights = random_tensor(&[k, m, n], rng);
    let mut inputs = vec![random_tensor(&[k, m, n], rng), random_tensor(&[k, m, n], rng)];
    inputs.extend(p.tensors().into_iter().cloned());
    (
        inputs,
        Box::new(move |t, v| {
            let vars = crate::gif::GifVars { c1: v[2], b1: v[3], c2: v[4], b2: v[5], cj: v[6], bf: v[7] };
            let out = gif_on_tape(t, v[0], v[1], &vars, mode)?;
            weighted_sum(t, out.fused, &weights)
        }),
    )
}

/// Runs the suite for `scope` with `instances` random draws per check.
pub fn run_suite(scope: Scope, instances: usize, seed: u64, faults: &[Fault]) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    let mut record = |name: &str, r#gen: &dyn Fn(&mut Rng) -> Case, salt: u64| -> Result<()> {
        let mut worst = 0.0f64;
        let mut elements = 0;
        for i in 0..instances {
            let mut rng = rng_for(seed, &[stream::GRADCHECK, salt, i as u64]);
            let (inputs, f) = r#gen(&mut rng);
            let (err, n) = max_gradient_error(&inputs, f, DEFAULT_EPS, faults)?;
            worst = worst.max(err);
            elements += n;
        }
        results.push(CheckResult {
            name: name.to_string(),
            instances,
            elements,
            max_rel_error: worst,
            passed: worst < DEFAULT_TOLERANCE,
        });
        Ok(())
    };
    if matches!(scope, Scope::Ops | Scope::All) {
        for (salt, (name, g)) in op_cases().into_iter().enumerate() {
            record(name, &g, salt as u64)?;
        }
    }
    if matches!(scope, Scope::Gif | Scope::All) {
        record("gif_block", &|rng| gif_case(rng, GateMode::Learned), 100)?;
        record("gif_block_fixed", &|rng| gif_case(rng, GateMode::Fixed), 101)?;
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::OpKind;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn quadratic_passes() {
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let (err, n) = max_gradient_error(
            &[x],
            |t, v| {
                let y = t.mul(v[0], v[0])?;
                t.sum(y)
            },
            DEFAULT_EPS,
            &[],
        )
        .unwrap();
        assert_eq!(n, 3);
        assert!(err < 1e-8);
    }

    #[test]
    fn injected_fault_is_named() {
        let results = run_suite(Scope::Ops, 2, 9, &[Fault::FlipSign(OpKind::Sigmoid)]).unwrap();
        let failing: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
        assert!(failing.contains(&"sigmoid"));
        assert!(!failing.contains(&"conv2d"));
    }

    #[test]
    fn scope_filter() {
        let r = run_suite(Scope::Gif, 1, 1, &[]).unwrap();
        assert!(r.iter().all(|c| c.name.starts_with("gif_block")));
        assert_eq!(r.len(), 2);
        assert!(Scope::parse("nope").is_none());
    }
}
