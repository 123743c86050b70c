#![allow(dead_code)]

use gif_fusion::gif::GifParams;
use gif_fusion::rng::rng_for;
use gif_fusion::tensor::Tensor;
use rand::Rng;

/// Plain-loop fusion block used as an oracle: returns `(w1, w2, fused)` with
/// the weight maps forced to one when `fixed` is set.
pub fn naive_gif(f1: &Tensor, f2: &Tensor, p: &GifParams, fixed: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = f1.shape();
    let (k, m, n) = (s[0], s[1], s[2]);
    let joint = |c: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= m as isize || x >= n as isize {
            return 0.0;
        }
        let (y, x) = (y as usize, x as usize);
        if c < k { f1.data()[(c * m + y) * n + x] } else { f2.data()[((c - k) * m + y) * n + x] }
    };
    let gate = |kernel: &Tensor, bias: f64, y: usize, x: usize| -> f64 {
        let kh = kernel.shape()[2];
        let pad = (kh / 2) as isize;
        let mut acc = bias;
        for c in 0..2 * k {
            for dy in 0..kh {
                for dx in 0..kh {
                    let w = kernel.data()[(c * kh + dy) * kh + dx];
                    acc += w * joint(c, y as isize + dy as isize - pad, x as isize + dx as isize - pad);
                }
            }
        }
        1.0 / (1.0 + (-acc).exp())
    };
    let mut w1 = vec![1.0; m * n];
    let mut w2 = vec![1.0; m * n];
    if !fixed {
        for y in 0..m {
            for x in 0..n {
                w1[y * n + x] = gate(&p.c1, p.b1.data()[0], y, x);
                w2[y * n + x] = gate(&p.c2, p.b2.data()[0], y, x);
            }
        }
    }
    let mut fused = vec![0.0; k * m * n];
    for o in 0..k {
        for y in 0..m {
            for x in 0..n {
                let i = y * n + x;
                let mut acc = p.bf.data()[o];
                for c in 0..2 * k {
                    let w = if c < k { w1[i] } else { w2[i] };
                    acc += p.cj.data()[o * 2 * k + c] * w * joint(c, y as isize, x as isize);
                }
                fused[(o * m + y) * n + x] = acc.max(0.0);
            }
        }
    }
    (w1, w2, fused)
}

/// Random block input of depth 1..=4 and size 1..=6 per side.
pub fn random_instance(seed: u64, i: u64) -> (Tensor, Tensor, GifParams) {
    let mut rng = rng_for(seed, &[i]);
    let k = rng.random_range(1..=4);
    let m = rng.random_range(1..=6);
    let n = rng.random_range(1..=6);
    let draw = |rng: &mut gif_fusion::rng::Rng| {
        let d = (0..k * m * n).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::new(&[k, m, n], d).unwrap()
    };
    let f1 = draw(&mut rng);
    let f2 = draw(&mut rng);
    let mut p = GifParams::init(k, &mut rng);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    (f1, f2, p)
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
