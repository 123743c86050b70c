//! Raw 2-D cross-correlation kernels over row-major slices.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub padding: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output columns `ox` for which `ox * stride + k - padding` lands in `[0, extent)`.
    fn valid_range(k: usize, padding: usize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
        // ox*stride + k >= padding
        let lo = if k >= padding { 0 } else { (padding - k).div_ceil(stride) };
        // ox*stride + k - padding <= extent - 1
        let lim = extent + padding;
        let hi = if k >= lim { 0 } else { ((lim - 1 - k) / stride + 1).min(out) };
        (lo.min(hi), hi)
    }
}

pub(crate) fn forward(g: &ConvGeom, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.c_out * plane];
    for co in 0..g.c_out {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..g.c_in {
            let inp = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (y0, y1) = ConvGeom::valid_range(ky, g.padding, g.stride, g.h, g.oh);
                for kx in 0..g.kw {
                    let wv = kernel[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                    let (x0, x1) = ConvGeom::valid_range(kx, g.padding, g.stride, g.w, g.ow);
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let row = &inp[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut o[oy * g.ow..(oy + 1) * g.ow];
                        for ox in x0..x1 {
                            orow[ox] += wv * row[ox * g.stride + kx - g.padding];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d_input, d_kernel, d_bias)` for upstream gradient `grad_out`.
pub(crate) fn backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = g.oh * g.ow;
    let mut d_in = vec![0.0; input.len()];
    let mut d_k = vec![0.0; kernel.len()];
    let mut d_b = vec![0.0; g.c_out];
    for co in 0..g.c_out {
        let go = &grad_out[co * plane..(co + 1) * plane];
        d_b[co] = go.iter().sum();
        for ci in 0..g.c_in {
            let base = ci * g.h * g.w;
            for ky in 0..g.kh {
                let (y0, y1) = ConvGeom::valid_range(ky, g.padding, g.stride, g.h, g.oh);
                for kx in 0..g.kw {
                    let kidx = ((co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
                    let wv = kernel[kidx];
                    let (x0, x1) = ConvGeom::valid_range(kx, g.padding, g.stride, g.w, g.ow);
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let row = base + iy * g.w;
                        let grow = &go[oy * g.ow..(oy + 1) * g.ow];
                        for ox in x0..x1 {
                            let ii = row + ox * g.stride + kx - g.padding;
                            acc += input[ii] * grow[ox];
                            d_in[ii] += wv * grow[ox];
                        }
                    }
                    d_k[kidx] += acc;
                }
            }
        }
    }
    (d_in, d_k, d_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(g: &ConvGeom, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.c_out * g.oh * g.ow];
        for co in 0..g.c_out {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut s = bias[co];
                    for ci in 0..g.c_in {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                s += kernel[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx]
                                    * input[(ci * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    out[(co * g.oh + oy) * g.ow + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_loops() {
        for &(h, w, k, p, s) in &[(5, 5, 3, 1, 1), (6, 7, 3, 1, 2), (5, 4, 3, 0, 1), (8, 8, 1, 0, 2), (7, 7, 5, 2, 3)] {
            let g = ConvGeom {
                c_in: 2,
                h,
                w,
                c_out: 3,
                kh: k,
                kw: k,
                padding: p,
                stride: s,
                oh: (h + 2 * p - k) / s + 1,
                ow: (w + 2 * p - k) / s + 1,
            };
            let input: Vec<f64> = (0..2 * h * w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let kernel: Vec<f64> = (0..3 * 2 * k * k).map(|i| ((i * 13 % 7) as f64) * 0.5 - 1.5).collect();
            let bias = vec![0.5, -1.0, 2.0];
            assert_eq!(forward(&g, &input, &kernel, &bias), naive(&g, &input, &kernel, &bias));
        }
    }
}
