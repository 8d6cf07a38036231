//! Test-only oracles: naive f64 reference kernels and finite differences.
//! Nothing here shares code with the implementations it checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::conv::ConvParams;
use crate::tensor::Tensor;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error with an absolute floor so exact zeros compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Central difference of `f` at `x` with step `h`.
pub fn fd_check(x: f64, h: f64, f: impl Fn(f64) -> f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Six-nested-loop convolution in f64.
pub fn naive_conv_f64(x: &Tensor, p: &ConvParams) -> Vec<f64> {
    let s = x.shape();
    let ws = p.weight.shape();
    let (oc, k) = (ws.n, ws.h);
    let oh = (s.h + 2 * p.pad - k) / p.stride + 1;
    let ow = (s.w + 2 * p.pad - k) / p.stride + 1;
    let mut out = vec![0.0f64; s.n * oc * oh * ow];
    for n in 0..s.n {
        for co in 0..oc {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = p.bias.as_ref().map_or(0.0, |b| b[co] as f64);
                    for ci in 0..s.c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let ii = (oi * p.stride + ki) as isize - p.pad as isize;
                                let jj = (oj * p.stride + kj) as isize - p.pad as isize;
                                if ii < 0 || jj < 0 || ii >= s.h as isize || jj >= s.w as isize {
                                    continue;
                                }
                                acc +=
                                    x.at(n, ci, ii as usize, jj as usize) as f64 * p.weight.at(co, ci, ki, kj) as f64;
                            }
                        }
                    }
                    out[((n * oc + co) * oh + oi) * ow + oj] = acc;
                }
            }
        }
    }
    out
}

/// Four-neighbour bilinear shift evaluated straight from the interpolation sum, in f64.
pub fn naive_bilinear_f64(x: &Tensor, alpha: &[f64], beta: &[f64]) -> Vec<f64> {
    let s = x.shape();
    let mut out = vec![0.0f64; s.len()];
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..s.h {
                for j in 0..s.w {
                    let (y, xx) = (i as f64 + alpha[c], j as f64 + beta[c]);
                    let (y0, x0) = (y.floor(), xx.floor());
                    let mut acc = 0.0;
                    for ny in [y0, y0 + 1.0] {
                        for mx in [x0, x0 + 1.0] {
                            let wgt = (1.0 - (y - ny).abs()) * (1.0 - (xx - mx).abs());
                            if ny < 0.0 || mx < 0.0 || ny >= s.h as f64 || mx >= s.w as f64 {
                                continue;
                            }
                            acc += wgt * x.at(n, c, ny as usize, mx as usize) as f64;
                        }
                    }
                    out[x.index(n, c, i, j)] = acc;
                }
            }
        }
    }
    out
}
