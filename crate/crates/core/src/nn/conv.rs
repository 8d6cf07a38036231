//! Direct (cross-correlation) convolutions: dense and depthwise.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Weights and geometry of a dense convolution.
///
/// `weight` is laid out `(out_c, in_c, k, k)`; for depthwise use `(c, 1, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Option<Vec<f32>>, stride: usize, pad: usize) -> Result<Self> {
        let s = weight.shape();
        if s.h != s.w || !(1..=7).contains(&s.h) {
            return Err(Error::invalid("conv", format!("kernel must be square with k in 1..=7, got {}x{}", s.h, s.w)));
        }
        if stride == 0 {
            return Err(Error::invalid("conv", "stride must be positive"));
        }
        if let Some(b) = &bias {
            if b.len() != s.n {
                return Err(Error::dim("conv", "bias", s.n, b.len()));
            }
        }
        if weight.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("conv", "weight contains non-finite values"));
        }
        Ok(ConvParams { weight, bias, stride, pad })
    }

    /// He (fan-in scaled Gaussian) initialisation.
    pub fn he<R: Rng + ?Sized>(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_c * k * k) as f32;
        let weight = Tensor::randn(Shape::new(out_c, in_c, k, k), (2.0 / fan_in).sqrt(), rng);
        ConvParams { weight, bias: bias.then(|| vec![0.0; out_c]), stride, pad }
    }

    /// Depthwise He initialisation: one `k x k` filter per channel.
    pub fn he_depthwise<R: Rng + ?Sized>(c: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        let weight = Tensor::randn(Shape::new(c, 1, k, k), (2.0 / (k * k) as f32).sqrt(), rng);
        ConvParams { weight, bias: None, stride, pad: k / 2 }
    }

    pub fn out_c(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_c(&self) -> usize {
        self.weight.shape().c
    }

    pub fn k(&self) -> usize {
        self.weight.shape().h
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.k();
        if h + 2 * self.pad < k {
            return Err(Error::dim("conv", "h", k, h + 2 * self.pad));
        }
        if w + 2 * self.pad < k {
            return Err(Error::dim("conv", "w", k, w + 2 * self.pad));
        }
        Ok(((h + 2 * self.pad - k) / self.stride + 1, (w + 2 * self.pad - k) / self.stride + 1))
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

/// Gradients produced by a convolution backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot_lanes(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    lanes.iter().sum::<f32>() + tail
}

// Valid output-column range [lo, hi) for tap `kj` so that `oj*stride + kj - pad` lands in [0, w).
#[inline]
fn tap_range(out_len: usize, in_len: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let limit = in_len + pad;
    let hi = if limit <= tap { 0 } else { ((limit - tap - 1) / stride + 1).min(out_len) };
    (lo, hi.max(lo))
}

/// One sample of a 1x1 convolution: `out[co] = bias[co] + sum_ci w[co, ci] * x[ci]`
/// over `plane`-long channel planes. Input channels are consumed four at a time so
/// each output plane is loaded and stored once per group.
pub(crate) fn pointwise_sample(w: &[f32], bias: Option<&[f32]>, in_c: usize, plane: usize, x: &[f32], out: &mut [f32]) {
    for (co, o) in out.chunks_exact_mut(plane).enumerate() {
        o.fill(bias.map_or(0.0, |b| b[co]));
        let wrow = &w[co * in_c..(co + 1) * in_c];
        let mut ci = 0;
        while ci + 4 <= in_c {
            let (w0, w1, w2, w3) = (wrow[ci], wrow[ci + 1], wrow[ci + 2], wrow[ci + 3]);
            let x0 = &x[ci * plane..(ci + 1) * plane];
            let x1 = &x[(ci + 1) * plane..(ci + 2) * plane];
            let x2 = &x[(ci + 2) * plane..(ci + 3) * plane];
            let x3 = &x[(ci + 3) * plane..(ci + 4) * plane];
            for ((((v, &a), &b), &c), &d) in o.iter_mut().zip(x0).zip(x1).zip(x2).zip(x3) {
                *v += w0 * a + w1 * b + w2 * c + w3 * d;
            }
            ci += 4;
        }
        for c in ci..in_c {
            let wv = wrow[c];
            for (v, &xv) in o.iter_mut().zip(&x[c * plane..(c + 1) * plane]) {
                *v += wv * xv;
            }
        }
    }
}

pub fn conv2d_forward(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let s = input.shape();
    if s.c != p.in_c() {
        return Err(Error::dim("conv2d", "c", p.in_c(), s.c));
    }
    let (oh, ow) = p.output_hw(s.h, s.w)?;
    let oc = p.out_c();
    let k = p.k();
    let out_shape = Shape::new(s.n, oc, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let w = p.weight.data();
    let pointwise = k == 1 && p.stride == 1 && p.pad == 0;

    if pointwise {
        let (plane, sample_in, sample_out) = (s.h * s.w, s.c * s.h * s.w, oc * s.h * s.w);
        for n in 0..s.n {
            let x = &input.data()[n * sample_in..(n + 1) * sample_in];
            let y = &mut out.data_mut()[n * sample_out..(n + 1) * sample_out];
            pointwise_sample(w, p.bias.as_deref(), s.c, plane, x, y);
        }
        return Ok(out);
    }
    for n in 0..s.n {
        for co in 0..oc {
            let out_plane = out.plane_mut(n, co);
            if let Some(b) = &p.bias {
                out_plane.fill(b[co]);
            }
            for ci in 0..s.c {
                let in_plane = input.plane(n, ci);
                let wbase = (co * s.c + ci) * k * k;
                for ki in 0..k {
                    let (ilo, ihi) = tap_range(oh, s.h, ki, p.stride, p.pad);
                    for kj in 0..k {
                        let wv = w[wbase + ki * k + kj];
                        let (jlo, jhi) = tap_range(ow, s.w, kj, p.stride, p.pad);
                        for oi in ilo..ihi {
                            let ii = oi * p.stride + ki - p.pad;
                            let orow = &mut out_plane[oi * ow..(oi + 1) * ow];
                            let irow = &in_plane[ii * s.w..(ii + 1) * s.w];
                            if p.stride == 1 {
                                let off = jlo + kj - p.pad;
                                for (o, &x) in orow[jlo..jhi].iter_mut().zip(&irow[off..]) {
                                    *o += wv * x;
                                }
                            } else {
                                for oj in jlo..jhi {
                                    orow[oj] += wv * irow[oj * p.stride + kj - p.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_grad_out(op: &'static str, expected: Shape, g: &Tensor) -> Result<()> {
    let gs = g.shape();
    for (axis, x, y) in
        [("n", expected.n, gs.n), ("c", expected.c, gs.c), ("h", expected.h, gs.h), ("w", expected.w, gs.w)]
    {
        if x != y {
            return Err(Error::dim(op, axis, x, y));
        }
    }
    Ok(())
}

pub fn conv2d_backward(input: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    let s = input.shape();
    if s.c != p.in_c() {
        return Err(Error::dim("conv2d_backward", "c", p.in_c(), s.c));
    }
    let (oh, ow) = p.output_hw(s.h, s.w)?;
    let oc = p.out_c();
    check_grad_out("conv2d_backward", Shape::new(s.n, oc, oh, ow), grad_out)?;
    let k = p.k();
    let w = p.weight.data();
    let mut gin = Tensor::zeros(s);
    let mut gw = vec![0.0f64; p.weight.len()];
    let mut gb = vec![0.0f64; oc];
    let pointwise = k == 1 && p.stride == 1 && p.pad == 0;

    if pointwise {
        // Input gradient is a 1x1 convolution of grad_out with the transposed weights.
        let mut wt = vec![0.0f32; w.len()];
        for co in 0..oc {
            for ci in 0..s.c {
                wt[ci * oc + co] = w[co * s.c + ci];
            }
        }
        let plane = s.h * s.w;
        for n in 0..s.n {
            let g = &grad_out.data()[n * oc * plane..(n + 1) * oc * plane];
            let gi = &mut gin.data_mut()[n * s.c * plane..(n + 1) * s.c * plane];
            pointwise_sample(&wt, None, oc, plane, g, gi);
            for co in 0..oc {
                let g_plane = &g[co * plane..(co + 1) * plane];
                gb[co] += g_plane.iter().map(|&v| v as f64).sum::<f64>();
                for ci in 0..s.c {
                    gw[co * s.c + ci] += dot_lanes(input.plane(n, ci), g_plane) as f64;
                }
            }
        }
    }
    for n in (0..s.n).filter(|_| !pointwise) {
        for co in 0..oc {
            let g_plane = grad_out.plane(n, co);
            gb[co] += g_plane.iter().map(|&v| v as f64).sum::<f64>();
            for ci in 0..s.c {
                let in_plane = input.plane(n, ci);
                let wbase = (co * s.c + ci) * k * k;
                let gin_plane = gin.plane_mut(n, ci);
                for ki in 0..k {
                    let (ilo, ihi) = tap_range(oh, s.h, ki, p.stride, p.pad);
                    for kj in 0..k {
                        let wv = w[wbase + ki * k + kj];
                        let (jlo, jhi) = tap_range(ow, s.w, kj, p.stride, p.pad);
                        let mut acc = 0.0f32;
                        for oi in ilo..ihi {
                            let ii = oi * p.stride + ki - p.pad;
                            let grow = &g_plane[oi * ow..(oi + 1) * ow];
                            for oj in jlo..jhi {
                                let jj = oj * p.stride + kj - p.pad;
                                let g = grow[oj];
                                acc += g * in_plane[ii * s.w + jj];
                                gin_plane[ii * s.w + jj] += wv * g;
                            }
                        }
                        gw[wbase + ki * k + kj] += acc as f64;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gin,
        weight: gw.into_iter().map(|v| v as f32).collect(),
        bias: p.bias.as_ref().map(|_| gb.into_iter().map(|v| v as f32).collect()),
    })
}

/// Per-channel convolution; `p.weight` has shape `(c, 1, k, k)`.
pub fn depthwise_forward(input: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let s = input.shape();
    let ws = p.weight.shape();
    if ws.c != 1 {
        return Err(Error::dim("depthwise", "weight.in_c", 1, ws.c));
    }
    if s.c != ws.n {
        return Err(Error::dim("depthwise", "c", ws.n, s.c));
    }
    let (oh, ow) = p.output_hw(s.h, s.w)?;
    let mut out = Tensor::zeros(s.with_hw(oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let in_plane = input.plane(n, c);
            let out_plane = out.plane_mut(n, c);
            depthwise_plane(in_plane, s.h, s.w, p, c, out_plane, oh, ow);
        }
    }
    Ok(out)
}

/// Row-blocked depthwise kernel for one plane; shared with the benchmark harness.
#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_plane(
    in_plane: &[f32],
    h: usize,
    w: usize,
    p: &ConvParams,
    c: usize,
    out_plane: &mut [f32],
    oh: usize,
    ow: usize,
) {
    let k = p.k();
    let wt = &p.weight.data()[c * k * k..(c + 1) * k * k];
    let bias = p.bias.as_ref().map_or(0.0, |b| b[c]);
    out_plane.fill(bias);
    for ki in 0..k {
        let (ilo, ihi) = tap_range(oh, h, ki, p.stride, p.pad);
        for oi in ilo..ihi {
            let ii = oi * p.stride + ki - p.pad;
            let irow = &in_plane[ii * w..(ii + 1) * w];
            let orow = &mut out_plane[oi * ow..(oi + 1) * ow];
            for kj in 0..k {
                let wv = wt[ki * k + kj];
                let (jlo, jhi) = tap_range(ow, w, kj, p.stride, p.pad);
                if p.stride == 1 {
                    let off = jlo + kj - p.pad;
                    for (o, &x) in orow[jlo..jhi].iter_mut().zip(&irow[off..]) {
                        *o += wv * x;
                    }
                } else {
                    for oj in jlo..jhi {
                        orow[oj] += wv * irow[oj * p.stride + kj - p.pad];
                    }
                }
            }
        }
    }
}

pub fn depthwise_backward(input: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    let s = input.shape();
    let ws = p.weight.shape();
    if ws.c != 1 || s.c != ws.n {
        return Err(Error::dim("depthwise_backward", "c", ws.n, s.c));
    }
    let (oh, ow) = p.output_hw(s.h, s.w)?;
    check_grad_out("depthwise_backward", s.with_hw(oh, ow), grad_out)?;
    let k = p.k();
    let wt = p.weight.data();
    let mut gin = Tensor::zeros(s);
    let mut gw = vec![0.0f64; p.weight.len()];
    let mut gb = vec![0.0f64; s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let in_plane = input.plane(n, c);
            let g_plane = grad_out.plane(n, c);
            gb[c] += g_plane.iter().map(|&v| v as f64).sum::<f64>();
            let gin_plane = gin.plane_mut(n, c);
            for ki in 0..k {
                let (ilo, ihi) = tap_range(oh, s.h, ki, p.stride, p.pad);
                for kj in 0..k {
                    let wv = wt[c * k * k + ki * k + kj];
                    let (jlo, jhi) = tap_range(ow, s.w, kj, p.stride, p.pad);
                    let mut acc = 0.0f32;
                    for oi in ilo..ihi {
                        let ii = oi * p.stride + ki - p.pad;
                        for oj in jlo..jhi {
                            let jj = oj * p.stride + kj - p.pad;
                            let g = g_plane[oi * ow + oj];
                            acc += g * in_plane[ii * s.w + jj];
                            gin_plane[ii * s.w + jj] += wv * g;
                        }
                    }
                    gw[c * k * k + ki * k + kj] += acc as f64;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gin,
        weight: gw.into_iter().map(|v| v as f32).collect(),
        bias: p.bias.as_ref().map(|_| gb.into_iter().map(|v| v as f32).collect()),
    })
}
