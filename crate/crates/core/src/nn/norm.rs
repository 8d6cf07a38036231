use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Batch-norm affine parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BNParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub epsilon: f32,
    /// Fraction of the old running statistic kept at each update.
    pub momentum: f32,
}

impl BNParams {
    pub fn new(c: usize) -> Self {
        BNParams {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            epsilon: 1e-5,
            momentum: 0.9,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` such that eval-mode output is `scale * x + shift`.
    pub fn eval_affine(&self) -> (Vec<f32>, Vec<f32>) {
        let scale: Vec<f32> =
            self.gamma.iter().zip(&self.running_var).map(|(g, v)| g / (v + self.epsilon).sqrt()).collect();
        let shift = self.beta.iter().zip(&self.running_mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
        (scale, shift)
    }
}

/// Saved activations needed by [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub enum BnCache {
    Train { xhat: Tensor, inv_std: Vec<f32> },
    Eval { scale: Vec<f32> },
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub input: Tensor,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

fn check_channels(op: &'static str, p: &BNParams, s: Shape) -> Result<()> {
    if p.channels() != s.c {
        return Err(Error::dim(op, "c", p.channels(), s.c));
    }
    Ok(())
}

/// Eval-mode normalisation with the running statistics.
pub fn batchnorm_eval(input: &Tensor, p: &BNParams) -> Result<Tensor> {
    let s = input.shape();
    check_channels("batchnorm", p, s)?;
    let (scale, shift) = p.eval_affine();
    let mut out = input.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            for v in out.plane_mut(n, c) {
                *v = *v * scale[c] + shift[c];
            }
        }
    }
    Ok(out)
}

/// Train mode normalises with batch statistics and updates the running statistics;
/// eval mode uses the running statistics and leaves `p` untouched.
pub fn batchnorm_forward(input: &Tensor, p: &mut BNParams, train: bool) -> Result<(Tensor, BnCache)> {
    let s = input.shape();
    check_channels("batchnorm", p, s)?;
    if !train {
        let out = batchnorm_eval(input, p)?;
        return Ok((out, BnCache::Eval { scale: p.eval_affine().0 }));
    }

    let m = (s.n * s.plane()) as f64;
    let mut xhat = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let mut inv_std = vec![0.0f32; s.c];
    for c in 0..s.c {
        let mut sum = 0.0f64;
        for n in 0..s.n {
            sum += input.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
        }
        let mean = sum / m;
        let mut sq = 0.0f64;
        for n in 0..s.n {
            sq += input.plane(n, c).iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
        }
        let var = sq / m;
        let istd = 1.0 / (var + p.epsilon as f64).sqrt();
        inv_std[c] = istd as f32;
        for n in 0..s.n {
            let src = input.plane(n, c);
            let xh = xhat.plane_mut(n, c);
            for (d, &v) in xh.iter_mut().zip(src) {
                *d = ((v as f64 - mean) * istd) as f32;
            }
            let o = out.plane_mut(n, c);
            let xh = xhat.plane(n, c);
            for (d, &v) in o.iter_mut().zip(xh) {
                *d = p.gamma[c] * v + p.beta[c];
            }
        }
        let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
        p.running_mean[c] = p.momentum * p.running_mean[c] + (1.0 - p.momentum) * mean as f32;
        p.running_var[c] = p.momentum * p.running_var[c] + (1.0 - p.momentum) * unbiased as f32;
    }
    Ok((out, BnCache::Train { xhat, inv_std }))
}

pub fn batchnorm_backward(p: &BNParams, cache: &BnCache, grad_out: &Tensor) -> Result<BnGrads> {
    let s = grad_out.shape();
    check_channels("batchnorm_backward", p, s)?;
    let mut gin = Tensor::zeros(s);
    let mut ggamma = vec![0.0f32; s.c];
    let mut gbeta = vec![0.0f32; s.c];
    match cache {
        BnCache::Eval { scale } => {
            // Eval-mode is affine with fixed statistics; gamma/beta grads are not needed there.
            for n in 0..s.n {
                for c in 0..s.c {
                    for (d, &g) in gin.plane_mut(n, c).iter_mut().zip(grad_out.plane(n, c)) {
                        *d = g * scale[c];
                    }
                }
            }
        }
        BnCache::Train { xhat, inv_std } => {
            if xhat.shape() != s {
                return Err(Error::dim("batchnorm_backward", "n", xhat.shape().n, s.n));
            }
            let m = (s.n * s.plane()) as f64;
            for c in 0..s.c {
                let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
                for n in 0..s.n {
                    for (&g, &x) in grad_out.plane(n, c).iter().zip(xhat.plane(n, c)) {
                        sum_g += g as f64;
                        sum_gx += g as f64 * x as f64;
                    }
                }
                ggamma[c] = sum_gx as f32;
                gbeta[c] = sum_g as f32;
                let k = p.gamma[c] as f64 * inv_std[c] as f64 / m;
                for n in 0..s.n {
                    let xh = xhat.plane(n, c);
                    let go = grad_out.plane(n, c);
                    for ((d, &g), &x) in gin.plane_mut(n, c).iter_mut().zip(go).zip(xh) {
                        *d = (k * (m * g as f64 - sum_g - x as f64 * sum_gx)) as f32;
                    }
                }
            }
        }
    }
    Ok(BnGrads { input: gin, gamma: ggamma, beta: gbeta })
}
