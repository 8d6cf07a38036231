use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Fully connected layer over the flattened `c*h*w` features of each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    /// Row-major `(out, in)`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub in_features: usize,
    pub out_features: usize,
}

impl FcParams {
    pub fn he<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let w = Tensor::randn(Shape::new(out_features, in_features, 1, 1), (2.0 / in_features as f32).sqrt(), rng);
        FcParams { weight: w.into_vec(), bias: vec![0.0; out_features], in_features, out_features }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub fn fc_forward(input: &Tensor, p: &FcParams) -> Result<Tensor> {
    let s = input.shape();
    let f = s.c * s.plane();
    if f != p.in_features {
        return Err(Error::dim("fc", "c", p.in_features, f));
    }
    let mut out = vec![0.0f32; s.n * p.out_features];
    for n in 0..s.n {
        let x = &input.data()[n * f..(n + 1) * f];
        for o in 0..p.out_features {
            let row = &p.weight[o * f..(o + 1) * f];
            let dot: f32 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            out[n * p.out_features + o] = dot + p.bias[o];
        }
    }
    Tensor::new(Shape::new(s.n, p.out_features, 1, 1), out)
}

#[derive(Debug, Clone)]
pub struct FcGrads {
    pub input: Tensor,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

pub fn fc_backward(input: &Tensor, p: &FcParams, grad_out: &Tensor) -> Result<FcGrads> {
    let s = input.shape();
    let f = s.c * s.plane();
    if f != p.in_features {
        return Err(Error::dim("fc_backward", "c", p.in_features, f));
    }
    let gs = grad_out.shape();
    if gs.n != s.n || gs.c * gs.plane() != p.out_features {
        return Err(Error::dim("fc_backward", "c", p.out_features, gs.c * gs.plane()));
    }
    let mut gin = Tensor::zeros(s);
    let mut gw = vec![0.0f32; p.weight.len()];
    let mut gb = vec![0.0f32; p.out_features];
    for n in 0..s.n {
        let x = &input.data()[n * f..(n + 1) * f];
        let go = &grad_out.data()[n * p.out_features..(n + 1) * p.out_features];
        let gi = &mut gin.data_mut()[n * f..(n + 1) * f];
        for (o, &g) in go.iter().enumerate() {
            gb[o] += g;
            let row = &p.weight[o * f..(o + 1) * f];
            let grow = &mut gw[o * f..(o + 1) * f];
            for k in 0..f {
                grow[k] += g * x[k];
                gi[k] += g * row[k];
            }
        }
    }
    Ok(FcGrads { input: gin, weight: gw, bias: gb })
}

/// Channel-wise gating `x[n,c,:,:] * gate[n,c]` used by squeeze-and-excitation.
pub fn channel_scale(x: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let (s, gs) = (x.shape(), gate.shape());
    if gs.n != s.n || gs.c != s.c || gs.plane() != 1 {
        return Err(Error::dim("channel_scale", "c", s.c, gs.c));
    }
    let mut out = x.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let g = gate.data()[n * s.c + c];
            for v in out.plane_mut(n, c) {
                *v *= g;
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_gate)`.
pub fn channel_scale_backward(x: &Tensor, gate: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = x.shape();
    let gx = channel_scale(grad_out, gate)?;
    let mut gg = Tensor::zeros(gate.shape());
    for n in 0..s.n {
        for c in 0..s.c {
            let dot: f64 = x.plane(n, c).iter().zip(grad_out.plane(n, c)).map(|(&a, &b)| a as f64 * b as f64).sum();
            gg.data_mut()[n * s.c + c] = dot as f32;
        }
    }
    Ok((gx, gg))
}
