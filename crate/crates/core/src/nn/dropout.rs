use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inverted dropout. Returns the output and the per-element scale (`None` when identity).
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    rate: f32,
    train: bool,
    rng: &mut R,
) -> Result<(Tensor, Option<Vec<f32>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
    }
    if !train || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f32> = (0..input.len()).map(|_| if rng.random::<f32>() < rate { 0.0 } else { keep }).collect();
    let mut out = input.clone();
    for (v, m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward(mask: Option<&[f32]>, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    if let Some(mask) = mask {
        for (v, m) in g.data_mut().iter_mut().zip(mask) {
            *v *= m;
        }
    }
    g
}
