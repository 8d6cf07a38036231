use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
///
/// Logits are `n x k x 1 x 1` (or any shape whose per-sample size is `k`).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let s = logits.shape();
    if labels.len() != s.n {
        return Err(Error::dim("softmax_cross_entropy", "n", s.n, labels.len()));
    }
    let k = s.c * s.plane();
    let mut grad = Tensor::zeros(s);
    let mut total = 0.0f64;
    let inv_n = 1.0 / s.n as f64;
    for (n, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::invalid("softmax_cross_entropy", format!("label {label} out of range for {k} classes")));
        }
        let row = &logits.data()[n * k..(n + 1) * k];
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
        let log_z = z.ln() + max;
        total += log_z - row[label] as f64;
        let g = &mut grad.data_mut()[n * k..(n + 1) * k];
        for (j, (d, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v as f64 - log_z).exp();
            *d = ((p - if j == label { 1.0 } else { 0.0 }) * inv_n) as f32;
        }
    }
    let loss = (total * inv_n) as f32;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(loss));
    }
    Ok((loss, grad))
}

/// Index of the largest logit per sample.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let s = logits.shape();
    let k = s.c * s.plane();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}
