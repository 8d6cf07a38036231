//! 2x2/stride-2 pooling (odd trailing rows/cols are dropped) and global average pooling.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn pooled_shape(op: &'static str, s: Shape) -> Result<Shape> {
    if s.h < 2 {
        return Err(Error::dim(op, "h", 2, s.h));
    }
    if s.w < 2 {
        return Err(Error::dim(op, "w", 2, s.w));
    }
    Ok(s.with_hw(s.h / 2, s.w / 2))
}

/// Returns the pooled tensor and, per output element, the flat input index of the max.
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let s = input.shape();
    let os = pooled_shape("maxpool2x2", s)?;
    let mut out = Tensor::zeros(os);
    let mut argmax = vec![0u32; os.len()];
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..os.h {
                for j in 0..os.w {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0;
                    for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = input.index(n, c, 2 * i + di, 2 * j + dj);
                        let v = input.data()[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                    let o = out.index(n, c, i, j);
                    out.data_mut()[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2x2_backward(input_shape: Shape, argmax: &[u32], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::dim("maxpool2x2_backward", "n", argmax.len(), grad_out.len()));
    }
    let mut g = Tensor::zeros(input_shape);
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        g.data_mut()[idx as usize] += v;
    }
    Ok(g)
}

pub fn avgpool2x2(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    let os = pooled_shape("avgpool2x2", s)?;
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for i in 0..os.h {
                let r0 = &src[2 * i * s.w..];
                let r1 = &src[(2 * i + 1) * s.w..];
                for j in 0..os.w {
                    dst[i * os.w + j] = 0.25 * (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]);
                }
            }
        }
    }
    Ok(out)
}

pub fn avgpool2x2_backward(input_shape: Shape, grad_out: &Tensor) -> Result<Tensor> {
    let os = pooled_shape("avgpool2x2_backward", input_shape)?;
    if os != grad_out.shape() {
        return Err(Error::dim("avgpool2x2_backward", "h", os.h, grad_out.shape().h));
    }
    let mut g = Tensor::zeros(input_shape);
    for n in 0..os.n {
        for c in 0..os.c {
            let go = grad_out.plane(n, c);
            let gi = g.plane_mut(n, c);
            for i in 0..os.h {
                for j in 0..os.w {
                    let v = 0.25 * go[i * os.w + j];
                    for di in 0..2 {
                        let row = (2 * i + di) * input_shape.w;
                        gi[row + 2 * j] += v;
                        gi[row + 2 * j + 1] += v;
                    }
                }
            }
        }
    }
    Ok(g)
}

/// Mean over the spatial plane; output is `n x c x 1 x 1`.
pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let s = input.shape();
    let inv = 1.0 / s.plane() as f64;
    let data = (0..s.n)
        .flat_map(|n| (0..s.c).map(move |c| (n, c)))
        .map(|(n, c)| (input.plane(n, c).iter().map(|&v| v as f64).sum::<f64>() * inv) as f32)
        .collect();
    Tensor::new(s.with_hw(1, 1), data).expect("gap shape")
}

pub fn global_avg_pool_backward(input_shape: Shape, grad_out: &Tensor) -> Result<Tensor> {
    let gs = grad_out.shape();
    if gs.c != input_shape.c {
        return Err(Error::dim("global_avg_pool_backward", "c", input_shape.c, gs.c));
    }
    if gs.n != input_shape.n {
        return Err(Error::dim("global_avg_pool_backward", "n", input_shape.n, gs.n));
    }
    let inv = 1.0 / input_shape.plane() as f32;
    let mut g = Tensor::zeros(input_shape);
    for n in 0..gs.n {
        for c in 0..gs.c {
            g.plane_mut(n, c).fill(grad_out.data()[n * gs.c + c] * inv);
        }
    }
    Ok(g)
}
