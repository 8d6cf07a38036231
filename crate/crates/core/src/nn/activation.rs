use crate::error::Result;
use crate::tensor::{check_same_shape, Tensor};

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Gradient gate uses the forward input: positive inputs pass the gradient.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    check_same_shape("relu_backward", input.shape(), grad_out.shape())?;
    let mut g = grad_out.clone();
    for (d, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(g)
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(|v| 1.0 / (1.0 + (-v).exp()))
}

/// Uses the forward output `y`: dy/dx = y (1 - y).
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    check_same_shape("sigmoid_backward", output.shape(), grad_out.shape())?;
    let mut g = grad_out.clone();
    for (d, &y) in g.data_mut().iter_mut().zip(output.data()) {
        *d *= y * (1.0 - y);
    }
    Ok(g)
}
