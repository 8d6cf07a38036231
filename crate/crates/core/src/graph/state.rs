use super::{Graph, Layer};
use crate::error::{Error, Result};

/// How the optimizer treats a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Conv and linear weights: subject to weight decay.
    Weight,
    /// Biases and batch-norm affine terms: no weight decay.
    NoDecay,
    /// Shift displacements: regularized only by the displacement penalty.
    Shift,
}

/// Mutable view of one parameter tensor and its gradient.
pub struct ParamMut<'a> {
    pub name: String,
    pub role: ParamRole,
    /// Set for frozen or non-learnable shifts; the optimizer must leave these alone.
    pub frozen: bool,
    pub value: &'a mut [f32],
    pub grad: &'a mut [f32],
}

/// One named tensor of a serialized graph.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub(super) fn grad_buffers(layer: &Layer) -> Vec<Vec<f32>> {
    match layer {
        Layer::Conv(p) | Layer::Depthwise(p) => {
            let mut v = vec![vec![0.0; p.weight.len()]];
            if let Some(b) = &p.bias {
                v.push(vec![0.0; b.len()]);
            }
            v
        }
        Layer::BatchNorm(p) => vec![vec![0.0; p.channels()]; 2],
        Layer::Linear(p) => vec![vec![0.0; p.weight.len()], vec![0.0; p.bias.len()]],
        _ => Vec::new(),
    }
}

impl Graph {
    /// Every trainable tensor with its gradient, in node order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        self.tape = None;
        let mut out = Vec::new();
        for node in &mut self.nodes {
            let name = &node.name;
            let mut grads = node.grads.iter_mut().map(Vec::as_mut_slice);
            match &mut node.layer {
                Layer::Conv(p) | Layer::Depthwise(p) => {
                    out.push(ParamMut {
                        name: format!("{name}.weight"),
                        role: ParamRole::Weight,
                        frozen: false,
                        value: p.weight.data_mut(),
                        grad: grads.next().expect("weight grad"),
                    });
                    if let Some(b) = &mut p.bias {
                        out.push(ParamMut {
                            name: format!("{name}.bias"),
                            role: ParamRole::NoDecay,
                            frozen: false,
                            value: b,
                            grad: grads.next().expect("bias grad"),
                        });
                    }
                }
                Layer::BatchNorm(p) => {
                    out.push(ParamMut {
                        name: format!("{name}.weight"),
                        role: ParamRole::NoDecay,
                        frozen: false,
                        value: &mut p.gamma,
                        grad: grads.next().expect("gamma grad"),
                    });
                    out.push(ParamMut {
                        name: format!("{name}.bias"),
                        role: ParamRole::NoDecay,
                        frozen: false,
                        value: &mut p.beta,
                        grad: grads.next().expect("beta grad"),
                    });
                }
                Layer::Linear(p) => {
                    out.push(ParamMut {
                        name: format!("{name}.weight"),
                        role: ParamRole::Weight,
                        frozen: false,
                        value: &mut p.weight,
                        grad: grads.next().expect("weight grad"),
                    });
                    out.push(ParamMut {
                        name: format!("{name}.bias"),
                        role: ParamRole::NoDecay,
                        frozen: false,
                        value: &mut p.bias,
                        grad: grads.next().expect("bias grad"),
                    });
                }
                Layer::Shift { params, mode } => {
                    let frozen = params.frozen || !mode.is_learnable();
                    out.push(ParamMut {
                        name: format!("{name}.alpha"),
                        role: ParamRole::Shift,
                        frozen,
                        value: &mut params.alpha,
                        grad: &mut params.grad_alpha,
                    });
                    out.push(ParamMut {
                        name: format!("{name}.beta"),
                        role: ParamRole::Shift,
                        frozen,
                        value: &mut params.beta,
                        grad: &mut params.grad_beta,
                    });
                }
                _ => {}
            }
        }
        out
    }

    /// All parameters and batch-norm running statistics, in node order.
    pub fn state_dict(&self) -> Vec<StateEntry> {
        let mut out = Vec::new();
        let mut push =
            |name: String, dims: Vec<usize>, data: &[f32]| out.push(StateEntry { name, dims, data: data.to_vec() });
        for node in &self.nodes {
            let name = &node.name;
            match &node.layer {
                Layer::Conv(p) | Layer::Depthwise(p) => {
                    let s = p.weight.shape();
                    push(format!("{name}.weight"), vec![s.n, s.c, s.h, s.w], p.weight.data());
                    if let Some(b) = &p.bias {
                        push(format!("{name}.bias"), vec![b.len()], b);
                    }
                }
                Layer::BatchNorm(p) => {
                    let c = vec![p.channels()];
                    push(format!("{name}.weight"), c.clone(), &p.gamma);
                    push(format!("{name}.bias"), c.clone(), &p.beta);
                    push(format!("{name}.running_mean"), c.clone(), &p.running_mean);
                    push(format!("{name}.running_var"), c, &p.running_var);
                }
                Layer::Linear(p) => {
                    push(format!("{name}.weight"), vec![p.out_features, p.in_features], &p.weight);
                    push(format!("{name}.bias"), vec![p.out_features], &p.bias);
                }
                Layer::Shift { params, .. } => {
                    let c = vec![params.channels()];
                    push(format!("{name}.alpha"), c.clone(), &params.alpha);
                    push(format!("{name}.beta"), c, &params.beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Overwrites every tensor from `entries`. Names and dimensions must match the
    /// graph exactly; missing or unknown entries are errors.
    pub fn load_state_dict(&mut self, entries: &[StateEntry]) -> Result<()> {
        let expected = self.state_dict();
        if expected.len() != entries.len() {
            return Err(Error::State(format!("expected {} tensors, found {}", expected.len(), entries.len())));
        }
        let mut by_name = std::collections::HashMap::with_capacity(entries.len());
        for e in entries {
            if e.dims.iter().product::<usize>() != e.data.len() {
                return Err(Error::State(format!("{}: dims {:?} do not match data length", e.name, e.dims)));
            }
            if by_name.insert(e.name.as_str(), e).is_some() {
                return Err(Error::State(format!("duplicate tensor {}", e.name)));
            }
        }
        for want in &expected {
            let got =
                by_name.get(want.name.as_str()).ok_or_else(|| Error::State(format!("missing tensor {}", want.name)))?;
            if got.dims != want.dims {
                return Err(Error::State(format!(
                    "{}: expected dims {:?}, found {:?}",
                    want.name, want.dims, got.dims
                )));
            }
            let displacement = got.name.ends_with(".alpha") || got.name.ends_with(".beta");
            if displacement && got.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::State(format!("{}: non-finite displacement", got.name)));
            }
        }
        let lookup = |name: String| by_name[name.as_str()].data.clone();
        for node in &mut self.nodes {
            let name = node.name.clone();
            match &mut node.layer {
                Layer::Conv(p) | Layer::Depthwise(p) => {
                    p.weight.data_mut().copy_from_slice(&lookup(format!("{name}.weight")));
                    if let Some(b) = &mut p.bias {
                        *b = lookup(format!("{name}.bias"));
                    }
                }
                Layer::BatchNorm(p) => {
                    p.gamma = lookup(format!("{name}.weight"));
                    p.beta = lookup(format!("{name}.bias"));
                    p.running_mean = lookup(format!("{name}.running_mean"));
                    p.running_var = lookup(format!("{name}.running_var"));
                }
                Layer::Linear(p) => {
                    p.weight = lookup(format!("{name}.weight"));
                    p.bias = lookup(format!("{name}.bias"));
                }
                Layer::Shift { params, .. } => {
                    params.alpha = lookup(format!("{name}.alpha"));
                    params.beta = lookup(format!("{name}.beta"));
                }
                _ => {}
            }
        }
        self.tape = None;
        Ok(())
    }
}
