use super::{Graph, Layer};
use crate::error::{Error, Result};
use crate::nn::{self, BnCache};
use crate::shift::{self, ShiftMode};
use crate::tensor::{channel_slice, Tensor};

#[derive(Debug, Clone)]
enum Aux {
    None,
    Bn(BnCache),
    MaxPool(Vec<u32>),
    Dropout(Option<Vec<f32>>),
}

/// Activations recorded by a training-mode forward.
#[derive(Debug, Clone)]
pub(super) struct Tape {
    outputs: Vec<Tensor>,
    aux: Vec<Aux>,
}

fn concat_all(inputs: &[&Tensor]) -> Result<Tensor> {
    let mut out = inputs[0].clone();
    for t in &inputs[1..] {
        out = crate::tensor::channel_concat(&out, t)?;
    }
    Ok(out)
}

/// Stateless layer evaluation shared by training and inference forwards.
fn eval_stateless(layer: &Layer, x: &[&Tensor]) -> Result<Tensor> {
    Ok(match layer {
        Layer::Conv(p) => nn::conv2d_forward(x[0], p)?,
        Layer::Depthwise(p) => nn::depthwise_forward(x[0], p)?,
        Layer::Relu => nn::relu_forward(x[0]),
        Layer::Sigmoid => nn::sigmoid(x[0]),
        Layer::Shift { params, mode } => shift::shift_forward(x[0], params, *mode)?,
        Layer::AvgPool2 => nn::avgpool2x2(x[0])?,
        Layer::GlobalAvgPool => nn::global_avg_pool(x[0]),
        Layer::Linear(p) => nn::fc_forward(x[0], p)?,
        Layer::Slice { start, len } => channel_slice(x[0], *start, *len)?,
        Layer::Concat => concat_all(x)?,
        Layer::Add => x[0].add(x[1])?,
        Layer::Scale => nn::channel_scale(x[0], x[1])?,
        Layer::Identity => x[0].clone(),
        Layer::Input | Layer::BatchNorm(_) | Layer::MaxPool2 | Layer::Dropout(_) => {
            unreachable!("stateful layer {} handled by caller", layer.kind())
        }
    })
}

/// Eval-mode evaluation of any non-input layer.
pub(crate) fn eval_layer(layer: &Layer, x: &[&Tensor]) -> Result<Tensor> {
    match layer {
        Layer::Input => Err(Error::Graph("input node has no evaluation".into())),
        Layer::BatchNorm(p) => nn::batchnorm_eval(x[0], p),
        Layer::MaxPool2 => Ok(nn::maxpool2x2(x[0])?.0),
        Layer::Dropout(_) => Ok(x[0].clone()),
        layer => eval_stateless(layer, x),
    }
}

fn check_input(g: &Graph, x: &Tensor) -> Result<()> {
    let (want, got) = (g.input_shape, x.shape());
    if want.c != got.c {
        return Err(Error::dim("graph_input", "c", want.c, got.c));
    }
    g.shapes_for(got)?;
    Ok(())
}

impl Graph {
    /// Eval-mode forward. Never mutates parameters or running statistics.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        check_input(self, x)?;
        let mut outputs: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        let mut remaining = self.consumer_counts();
        for (id, node) in self.nodes.iter().enumerate() {
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| outputs[i].as_ref().expect("input alive")).collect();
            let out = match &node.layer {
                Layer::Input => x.clone(),
                layer => eval_layer(layer, &inputs)?,
            };
            outputs.push(Some(out));
            for &i in &node.inputs {
                remaining[i] -= 1;
                if remaining[i] == 0 && i != self.output {
                    outputs[i] = None;
                }
            }
            if id == self.output {
                break;
            }
        }
        Ok(outputs[self.output].take().expect("output computed"))
    }

    pub(crate) fn consumer_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.nodes.len()];
        for node in &self.nodes {
            for &i in &node.inputs {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Training-mode forward: batch statistics, active dropout, and a recorded tape.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        check_input(self, x)?;
        self.tape = None;
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut aux = Vec::with_capacity(self.nodes.len());
        for node in self.nodes.iter_mut() {
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &outputs[i]).collect();
            let (out, a) = match &mut node.layer {
                Layer::Input => (x.clone(), Aux::None),
                Layer::BatchNorm(p) => {
                    let (y, cache) = nn::batchnorm_forward(inputs[0], p, true)?;
                    (y, Aux::Bn(cache))
                }
                Layer::MaxPool2 => {
                    let (y, arg) = nn::maxpool2x2(inputs[0])?;
                    (y, Aux::MaxPool(arg))
                }
                Layer::Dropout(rate) => {
                    let (y, mask) = nn::dropout(inputs[0], *rate, true, &mut self.rng)?;
                    (y, Aux::Dropout(mask))
                }
                layer => (eval_stateless(layer, &inputs)?, Aux::None),
            };
            outputs.push(out);
            aux.push(a);
        }
        let y = outputs[self.output].clone();
        self.tape = Some(Tape { outputs, aux });
        Ok(y)
    }

    /// Mean cross-entropy of a training-mode forward. Returns `(loss, logits, grad_logits)`.
    pub fn forward_loss(&mut self, x: &Tensor, labels: &[usize]) -> Result<(f32, Tensor, Tensor)> {
        let logits = self.forward_train(x)?;
        let (loss, grad) = nn::softmax_cross_entropy(&logits, labels)?;
        Ok((loss, logits, grad))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            for g in &mut node.grads {
                g.fill(0.0);
            }
            if let Layer::Shift { params, .. } = &mut node.layer {
                params.zero_grad();
            }
        }
    }

    /// Back-propagates `grad_output` through the last recorded forward, accumulating
    /// parameter gradients. Displacement gradients are produced only by learnable,
    /// unfrozen shift layers.
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<()> {
        let tape = self.tape.take().ok_or(Error::BackwardBeforeForward)?;
        let result = self.backward_with(&tape, grad_output);
        self.tape = Some(tape);
        result
    }

    fn backward_with(&mut self, tape: &Tape, grad_output: &Tensor) -> Result<()> {
        let out_shape = tape.outputs[self.output].shape();
        crate::tensor::check_same_shape("backward", out_shape, grad_output.shape())?;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[self.output] = Some(grad_output.clone());

        for id in (1..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &mut self.nodes[id];
            let x: Vec<&Tensor> = node.inputs.iter().map(|&i| &tape.outputs[i]).collect();
            let input_grads: Vec<Tensor> = match &mut node.layer {
                Layer::Input => unreachable!("input is node 0"),
                Layer::Conv(p) => {
                    let cg = nn::conv2d_backward(x[0], p, &g)?;
                    accumulate(&mut node.grads[0], &cg.weight);
                    if let Some(b) = &cg.bias {
                        accumulate(&mut node.grads[1], b);
                    }
                    vec![cg.input]
                }
                Layer::Depthwise(p) => {
                    let cg = nn::depthwise_backward(x[0], p, &g)?;
                    accumulate(&mut node.grads[0], &cg.weight);
                    if let Some(b) = &cg.bias {
                        accumulate(&mut node.grads[1], b);
                    }
                    vec![cg.input]
                }
                Layer::BatchNorm(p) => {
                    let Aux::Bn(cache) = &tape.aux[id] else { unreachable!() };
                    let bg = nn::batchnorm_backward(p, cache, &g)?;
                    accumulate(&mut node.grads[0], &bg.gamma);
                    accumulate(&mut node.grads[1], &bg.beta);
                    vec![bg.input]
                }
                Layer::Relu => vec![nn::relu_backward(x[0], &g)?],
                Layer::Sigmoid => vec![nn::sigmoid_backward(&tape.outputs[id], &g)?],
                Layer::Shift { params, mode } => {
                    if mode.is_learnable() {
                        shift::shift_backward_params(x[0], &g, params)?;
                    }
                    let gi = match mode {
                        ShiftMode::ActiveBilinear => shift::shift_bilinear_backward_input(params, &g)?,
                        _ => shift::shift_backward_input(params, &g)?,
                    };
                    vec![gi]
                }
                Layer::MaxPool2 => {
                    let Aux::MaxPool(arg) = &tape.aux[id] else { unreachable!() };
                    vec![nn::maxpool2x2_backward(x[0].shape(), arg, &g)?]
                }
                Layer::AvgPool2 => vec![nn::avgpool2x2_backward(x[0].shape(), &g)?],
                Layer::GlobalAvgPool => vec![nn::global_avg_pool_backward(x[0].shape(), &g)?],
                Layer::Linear(p) => {
                    let fg = nn::fc_backward(x[0], p, &g)?;
                    accumulate(&mut node.grads[0], &fg.weight);
                    accumulate(&mut node.grads[1], &fg.bias);
                    vec![fg.input]
                }
                Layer::Dropout(_) => {
                    let Aux::Dropout(mask) = &tape.aux[id] else { unreachable!() };
                    vec![nn::dropout_backward(mask.as_deref(), &g)]
                }
                Layer::Slice { start, len } => {
                    let (start, len) = (*start, *len);
                    let s = x[0].shape();
                    let mut gi = Tensor::zeros(s);
                    let plane = s.plane();
                    for n in 0..s.n {
                        let dst = (n * s.c + start) * plane;
                        let src = n * len * plane;
                        gi.data_mut()[dst..dst + len * plane].copy_from_slice(&g.data()[src..src + len * plane]);
                    }
                    vec![gi]
                }
                Layer::Concat => {
                    let mut start = 0;
                    let mut parts = Vec::with_capacity(x.len());
                    for t in &x {
                        let c = t.shape().c;
                        parts.push(channel_slice(&g, start, c)?);
                        start += c;
                    }
                    parts
                }
                Layer::Add => vec![g.clone(), g],
                Layer::Scale => {
                    let (gx, gg) = nn::channel_scale_backward(x[0], x[1], &g)?;
                    vec![gx, gg]
                }
                Layer::Identity => vec![g],
            };
            let inputs = self.nodes[id].inputs.clone();
            for (&i, gi) in inputs.iter().zip(input_grads) {
                if i == 0 {
                    continue;
                }
                match &mut grads[i] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot => *slot = Some(gi),
                }
            }
        }
        Ok(())
    }
}

fn accumulate(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
