//! Layer graphs: a list of named nodes in topological order, a training-mode
//! forward that records a tape for backward, and a side-effect-free inference pass.

mod exec;
mod state;

pub(crate) use exec::eval_layer;
pub use state::{ParamMut, ParamRole, StateEntry};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BNParams, ConvParams, FcParams};
use crate::shift::{ShiftMode, ShiftParams};
use crate::tensor::Shape;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Input,
    Conv(ConvParams),
    Depthwise(ConvParams),
    BatchNorm(BNParams),
    Relu,
    Sigmoid,
    Shift {
        params: ShiftParams,
        mode: ShiftMode,
    },
    MaxPool2,
    AvgPool2,
    GlobalAvgPool,
    Linear(FcParams),
    Dropout(f32),
    /// Channels `start..start + len` of the single input.
    Slice {
        start: usize,
        len: usize,
    },
    /// Channel concatenation of all inputs, in order.
    Concat,
    Add,
    /// `inputs[0] * inputs[1]`, the second being an `n x c x 1 x 1` gate.
    Scale,
    Identity,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Input => "input",
            Layer::Conv(_) => "conv",
            Layer::Depthwise(_) => "depthwise",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Shift { .. } => "shift",
            Layer::MaxPool2 => "maxpool",
            Layer::AvgPool2 => "avgpool",
            Layer::GlobalAvgPool => "gap",
            Layer::Linear(_) => "linear",
            Layer::Dropout(_) => "dropout",
            Layer::Slice { .. } => "slice",
            Layer::Concat => "concat",
            Layer::Add => "add",
            Layer::Scale => "scale",
            Layer::Identity => "identity",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Layer::Input => Some(0),
            Layer::Concat => None,
            Layer::Add | Layer::Scale => Some(2),
            _ => Some(1),
        }
    }

    /// Learnable scalar count (BN running statistics excluded).
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(p) | Layer::Depthwise(p) => p.param_count(),
            Layer::BatchNorm(p) => 2 * p.channels(),
            Layer::Shift { params, .. } => 2 * params.channels(),
            Layer::Linear(p) => p.param_count(),
            _ => 0,
        }
    }

    /// Per-sample multiply-adds for the given output shape.
    pub(crate) fn madds(&self, out: Shape) -> u64 {
        let spatial = (out.h * out.w) as u64;
        match self {
            Layer::Conv(p) => (p.out_c() * p.in_c() * p.k() * p.k()) as u64 * spatial,
            Layer::Depthwise(p) => (p.out_c() * p.k() * p.k()) as u64 * spatial,
            Layer::Linear(p) => (p.in_features * p.out_features) as u64,
            _ => 0,
        }
    }

    fn output_shape(&self, inputs: &[Shape]) -> Result<Shape> {
        let op = self.kind();
        let first = inputs.first().copied();
        let x = || first.ok_or_else(|| Error::Graph(format!("{op} has no input")));
        match self {
            Layer::Input => Err(Error::Graph("input node cannot be added twice".into())),
            Layer::Conv(p) => {
                let x = x()?;
                if x.c != p.in_c() {
                    return Err(Error::dim("conv", "c", p.in_c(), x.c));
                }
                let (oh, ow) = p.output_hw(x.h, x.w)?;
                Ok(Shape::new(x.n, p.out_c(), oh, ow))
            }
            Layer::Depthwise(p) => {
                let x = x()?;
                if x.c != p.out_c() {
                    return Err(Error::dim("depthwise", "c", p.out_c(), x.c));
                }
                let (oh, ow) = p.output_hw(x.h, x.w)?;
                Ok(Shape::new(x.n, x.c, oh, ow))
            }
            Layer::BatchNorm(p) => {
                let x = x()?;
                if x.c != p.channels() {
                    return Err(Error::dim("batchnorm", "c", p.channels(), x.c));
                }
                Ok(x)
            }
            Layer::Shift { params, mode } => {
                mode.validate()?;
                let x = x()?;
                if x.c != params.channels() {
                    return Err(Error::dim("shift", "c", params.channels(), x.c));
                }
                Ok(x)
            }
            Layer::MaxPool2 | Layer::AvgPool2 => {
                let x = x()?;
                if x.h < 2 || x.w < 2 {
                    return Err(Error::invalid("pool", format!("input {x} too small for 2x2 pooling")));
                }
                Ok(x.with_hw(x.h / 2, x.w / 2))
            }
            Layer::GlobalAvgPool => Ok(x()?.with_hw(1, 1)),
            Layer::Linear(p) => {
                let x = x()?;
                if x.c * x.h * x.w != p.in_features {
                    return Err(Error::dim("linear", "c", p.in_features, x.c * x.h * x.w));
                }
                Ok(Shape::new(x.n, p.out_features, 1, 1))
            }
            Layer::Dropout(rate) => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
                }
                x()
            }
            Layer::Slice { start, len } => {
                let x = x()?;
                if *len == 0 || start + len > x.c {
                    return Err(Error::SplitOutOfRange { first: start + len, channels: x.c });
                }
                Ok(x.with_c(*len))
            }
            Layer::Concat => {
                let x = x()?;
                let mut c = 0;
                for s in inputs {
                    if (s.n, s.h, s.w) != (x.n, x.h, x.w) {
                        let axis = if s.n != x.n {
                            "n"
                        } else if s.h != x.h {
                            "h"
                        } else {
                            "w"
                        };
                        let (e, a) = match axis {
                            "n" => (x.n, s.n),
                            "h" => (x.h, s.h),
                            _ => (x.w, s.w),
                        };
                        return Err(Error::dim("concat", axis, e, a));
                    }
                    c += s.c;
                }
                Ok(x.with_c(c))
            }
            Layer::Add => {
                crate::tensor::check_same_shape("add", inputs[0], inputs[1])?;
                Ok(inputs[0])
            }
            Layer::Scale => {
                let (x, g) = (inputs[0], inputs[1]);
                if g.c != x.c || g.n != x.n || g.h * g.w != 1 {
                    return Err(Error::dim("scale", "c", x.c, g.c));
                }
                Ok(x)
            }
            Layer::Relu | Layer::Sigmoid | Layer::Identity => x(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub layer: Layer,
    pub inputs: Vec<NodeId>,
    grads: Vec<Vec<f32>>,
}

impl Node {
    fn new(name: String, layer: Layer, inputs: Vec<NodeId>) -> Self {
        let grads = state::grad_buffers(&layer);
        Node { name, layer, inputs, grads }
    }
}

/// Multiply-adds and learnable parameters of one forward pass of a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostReport {
    pub madds: u64,
    pub params: u64,
}

impl CostReport {
    /// Floating point operations counted as two per multiply-add.
    pub fn flops(&self) -> u64 {
        2 * self.madds
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    input_shape: Shape,
    output: NodeId,
    tape: Option<exec::Tape>,
    rng: ChaCha8Rng,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.input_shape == other.input_shape && self.output == other.output
    }
}

impl Graph {
    /// Starts a graph whose node 0 is the input. `input` is a single-sample shape
    /// used for build-time validation.
    pub fn new(input: Shape) -> Self {
        Graph {
            nodes: vec![Node::new("input".into(), Layer::Input, vec![])],
            input_shape: input.with_n(1),
            output: 0,
            tape: None,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn set_output(&mut self, id: NodeId) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::Graph(format!("node {id} does not exist")));
        }
        self.output = id;
        Ok(())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.tape = None;
        &mut self.nodes[id]
    }

    /// Swaps the layer of node `id`, resetting its gradient buffers. The new layer
    /// must accept the node's existing inputs.
    pub fn replace_layer(&mut self, id: NodeId, layer: Layer) -> Result<()> {
        let node = &self.nodes[id];
        let shapes = self.shapes_for(self.input_shape)?;
        let inputs: Vec<Shape> = node.inputs.iter().map(|&i| shapes[i]).collect();
        let out = layer.output_shape(&inputs)?;
        if out != shapes[id] {
            return Err(Error::Graph(format!(
                "{}: replacement changes output shape {} -> {out}",
                node.name, shapes[id]
            )));
        }
        let node = &mut self.nodes[id];
        node.grads = state::grad_buffers(&layer);
        node.layer = layer;
        self.tape = None;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Reseeds the generator used by dropout in training-mode forwards.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Appends a node and makes it the output. Shapes are validated against the
    /// declared input shape.
    pub fn add(&mut self, name: impl Into<String>, layer: Layer, inputs: &[NodeId]) -> Result<NodeId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Graph(format!("duplicate node name {name:?}")));
        }
        if let Some(&bad) = inputs.iter().find(|&&i| i >= self.nodes.len()) {
            return Err(Error::Graph(format!("{name}: input {bad} does not exist")));
        }
        match layer.arity() {
            Some(k) if k != inputs.len() => {
                return Err(Error::Graph(format!("{name}: {} takes {k} inputs, got {}", layer.kind(), inputs.len())))
            }
            None if inputs.len() < 2 => {
                return Err(Error::Graph(format!("{name}: concat needs at least 2 inputs")));
            }
            _ => {}
        }
        let shapes = self.shapes_for(self.input_shape)?;
        let in_shapes: Vec<Shape> = inputs.iter().map(|&i| shapes[i]).collect();
        layer.output_shape(&in_shapes).map_err(|e| Error::Graph(format!("{name}: {e}")))?;
        self.nodes.push(Node::new(name, layer, inputs.to_vec()));
        self.output = self.nodes.len() - 1;
        self.tape = None;
        Ok(self.output)
    }

    /// Output shape of every node for a given input shape.
    pub fn shapes_for(&self, input: Shape) -> Result<Vec<Shape>> {
        let mut shapes = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let s = match node.layer {
                Layer::Input => input,
                ref layer => {
                    let ins: Vec<Shape> = node.inputs.iter().map(|&i| shapes[i]).collect();
                    layer.output_shape(&ins)?
                }
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Shape {
        self.shapes_for(self.input_shape).expect("validated at build")[self.output]
    }

    /// Cost of one sample at the declared input resolution.
    pub fn cost(&self) -> CostReport {
        self.cost_for(self.input_shape).expect("validated at build")
    }

    pub fn cost_for(&self, input: Shape) -> Result<CostReport> {
        let shapes = self.shapes_for(input.with_n(1))?;
        let mut report = CostReport::default();
        for (node, s) in self.nodes.iter().zip(&shapes) {
            report.madds += node.layer.madds(*s);
            report.params += node.layer.param_count() as u64;
        }
        Ok(report)
    }

    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(|n| n.layer.param_count()).sum()
    }

    pub fn shift_layers(&self) -> impl Iterator<Item = (&str, &ShiftParams, ShiftMode)> {
        self.nodes.iter().filter_map(|n| match &n.layer {
            Layer::Shift { params, mode } => Some((n.name.as_str(), params, *mode)),
            _ => None,
        })
    }

    pub fn shift_layers_mut(&mut self) -> impl Iterator<Item = (&str, &mut ShiftParams, ShiftMode)> {
        self.tape = None;
        self.nodes.iter_mut().filter_map(|n| match &mut n.layer {
            Layer::Shift { params, mode } => Some((n.name.as_str(), params, *mode)),
            _ => None,
        })
    }

    /// Fraction of shift channels, over all shift layers, whose rounded displacement is zero.
    pub fn shift_sparsity(&self) -> f64 {
        let (zero, total) =
            self.shift_layers().fold((0, 0), |(z, t), (_, sp, _)| (z + sp.unshifted_count(), t + sp.channels()));
        if total == 0 {
            1.0
        } else {
            zero as f64 / total as f64
        }
    }

    pub fn set_shifts_frozen(&mut self, frozen: bool) {
        for (_, sp, _) in self.shift_layers_mut() {
            sp.frozen = frozen;
        }
    }

    /// Replaces the named shift layers with identities.
    pub fn remove_shift_layers<S: AsRef<str>>(&mut self, names: &[S]) -> Result<()> {
        let mut ids = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref();
            let id = self.find(name).ok_or_else(|| Error::Graph(format!("no layer named {name:?}")))?;
            if !matches!(self.nodes[id].layer, Layer::Shift { .. }) {
                return Err(Error::Graph(format!("{name:?} is a {} layer, not a shift", self.nodes[id].layer.kind())));
            }
            ids.push(id);
        }
        for id in ids {
            self.nodes[id].layer = Layer::Identity;
            self.nodes[id].grads.clear();
        }
        self.tape = None;
        Ok(())
    }

    /// Drops identity nodes, rewiring their consumers to the identity's input.
    pub fn compact(&mut self) {
        let mut forward: Vec<NodeId> = (0..self.nodes.len()).collect();
        for id in 0..self.nodes.len() {
            if matches!(self.nodes[id].layer, Layer::Identity) {
                forward[id] = forward[self.nodes[id].inputs[0]];
            }
        }
        let mut new_index = vec![usize::MAX; self.nodes.len()];
        let mut kept = Vec::with_capacity(self.nodes.len());
        for (id, mut node) in std::mem::take(&mut self.nodes).into_iter().enumerate() {
            if matches!(node.layer, Layer::Identity) {
                continue;
            }
            for input in &mut node.inputs {
                *input = new_index[forward[*input]];
            }
            new_index[id] = kept.len();
            kept.push(node);
        }
        self.output = new_index[forward[self.output]];
        self.nodes = kept;
        self.tape = None;
    }

    /// Same graph with nodes stored in a different topological order.
    /// `order[k]` is the old id of the node placed at position `k`.
    pub fn reordered(&self, order: &[NodeId]) -> Result<Graph> {
        let n = self.nodes.len();
        let mut new_index = vec![usize::MAX; n];
        for (pos, &old) in order.iter().enumerate() {
            if old >= n || new_index[old] != usize::MAX {
                return Err(Error::Graph("order is not a permutation of node ids".into()));
            }
            new_index[old] = pos;
        }
        if order.len() != n || order.first() != Some(&0) {
            return Err(Error::Graph("order must be a permutation starting at the input".into()));
        }
        let mut nodes = Vec::with_capacity(n);
        for (pos, &old) in order.iter().enumerate() {
            let mut node = self.nodes[old].clone();
            for input in &mut node.inputs {
                *input = new_index[*input];
                if *input >= pos {
                    return Err(Error::Graph(format!("{} would precede its input", node.name)));
                }
            }
            nodes.push(node);
        }
        Ok(Graph {
            nodes,
            input_shape: self.input_shape,
            output: new_index[self.output],
            tape: None,
            rng: self.rng.clone(),
        })
    }
}
