//! Architecture builders: CSC-based ShiftResNets, inverted-bottleneck units,
//! FE-Blocks, FE-Net with width multiplier and SE placement, and a small
//! three-stage shift network used for desk-scale experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CostReport, Graph, Layer, NodeId};
use crate::nn::{BNParams, ConvParams, FcParams};
use crate::shift::{grouped_displacements, GroupAssignment, ShiftMode, ShiftParams};
use crate::tensor::Shape;

/// Multiply-adds and parameters of `graph` for one sample of `input`.
pub fn count_cost(graph: &Graph, input: Shape) -> Result<CostReport> {
    graph.cost_for(input)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    /// Expand, spatial op, project.
    Plain,
    /// [`UnitKind::Plain`] plus an identity shortcut.
    Skip,
    /// Expand, spatial op, 2x2 average pool, project.
    Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeMode {
    #[default]
    None,
    /// Gate the projected output of every unit.
    V1,
    /// Gate the expanded features before projection.
    V2,
}

/// The spatial operator placed between the expand and project convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialOp {
    #[default]
    Shift,
    Depthwise {
        kernel: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRounding {
    /// `max(1, round(c * m))`.
    #[default]
    Nearest,
    /// Nearest multiple of 8, at least 8.
    MultipleOf8,
}

impl ChannelRounding {
    pub fn scale(self, channels: usize, multiplier: f32) -> usize {
        let x = channels as f64 * multiplier as f64;
        match self {
            ChannelRounding::Nearest => (x.round() as usize).max(1),
            ChannelRounding::MultipleOf8 => ((x / 8.0 + 0.5).floor() as usize * 8).max(8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitSpec {
    pub kind: UnitKind,
    pub out_c: usize,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeBlockSpec {
    pub n: usize,
    pub out_c: usize,
    pub stride: usize,
    pub t: usize,
}

impl FeBlockSpec {
    /// Channels processed by unit `l` (1-based) for an `in_c`-channel input.
    /// The last unit always covers every channel.
    pub fn unit_channels(&self, l: usize, in_c: usize) -> usize {
        if l >= self.n {
            return in_c;
        }
        in_c * (1 << (l - 1)) / (1 << (self.n - 1))
    }

    fn validate(&self, in_c: usize) -> Result<()> {
        if self.n == 0 || self.n > 16 {
            return Err(Error::invalid("fe_block", format!("unit count {} outside 1..=16", self.n)));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::invalid("fe_block", format!("stride {} not in {{1, 2}}", self.stride)));
        }
        if self.t == 0 || self.out_c == 0 {
            return Err(Error::invalid("fe_block", "expansion and out_c must be positive"));
        }
        if self.n > 1 && in_c < 1 << (self.n - 1) {
            return Err(Error::SplitOutOfRange { first: 1 << (self.n - 1), channels: in_c });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemSpec {
    pub out_c: usize,
    pub stride: usize,
}

fn default_shift_mode() -> ShiftMode {
    ShiftMode::SparseQuantized
}

fn default_cifar_classes() -> usize {
    10
}

fn default_expansion() -> usize {
    6
}

fn default_cifar_size() -> usize {
    32
}

fn default_rgb() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftResNetSpec {
    pub depth: usize,
    #[serde(default = "default_cifar_classes")]
    pub classes: usize,
    #[serde(default = "default_expansion")]
    pub expansion: usize,
    #[serde(default = "default_shift_mode")]
    pub shift_mode: ShiftMode,
    #[serde(default = "default_cifar_size")]
    pub input_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeNetSpec {
    pub width_multiplier: f32,
    pub classes: usize,
    pub se_mode: SeMode,
    pub se_reduction: usize,
    pub shift_mode: ShiftMode,
    pub spatial: SpatialOp,
    pub rounding: ChannelRounding,
    pub stem: StemSpec,
    /// Units between the stem and the first FE-Block.
    pub units: Vec<UnitSpec>,
    pub blocks: Vec<FeBlockSpec>,
    pub head_channels: usize,
    /// Scale the head by `max(1, m)`.
    pub head_scales: bool,
    pub dropout: f32,
    pub in_channels: usize,
    pub input_size: usize,
}

impl Default for FeNetSpec {
    fn default() -> Self {
        FeNetSpec::imagenet(1.0, SeMode::None)
    }
}

impl FeNetSpec {
    /// The ImageNet configuration at 224x224.
    pub fn imagenet(width_multiplier: f32, se_mode: SeMode) -> Self {
        let block = |n, out_c, stride| FeBlockSpec { n, out_c, stride, t: 6 };
        FeNetSpec {
            width_multiplier,
            classes: 1000,
            se_mode,
            se_reduction: 8,
            shift_mode: ShiftMode::SparseQuantized,
            spatial: SpatialOp::Shift,
            rounding: ChannelRounding::Nearest,
            stem: StemSpec { out_c: 16, stride: 2 },
            units: vec![
                UnitSpec { kind: UnitKind::Skip, out_c: 16, t: 4 },
                UnitSpec { kind: UnitKind::Pool, out_c: 32, t: 5 },
            ],
            blocks: vec![block(3, 64, 2), block(4, 128, 2), block(4, 128, 1), block(4, 256, 2), block(3, 256, 1)],
            head_channels: 1380,
            head_scales: true,
            dropout: 0.2,
            in_channels: 3,
            input_size: 224,
        }
    }

    /// 32x32 variant: stride-1 stem, otherwise unchanged.
    pub fn cifar(width_multiplier: f32, classes: usize) -> Self {
        let mut spec = FeNetSpec::imagenet(width_multiplier, SeMode::None);
        spec.stem.stride = 1;
        spec.classes = classes;
        spec.input_size = 32;
        spec
    }

    fn width(&self, c: usize) -> usize {
        self.rounding.scale(c, self.width_multiplier)
    }

    fn head(&self) -> usize {
        if self.head_scales {
            ChannelRounding::Nearest.scale(self.head_channels, self.width_multiplier.max(1.0))
        } else {
            self.head_channels
        }
    }
}

/// Residual CSC network with no downsampling, sized for small synthetic inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiniShiftNetSpec {
    pub in_channels: usize,
    pub input_size: usize,
    pub width: usize,
    pub stages: usize,
    pub expansion: usize,
    pub classes: usize,
    pub shift_mode: ShiftMode,
    pub spatial: SpatialOp,
}

impl Default for MiniShiftNetSpec {
    fn default() -> Self {
        MiniShiftNetSpec {
            in_channels: 2,
            input_size: 12,
            width: 16,
            stages: 3,
            expansion: 3,
            classes: 4,
            shift_mode: ShiftMode::SparseQuantized,
            spatial: SpatialOp::Shift,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ArchSpec {
    ShiftResnet(ShiftResNetSpec),
    FeNet(FeNetSpec),
    MiniShiftNet(MiniShiftNetSpec),
}

impl ArchSpec {
    /// Single-sample input shape at the architecture's native resolution.
    pub fn input_shape(&self) -> Shape {
        match self {
            ArchSpec::ShiftResnet(s) => Shape::new(1, default_rgb(), s.input_size, s.input_size),
            ArchSpec::FeNet(s) => Shape::new(1, s.in_channels, s.input_size, s.input_size),
            ArchSpec::MiniShiftNet(s) => Shape::new(1, s.in_channels, s.input_size, s.input_size),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ArchSpec::ShiftResnet(s) => s.classes,
            ArchSpec::FeNet(s) => s.classes,
            ArchSpec::MiniShiftNet(s) => s.classes,
        }
    }

    pub fn build(&self, seed: u64) -> Result<Graph> {
        match self {
            ArchSpec::ShiftResnet(s) => build_shift_resnet(s, seed),
            ArchSpec::FeNet(s) => build_fe_net(s, seed),
            ArchSpec::MiniShiftNet(s) => build_mini_shift_net(s, seed),
        }
    }

    pub fn shift_mode(&self) -> ShiftMode {
        match self {
            ArchSpec::ShiftResnet(s) => s.shift_mode,
            ArchSpec::FeNet(s) => s.shift_mode,
            ArchSpec::MiniShiftNet(s) => s.shift_mode,
        }
    }

    pub fn set_shift_mode(&mut self, mode: ShiftMode) {
        match self {
            ArchSpec::ShiftResnet(s) => s.shift_mode = mode,
            ArchSpec::FeNet(s) => s.shift_mode = mode,
            ArchSpec::MiniShiftNet(s) => s.shift_mode = mode,
        }
    }
}

/// Appends named subgraphs to a [`Graph`], drawing initial weights from a seeded stream.
///
/// Every method takes the channel count of its input explicitly and returns the
/// id of the subgraph's output node.
pub struct ArchBuilder<'g> {
    graph: &'g mut Graph,
    rng: ChaCha8Rng,
    pub shift_mode: ShiftMode,
    pub spatial: SpatialOp,
}

impl<'g> ArchBuilder<'g> {
    pub fn new(graph: &'g mut Graph, seed: u64, shift_mode: ShiftMode) -> Self {
        ArchBuilder { graph, rng: ChaCha8Rng::seed_from_u64(seed), shift_mode, spatial: SpatialOp::Shift }
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        x: NodeId,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Result<NodeId> {
        let p = ConvParams::he(in_c, out_c, k, stride, k / 2, bias, &mut self.rng);
        self.graph.add(name, Layer::Conv(p), &[x])
    }

    /// Convolution, batch norm and optionally ReLU, named `name`, `name_bn`, `name_relu`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_bn(
        &mut self,
        name: &str,
        x: NodeId,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        relu: bool,
    ) -> Result<NodeId> {
        let y = self.conv(name, x, in_c, out_c, k, stride, false)?;
        let y = self.graph.add(format!("{name}_bn"), Layer::BatchNorm(BNParams::new(out_c)), &[y])?;
        if relu {
            self.graph.add(format!("{name}_relu"), Layer::Relu, &[y])
        } else {
            Ok(y)
        }
    }

    /// A shift layer initialised with the grouped 3x3 pattern, or a depthwise
    /// convolution when the builder's spatial op says so.
    pub fn spatial_op(&mut self, name: &str, x: NodeId, channels: usize) -> Result<NodeId> {
        match self.spatial {
            SpatialOp::Shift => {
                let kernel = match self.shift_mode {
                    ShiftMode::Grouped { kernel } => kernel,
                    _ => 3,
                };
                let params = if channels < kernel * kernel && !self.shift_mode.is_learnable() {
                    ShiftParams::zeros(channels)
                } else {
                    grouped_displacements(channels, kernel, GroupAssignment::EvenPartition)?
                };
                self.graph.add(name, Layer::Shift { params, mode: self.shift_mode }, &[x])
            }
            SpatialOp::Depthwise { kernel } => {
                if kernel % 2 == 0 || kernel == 0 {
                    return Err(Error::InvalidKernel(kernel));
                }
                let p = ConvParams::he_depthwise(channels, kernel, 1, &mut self.rng);
                self.graph.add(name, Layer::Depthwise(p), &[x])
            }
        }
    }

    /// Squeeze-and-excitation gate with hidden width `ceil(c / reduction)`.
    pub fn se_module(&mut self, name: &str, x: NodeId, channels: usize, reduction: usize) -> Result<NodeId> {
        if reduction == 0 {
            return Err(Error::invalid("se_module", "reduction must be positive"));
        }
        let hidden = channels.div_ceil(reduction);
        let g = self.graph.add(format!("{name}.gap"), Layer::GlobalAvgPool, &[x])?;
        let fc1 = FcParams::he(channels, hidden, &mut self.rng);
        let g = self.graph.add(format!("{name}.fc1"), Layer::Linear(fc1), &[g])?;
        let g = self.graph.add(format!("{name}.relu"), Layer::Relu, &[g])?;
        let fc2 = FcParams::he(hidden, channels, &mut self.rng);
        let g = self.graph.add(format!("{name}.fc2"), Layer::Linear(fc2), &[g])?;
        let g = self.graph.add(format!("{name}.sigmoid"), Layer::Sigmoid, &[g])?;
        self.graph.add(format!("{name}.scale"), Layer::Scale, &[x, g])
    }

    /// Inverted bottleneck unit. Shift layers are named `{name}.shift`.
    pub fn ib_unit(
        &mut self,
        name: &str,
        x: NodeId,
        unit: UnitSpec,
        in_c: usize,
        se: SeMode,
        se_reduction: usize,
    ) -> Result<NodeId> {
        let UnitSpec { kind, out_c, t } = unit;
        if t == 0 || in_c == 0 || out_c == 0 {
            return Err(Error::invalid("ib_unit", format!("{name}: channels and expansion must be positive")));
        }
        if kind == UnitKind::Skip && in_c != out_c {
            return Err(Error::invalid(
                "ib_unit",
                format!("{name}: skip unit needs in_c == out_c, got {in_c} -> {out_c}"),
            ));
        }
        let mid = in_c * t;
        let mut y = self.conv_bn(&format!("{name}.expand"), x, in_c, mid, 1, 1, true)?;
        y = self.spatial_op(&format!("{name}.shift"), y, mid)?;
        if kind == UnitKind::Pool {
            y = self.graph.add(format!("{name}.pool"), Layer::AvgPool2, &[y])?;
        }
        if se == SeMode::V2 {
            y = self.se_module(&format!("{name}.se"), y, mid, se_reduction)?;
        }
        y = self.conv_bn(&format!("{name}.project"), y, mid, out_c, 1, 1, false)?;
        if se == SeMode::V1 {
            y = self.se_module(&format!("{name}.se"), y, out_c, se_reduction)?;
        }
        if kind == UnitKind::Skip {
            y = self.graph.add(format!("{name}.add"), Layer::Add, &[x, y])?;
        }
        Ok(y)
    }

    /// FE-Block: unit `l < n` updates the leading channel slice and carries the rest;
    /// unit `n` spans all channels and changes width (stride 1) or resolution (stride 2).
    pub fn fe_block(
        &mut self,
        name: &str,
        x: NodeId,
        spec: FeBlockSpec,
        in_c: usize,
        se: SeMode,
        se_reduction: usize,
    ) -> Result<NodeId> {
        spec.validate(in_c)?;
        let mut y = x;
        for l in 1..spec.n {
            let k = spec.unit_channels(l, in_c);
            let unit = format!("{name}.unit{l}");
            let head = self.graph.add(format!("{unit}.split"), Layer::Slice { start: 0, len: k }, &[y])?;
            let tail = self.graph.add(format!("{unit}.rest"), Layer::Slice { start: k, len: in_c - k }, &[y])?;
            let skip = UnitSpec { kind: UnitKind::Skip, out_c: k, t: spec.t };
            let head = self.ib_unit(&unit, head, skip, k, se, se_reduction)?;
            y = self.graph.add(format!("{unit}.concat"), Layer::Concat, &[head, tail])?;
        }
        let last = UnitSpec {
            kind: if spec.stride == 2 { UnitKind::Pool } else { UnitKind::Plain },
            out_c: spec.out_c,
            t: spec.t,
        };
        self.ib_unit(&format!("{name}.unit{}", spec.n), y, last, in_c, se, se_reduction)
    }

    /// Residual CSC module over `in_c` channels.
    pub fn csc_module(&mut self, name: &str, x: NodeId, in_c: usize, expansion: usize) -> Result<NodeId> {
        self.csc_block(name, x, in_c, in_c, expansion, 1)
    }

    fn csc_block(
        &mut self,
        name: &str,
        x: NodeId,
        in_c: usize,
        out_c: usize,
        expansion: usize,
        stride: usize,
    ) -> Result<NodeId> {
        if in_c == 0 || expansion == 0 {
            return Err(Error::invalid("csc_module", format!("{name}: channels and expansion must be positive")));
        }
        let mid = in_c * expansion;
        let y = self.conv_bn(&format!("{name}.expand"), x, in_c, mid, 1, 1, true)?;
        let y = self.spatial_op(&format!("{name}.shift"), y, mid)?;
        let y = self.conv_bn(&format!("{name}.project"), y, mid, out_c, 1, stride, false)?;
        let shortcut = if in_c != out_c || stride != 1 {
            self.conv_bn(&format!("{name}.shortcut"), x, in_c, out_c, 1, stride, false)?
        } else {
            x
        };
        let y = self.graph.add(format!("{name}.add"), Layer::Add, &[shortcut, y])?;
        self.graph.add(format!("{name}.relu"), Layer::Relu, &[y])
    }
}

pub fn build_shift_resnet(spec: &ShiftResNetSpec, seed: u64) -> Result<Graph> {
    if !matches!(spec.depth, 20 | 56) {
        return Err(Error::UnsupportedDepth(spec.depth));
    }
    let per_stage = (spec.depth - 2) / 6;
    let mut g = Graph::new(Shape::new(1, default_rgb(), spec.input_size, spec.input_size));
    let mut b = ArchBuilder::new(&mut g, seed, spec.shift_mode);
    let x = b.graph.input();
    let mut y = b.conv_bn("stem", x, 3, 16, 3, 1, true)?;
    let mut c = 16;
    for (stage, width) in [16usize, 32, 64].into_iter().enumerate() {
        for idx in 1..=per_stage {
            let stride = if stage > 0 && idx == 1 { 2 } else { 1 };
            y = b.csc_block(&format!("block{}_{idx}", stage + 1), y, c, width, spec.expansion, stride)?;
            c = width;
        }
    }
    let y = b.graph.add("gap", Layer::GlobalAvgPool, &[y])?;
    let fc = FcParams::he(c, spec.classes, &mut b.rng);
    b.graph.add("fc", Layer::Linear(fc), &[y])?;
    Ok(g)
}

pub fn build_fe_net(spec: &FeNetSpec, seed: u64) -> Result<Graph> {
    if !(spec.width_multiplier.is_finite() && spec.width_multiplier > 0.0) {
        return Err(Error::invalid("fe_net", format!("width multiplier {} must be positive", spec.width_multiplier)));
    }
    if !matches!(spec.stem.stride, 1 | 2) {
        return Err(Error::invalid("fe_net", "stem stride must be 1 or 2"));
    }
    let mut g = Graph::new(Shape::new(1, spec.in_channels, spec.input_size, spec.input_size));
    let mut b = ArchBuilder::new(&mut g, seed, spec.shift_mode);
    b.spatial = spec.spatial;
    let x = b.graph.input();
    let mut c = spec.width(spec.stem.out_c);
    let mut y = b.conv_bn("stem", x, spec.in_channels, c, 3, spec.stem.stride, true)?;
    for (i, unit) in spec.units.iter().enumerate() {
        let out_c = spec.width(unit.out_c);
        let unit = UnitSpec { out_c, ..*unit };
        y = b.ib_unit(&format!("unit{}", i + 1), y, unit, c, spec.se_mode, spec.se_reduction)?;
        c = out_c;
    }
    for (i, block) in spec.blocks.iter().enumerate() {
        let out_c = spec.width(block.out_c);
        let block = FeBlockSpec { out_c, ..*block };
        y = b.fe_block(&format!("block{}", i + 1), y, block, c, spec.se_mode, spec.se_reduction)?;
        c = out_c;
    }
    let head = spec.head();
    y = b.conv_bn("head", y, c, head, 1, 1, true)?;
    y = b.graph.add("gap", Layer::GlobalAvgPool, &[y])?;
    if spec.dropout > 0.0 {
        y = b.graph.add("dropout", Layer::Dropout(spec.dropout), &[y])?;
    }
    b.conv("classifier", y, head, spec.classes, 1, 1, true)?;
    Ok(g)
}

pub fn build_mini_shift_net(spec: &MiniShiftNetSpec, seed: u64) -> Result<Graph> {
    if spec.stages == 0 || spec.width == 0 || spec.classes < 2 {
        return Err(Error::invalid("mini_shift_net", "need at least one stage, positive width and two classes"));
    }
    let mut g = Graph::new(Shape::new(1, spec.in_channels, spec.input_size, spec.input_size));
    let mut b = ArchBuilder::new(&mut g, seed, spec.shift_mode);
    b.spatial = spec.spatial;
    let x = b.graph.input();
    let mut y = b.conv_bn("stem", x, spec.in_channels, spec.width, 1, 1, true)?;
    for stage in 1..=spec.stages {
        y = b.csc_module(&format!("block{stage}_1"), y, spec.width, spec.expansion)?;
    }
    let y = b.graph.add("gap", Layer::GlobalAvgPool, &[y])?;
    let fc = FcParams::he(spec.width, spec.classes, &mut b.rng);
    b.graph.add("fc", Layer::Linear(fc), &[y])?;
    Ok(g)
}
