//! Kernel micro-benchmarks and per-operator runtime decomposition of eval-mode graphs.
//!
//! Shift kernels run in place: a channel with displacement `(0, 0)` is skipped
//! without touching memory, so the cost of a shift layer scales with the number
//! of shifted channels.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::data::DIRECTIONS;
use crate::error::{Error, Result};
use crate::graph::{eval_layer, Graph, Layer};
use crate::nn::conv::{depthwise_plane, pointwise_sample};
use crate::nn::{conv2d_forward, depthwise_forward, ConvParams};
use crate::shift::{kernels::shift_plane_in_place, shift_integer, shift_integer_in_place, ShiftMode};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    DenseShift,
    SparseShift { sparsity: f64 },
    DepthwiseConv { k: usize },
    PointwiseConv,
}

impl Kernel {
    pub fn label(&self) -> String {
        match self {
            Kernel::DenseShift => "dense_shift".into(),
            Kernel::SparseShift { .. } => "sparse_shift".into(),
            Kernel::DepthwiseConv { k } => format!("depthwise{k}x{k}"),
            Kernel::PointwiseConv => "pointwise".into(),
        }
    }

    pub fn sparsity(&self) -> f64 {
        match self {
            Kernel::SparseShift { sparsity } => *sparsity,
            _ => 0.0,
        }
    }
}

fn default_warmup() -> usize {
    2
}

fn default_threads() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCase {
    pub kernel: Kernel,
    pub shape: Shape,
    pub runs: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Samples of the batch are split across this many threads.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

impl KernelCase {
    pub fn new(kernel: Kernel, shape: Shape, runs: usize) -> Self {
        KernelCase { kernel, shape, runs, warmup: default_warmup(), threads: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs < 10 {
            return Err(Error::invalid("bench", format!("runs must be >= 10, got {}", self.runs)));
        }
        if self.threads == 0 {
            return Err(Error::invalid("bench", "threads must be >= 1"));
        }
        if self.shape.is_empty() {
            return Err(Error::invalid("bench", format!("empty shape {}", self.shape)));
        }
        match self.kernel {
            Kernel::SparseShift { sparsity } if !(0.0..=1.0).contains(&sparsity) => {
                Err(Error::invalid("bench", format!("sparsity {sparsity} outside [0, 1]")))
            }
            Kernel::DepthwiseConv { k } if !matches!(k, 3 | 5) => Err(Error::InvalidKernel(k)),
            _ => Ok(()),
        }
    }
}

/// Timing and traffic of one benchmarked kernel or operator class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub kernel: String,
    pub shape: Shape,
    pub sparsity: f64,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub median_of_means_ms: f64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub madds: u64,
    pub share_pct: f64,
    /// Timed samples and kernel repetitions per sample.
    pub samples: usize,
    pub reps: usize,
}

impl BenchRow {
    pub fn bytes_moved(&self) -> u64 {
        self.bytes_read + self.bytes_written
    }

    /// Elements processed per millisecond.
    pub fn throughput(&self) -> f64 {
        self.shape.len() as f64 / self.mean_ms.max(1e-9)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub logical_cpus: usize,
    pub threads: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "kernel,shape,sparsity,mean_ms,std_ms,bytes_moved,madds,share_pct";

    pub fn new(threads: usize, rows: Vec<BenchRow>) -> Self {
        let mut report =
            BenchReport { logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()), threads, rows };
        report.recompute_shares();
        report
    }

    /// Sets each row's share of the summed mean time.
    pub fn recompute_shares(&mut self) {
        let total: f64 = self.rows.iter().map(|r| r.mean_ms).sum();
        for r in &mut self.rows {
            r.share_pct = if total > 0.0 { 100.0 * r.mean_ms / total } else { 0.0 };
        }
    }

    pub fn row(&self, kernel: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.kernel == kernel)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.kernel,
                r.shape,
                r.sparsity,
                r.mean_ms,
                r.std_ms,
                r.bytes_moved(),
                r.madds,
                r.share_pct
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# logical_cpus={} threads={}\n", self.logical_cpus, self.threads);
        let _ = writeln!(
            out,
            "{:<14} {:>14} {:>8} {:>11} {:>10} {:>14} {:>14} {:>8}",
            "kernel", "shape", "sparsity", "mean_ms", "std_ms", "bytes_moved", "madds", "share%"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14} {:>14} {:>8.3} {:>11.4} {:>10.4} {:>14} {:>14} {:>8.2}",
                r.kernel,
                r.shape.to_string(),
                r.sparsity,
                r.mean_ms,
                r.std_ms,
                r.bytes_moved(),
                r.madds,
                r.share_pct
            );
        }
        out
    }
}

/// Smallest positive difference between consecutive clock reads.
pub fn timer_tick() -> Duration {
    let mut best = Duration::from_secs(1);
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best.max(Duration::from_nanos(1))
}

/// Per-repetition wall-clock samples in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub samples_ms: Vec<f64>,
    pub reps: usize,
}

impl Timing {
    pub fn mean(&self) -> f64 {
        self.samples_ms.iter().sum::<f64>() / self.samples_ms.len().max(1) as f64
    }

    pub fn std(&self) -> f64 {
        let n = self.samples_ms.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.samples_ms.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    /// Median of the means of up to five consecutive groups of samples.
    pub fn median_of_means(&self) -> f64 {
        let groups = self.samples_ms.len().clamp(1, 5);
        let size = self.samples_ms.len().div_ceil(groups).max(1);
        let mut means: Vec<f64> =
            self.samples_ms.chunks(size).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        means.sort_by(f64::total_cmp);
        let mid = means.len() / 2;
        if means.len() % 2 == 1 {
            means[mid]
        } else {
            (means[mid - 1] + means[mid]) / 2.0
        }
    }
}

/// Times `f` over `runs` samples after `warmup` calls. A sample repeats `f` until
/// its duration reaches 100 timer ticks, doubling the repetition count as needed.
pub fn measure(mut f: impl FnMut(), runs: usize, warmup: usize, tick: Duration) -> Timing {
    for _ in 0..warmup {
        f();
    }
    let floor = tick * 100;
    let mut reps = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..reps {
            f();
        }
        if t.elapsed() >= floor || reps >= 1 << 24 {
            break;
        }
        reps *= 2;
    }
    let samples_ms = (0..runs)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..reps {
                f();
            }
            t.elapsed().as_secs_f64() * 1e3 / reps as f64
        })
        .collect();
    Timing { samples_ms, reps }
}

/// Per-channel offsets with `round(sparsity * channels)` channels left at `(0, 0)`
/// and the rest cycling through the eight unit offsets.
pub fn sparse_offsets<R: Rng + ?Sized>(channels: usize, sparsity: f64, rng: &mut R) -> Vec<(isize, isize)> {
    let unshifted = ((sparsity.clamp(0.0, 1.0) * channels as f64).round() as usize).min(channels);
    let mut order: Vec<usize> = (0..channels).collect();
    order.shuffle(rng);
    let mut offsets = vec![(0, 0); channels];
    for (k, &c) in order[unshifted..].iter().enumerate() {
        offsets[c] = DIRECTIONS[k % DIRECTIONS.len()];
    }
    offsets
}

/// Rewrites every shift layer's displacements to the given sparsity.
pub fn set_shift_sparsity(graph: &mut Graph, sparsity: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, sp, _) in graph.shift_layers_mut() {
        let offsets = sparse_offsets(sp.channels(), sparsity, &mut rng);
        for (c, (dy, dx)) in offsets.into_iter().enumerate() {
            sp.alpha[c] = dy as f32;
            sp.beta[c] = dx as f32;
        }
    }
}

/// Splits `data` into per-sample chunks and runs `f(sample_index, chunk)` on `threads` threads.
fn for_samples(data: &mut [f32], sample: usize, threads: usize, f: &(dyn Fn(usize, &mut [f32]) + Sync)) {
    if threads <= 1 {
        for (n, chunk) in data.chunks_mut(sample).enumerate() {
            f(n, chunk);
        }
        return;
    }
    let count = data.len() / sample;
    let per = count.div_ceil(threads);
    std::thread::scope(|scope| {
        for (t, part) in data.chunks_mut(per * sample).enumerate() {
            scope.spawn(move || {
                for (k, chunk) in part.chunks_mut(sample).enumerate() {
                    f(t * per + k, chunk);
                }
            });
        }
    });
}

fn shift_sample(plane: usize, h: usize, w: usize, offsets: &[(isize, isize)], data: &mut [f32]) {
    for (c, &(dy, dx)) in offsets.iter().enumerate() {
        if dy != 0 || dx != 0 {
            shift_plane_in_place(&mut data[c * plane..(c + 1) * plane], h, w, dy, dx);
        }
    }
}

fn verify(kernel: &str, got: &Tensor, want: &Tensor) -> Result<()> {
    if got != want {
        return Err(Error::invalid("bench", format!("{kernel}: kernel output differs from the reference")));
    }
    Ok(())
}

/// Benchmarks one kernel. The kernel's output is checked once against the functional
/// implementation before timing; inputs and outputs are allocated outside the timed region.
pub fn run_kernel_bench(case: &KernelCase, seed: u64) -> Result<BenchRow> {
    case.validate()?;
    let s = case.shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::randn(s, 1.0, &mut rng);
    let plane = s.h * s.w;
    let sample = s.c * plane;
    let elems = s.len() as u64;
    let tick = timer_tick();
    let label = case.kernel.label();

    let (timing, bytes_read, bytes_written, madds) = match case.kernel {
        Kernel::DenseShift | Kernel::SparseShift { .. } => {
            let offsets = sparse_offsets(s.c, case.kernel.sparsity(), &mut rng);
            let moved = offsets.iter().filter(|&&o| o != (0, 0)).count() as u64;
            let mut buf = input.clone();
            for_samples(buf.data_mut(), sample, case.threads, &|_, d| shift_sample(plane, s.h, s.w, &offsets, d));
            verify(&label, &buf, &shift_integer(&input, &offsets)?)?;
            let timing = measure(
                || {
                    for_samples(buf.data_mut(), sample, case.threads, &|_, d| {
                        shift_sample(plane, s.h, s.w, &offsets, d)
                    })
                },
                case.runs,
                case.warmup,
                tick,
            );
            let bytes = s.n as u64 * moved * plane as u64 * 4;
            (timing, bytes, bytes, 0)
        }
        Kernel::DepthwiseConv { k } => {
            let p = ConvParams::he_depthwise(s.c, k, 1, &mut rng);
            let mut out = Tensor::zeros(s);
            let run = |n: usize, o: &mut [f32]| {
                let x = &input.data()[n * sample..(n + 1) * sample];
                for c in 0..s.c {
                    let range = c * plane..(c + 1) * plane;
                    depthwise_plane(&x[range.clone()], s.h, s.w, &p, c, &mut o[range], s.h, s.w);
                }
            };
            for_samples(out.data_mut(), sample, case.threads, &run);
            verify(&label, &out, &depthwise_forward(&input, &p)?)?;
            let timing =
                measure(|| for_samples(out.data_mut(), sample, case.threads, &run), case.runs, case.warmup, tick);
            let weights = (s.c * k * k * 4) as u64;
            (timing, elems * 4 + weights, elems * 4, elems * (k * k) as u64)
        }
        Kernel::PointwiseConv => {
            let p = ConvParams::he(s.c, s.c, 1, 1, 0, false, &mut rng);
            let mut out = Tensor::zeros(s);
            let w = p.weight.data();
            let run = |n: usize, o: &mut [f32]| {
                pointwise_sample(w, None, s.c, plane, &input.data()[n * sample..(n + 1) * sample], o);
            };
            for_samples(out.data_mut(), sample, case.threads, &run);
            verify(&label, &out, &conv2d_forward(&input, &p)?)?;
            let timing =
                measure(|| for_samples(out.data_mut(), sample, case.threads, &run), case.runs, case.warmup, tick);
            let weights = (s.c * s.c * 4) as u64;
            (timing, elems * 4 + weights, elems * 4, elems * s.c as u64)
        }
    };
    Ok(BenchRow {
        kernel: label,
        shape: s,
        sparsity: case.kernel.sparsity(),
        mean_ms: timing.mean(),
        std_ms: timing.std(),
        median_of_means_ms: timing.median_of_means(),
        bytes_read,
        bytes_written,
        madds,
        share_pct: 0.0,
        samples: timing.samples_ms.len(),
        reps: timing.reps,
    })
}

/// Absorbs every batch norm that directly follows a convolution with no other
/// consumer into that convolution's weights and bias, then drops the batch norms.
pub fn fold_batchnorm(graph: &Graph) -> Result<Graph> {
    let mut g = graph.clone();
    let consumers = g.consumer_counts();
    for id in 0..g.nodes().len() {
        let Layer::BatchNorm(bn) = &g.node(id).layer else { continue };
        let src = g.node(id).inputs[0];
        if consumers[src] != 1 {
            continue;
        }
        let (scale, shift) = bn.eval_affine();
        let folded = match &g.node(src).layer {
            Layer::Conv(p) => Layer::Conv(fold_into(p, &scale, &shift)?),
            Layer::Depthwise(p) => Layer::Depthwise(fold_into(p, &scale, &shift)?),
            _ => continue,
        };
        g.replace_layer(src, folded)?;
        g.replace_layer(id, Layer::Identity)?;
    }
    g.compact();
    Ok(g)
}

fn fold_into(p: &ConvParams, scale: &[f32], shift: &[f32]) -> Result<ConvParams> {
    let mut weight = p.weight.clone();
    let per_out = weight.len() / scale.len();
    for (chunk, &s) in weight.data_mut().chunks_mut(per_out).zip(scale) {
        chunk.iter_mut().for_each(|v| *v *= s);
    }
    let bias = (0..scale.len()).map(|c| p.bias.as_ref().map_or(0.0, |b| b[c]) * scale[c] + shift[c]).collect();
    ConvParams::new(weight, Some(bias), p.stride, p.pad)
}

/// Operator classes of the runtime decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpClass {
    Shift,
    Pointwise,
    Depthwise,
    Other,
}

impl OpClass {
    pub const ALL: [OpClass; 4] = [OpClass::Shift, OpClass::Pointwise, OpClass::Depthwise, OpClass::Other];

    pub fn label(self) -> &'static str {
        match self {
            OpClass::Shift => "shift",
            OpClass::Pointwise => "conv1x1",
            OpClass::Depthwise => "depthwise",
            OpClass::Other => "other",
        }
    }

    pub fn of(layer: &Layer) -> OpClass {
        match layer {
            Layer::Shift { .. } => OpClass::Shift,
            Layer::Conv(p) if p.k() == 1 => OpClass::Pointwise,
            Layer::Depthwise(_) => OpClass::Depthwise,
            _ => OpClass::Other,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

enum Step {
    Input,
    ShiftInPlace(Vec<(isize, isize)>),
    Eval,
}

/// Per-class time shares of an eval-mode forward pass with batch norms folded.
/// Integer-displacement shifts whose input has no other consumer run in place.
pub fn decompose_graph(graph: &Graph, input: Shape, runs: usize, seed: u64) -> Result<BenchReport> {
    if runs == 0 {
        return Err(Error::invalid("decomposition", "runs must be >= 1"));
    }
    let g = fold_batchnorm(graph)?;
    let shapes = g.shapes_for(input)?;
    let consumers = g.consumer_counts();
    let n = input.n as u64;
    let mut madds = [0u64; 4];
    let mut read = [0u64; 4];
    let mut written = [0u64; 4];
    let steps: Vec<Step> = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(id, node)| {
            let class = OpClass::of(&node.layer).index();
            madds[class] += node.layer.madds(shapes[id]) * n;
            match &node.layer {
                Layer::Input => Step::Input,
                Layer::Shift { params, mode } if *mode != ShiftMode::ActiveBilinear => {
                    let offsets = params.rounded();
                    let moved = offsets.iter().filter(|&&o| o != (0, 0)).count() as u64;
                    let bytes = moved * (shapes[id].len() / shapes[id].c.max(1)) as u64 * 4;
                    read[class] += bytes;
                    written[class] += bytes;
                    let src = node.inputs[0];
                    if consumers[src] == 1 && src != g.input() {
                        Step::ShiftInPlace(offsets)
                    } else {
                        Step::Eval
                    }
                }
                layer => {
                    read[class] += node.inputs.iter().map(|&i| shapes[i].len() as u64 * 4).sum::<u64>()
                        + layer.param_count() as u64 * 4;
                    written[class] += shapes[id].len() as u64 * 4;
                    Step::Eval
                }
            }
        })
        .collect();

    let x = Tensor::randn(input, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let forward = |times: &mut [f64; 4]| -> Result<()> {
        let mut outputs: Vec<Option<Tensor>> = Vec::with_capacity(steps.len());
        let mut remaining = consumers.clone();
        for (id, (node, step)) in g.nodes().iter().zip(&steps).enumerate() {
            let t = Instant::now();
            let out = match step {
                Step::Input => x.clone(),
                Step::ShiftInPlace(offsets) => {
                    let mut y = outputs[node.inputs[0]].take().expect("sole consumer");
                    shift_integer_in_place(&mut y, offsets)?;
                    y
                }
                Step::Eval => {
                    let inputs: Vec<&Tensor> =
                        node.inputs.iter().map(|&i| outputs[i].as_ref().expect("input alive")).collect();
                    eval_layer(&node.layer, &inputs)?
                }
            };
            if !matches!(step, Step::Input) {
                times[OpClass::of(&node.layer).index()] += t.elapsed().as_secs_f64() * 1e3;
            }
            outputs.push(Some(out));
            for &i in &node.inputs {
                remaining[i] -= 1;
                if remaining[i] == 0 {
                    outputs[i] = None;
                }
            }
            if id == g.output() {
                break;
            }
        }
        Ok(())
    };

    forward(&mut [0.0; 4])?;
    let mut per_run: Vec<[f64; 4]> = Vec::with_capacity(runs);
    for _ in 0..runs {
        let mut times = [0.0; 4];
        forward(&mut times)?;
        per_run.push(times);
    }
    let sparsity = g.shift_sparsity();
    let rows = OpClass::ALL
        .iter()
        .map(|&class| {
            let timing = Timing { samples_ms: per_run.iter().map(|t| t[class.index()]).collect(), reps: 1 };
            BenchRow {
                kernel: class.label().into(),
                shape: input,
                sparsity,
                mean_ms: timing.mean(),
                std_ms: timing.std(),
                median_of_means_ms: timing.median_of_means(),
                bytes_read: read[class.index()],
                bytes_written: written[class.index()],
                madds: madds[class.index()],
                share_pct: 0.0,
                samples: runs,
                reps: 1,
            }
        })
        .collect();
    Ok(BenchReport::new(1, rows))
}

/// Builds `arch` and decomposes a forward pass at `input`.
pub fn run_decomposition(arch: &ArchSpec, input: Shape, runs: usize, seed: u64) -> Result<BenchReport> {
    let graph = arch.build(seed)?;
    decompose_graph(&graph, input, runs, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{MiniShiftNetSpec, SpatialOp};
    use crate::nn::BNParams;
    use crate::testing::seeded;

    #[test]
    fn dense_shift_moves_every_byte() {
        let case = KernelCase::new(Kernel::DenseShift, Shape::new(2, 16, 8, 8), 10);
        let row = run_kernel_bench(&case, 1).unwrap();
        let full = (2 * 16 * 8 * 8 * 4) as u64;
        assert_eq!((row.bytes_read, row.bytes_written), (full, full));
        assert_eq!(row.madds, 0);
    }

    #[test]
    fn fully_sparse_shift_moves_nothing() {
        let case = KernelCase::new(Kernel::SparseShift { sparsity: 1.0 }, Shape::new(2, 16, 8, 8), 10);
        let row = run_kernel_bench(&case, 1).unwrap();
        assert_eq!(row.bytes_moved(), 0);
        assert!(row.reps > 1, "an empty kernel must escalate repetitions");
    }

    #[test]
    fn conv_kernels_report_madds_and_verify() {
        let s = Shape::new(2, 8, 6, 6);
        for (kernel, madds) in [
            (Kernel::DepthwiseConv { k: 3 }, s.len() as u64 * 9),
            (Kernel::DepthwiseConv { k: 5 }, s.len() as u64 * 25),
            (Kernel::PointwiseConv, s.len() as u64 * 8),
        ] {
            let mut case = KernelCase::new(kernel, s, 10);
            case.threads = 2;
            let row = run_kernel_bench(&case, 3).unwrap();
            assert_eq!(row.madds, madds, "{}", row.kernel);
        }
    }

    #[test]
    fn invalid_cases_rejected() {
        let s = Shape::new(1, 4, 4, 4);
        assert!(run_kernel_bench(&KernelCase::new(Kernel::DenseShift, s, 9), 0).is_err());
        assert!(run_kernel_bench(&KernelCase::new(Kernel::SparseShift { sparsity: 1.5 }, s, 10), 0).is_err());
        assert!(run_kernel_bench(&KernelCase::new(Kernel::DepthwiseConv { k: 7 }, s, 10), 0).is_err());
    }

    #[test]
    fn sparse_offsets_hit_requested_count() {
        let offsets = sparse_offsets(64, 0.9, &mut seeded(0));
        assert_eq!(offsets.iter().filter(|&&o| o == (0, 0)).count(), 58);
        let dense = sparse_offsets(64, 0.0, &mut seeded(0));
        assert!(dense.iter().all(|&o| o != (0, 0)));
    }

    #[test]
    fn median_of_means_and_std() {
        let t = Timing { samples_ms: vec![1.0, 1.0, 2.0, 2.0, 9.0, 9.0, 3.0, 3.0, 4.0, 4.0], reps: 1 };
        assert_eq!(t.median_of_means(), 3.0);
        assert_eq!(t.mean(), 3.8);
        assert!(t.std() > 0.0);
    }

    #[test]
    fn report_formats() {
        let row = |kernel: &str, mean_ms| BenchRow {
            kernel: kernel.into(),
            shape: Shape::new(1, 2, 3, 4),
            sparsity: 0.5,
            mean_ms,
            std_ms: 0.0,
            median_of_means_ms: mean_ms,
            bytes_read: 10,
            bytes_written: 6,
            madds: 0,
            share_pct: 0.0,
            samples: 10,
            reps: 1,
        };
        let report = BenchReport::new(1, vec![row("a", 1.0), row("b", 3.0)]);
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(BenchReport::CSV_HEADER));
        assert_eq!(lines.next(), Some("a,1x2x3x4,0.5,1,0,16,0,25"));
        assert!(report.to_text().starts_with("# logical_cpus="));
    }

    fn random_bn(c: usize, seed: u64) -> BNParams {
        let mut rng = seeded(seed);
        let mut bn = BNParams::new(c);
        for i in 0..c {
            bn.gamma[i] = rng.random_range(0.5..1.5);
            bn.beta[i] = rng.random_range(-0.5..0.5);
            bn.running_mean[i] = rng.random_range(-0.3..0.3);
            bn.running_var[i] = rng.random_range(0.5..2.0);
        }
        bn
    }

    #[test]
    fn folding_matches_unfolded_graph() {
        let spec = MiniShiftNetSpec { input_size: 8, ..Default::default() };
        let mut g = ArchSpec::MiniShiftNet(spec).build(2).unwrap();
        let ids: Vec<usize> =
            (0..g.nodes().len()).filter(|&i| matches!(g.node(i).layer, Layer::BatchNorm(_))).collect();
        for (k, id) in ids.into_iter().enumerate() {
            let c = match &g.node(id).layer {
                Layer::BatchNorm(bn) => bn.channels(),
                _ => unreachable!(),
            };
            g.replace_layer(id, Layer::BatchNorm(random_bn(c, k as u64))).unwrap();
        }
        let folded = fold_batchnorm(&g).unwrap();
        assert!(folded.nodes().iter().all(|n| !matches!(n.layer, Layer::BatchNorm(_))));
        let x = Tensor::randn(Shape::new(3, 2, 8, 8), 1.0, &mut seeded(5));
        let (a, b) = (g.infer(&x).unwrap(), folded.infer(&x).unwrap());
        let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
        assert!(diff <= 1e-5 * a.max_abs().max(1.0), "max diff {diff}");
    }

    #[test]
    fn identity_bn_fold_keeps_weights() {
        let mut g = Graph::new(Shape::new(1, 3, 4, 4));
        let p = ConvParams::he(3, 5, 3, 1, 1, false, &mut seeded(1));
        let w = p.weight.clone();
        let c = g.add("conv", Layer::Conv(p), &[0]).unwrap();
        g.add("bn", Layer::BatchNorm(BNParams::new(5)), &[c]).unwrap();
        let folded = fold_batchnorm(&g).unwrap();
        assert_eq!(folded.nodes().len(), 2);
        let Layer::Conv(q) = &folded.node(1).layer else { panic!("conv expected") };
        let scale = 1.0 / (1.0f32 + 1e-5).sqrt();
        for (a, b) in q.weight.data().iter().zip(w.data()) {
            assert_eq!(*a, b * scale);
        }
        assert!(q.bias.as_ref().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_conv_graph_has_no_shift_share() {
        let mut g = Graph::new(Shape::new(1, 4, 8, 8));
        let mut rng = seeded(0);
        let a = g.add("c1", Layer::Conv(ConvParams::he(4, 8, 3, 1, 1, false, &mut rng)), &[0]).unwrap();
        g.add("c2", Layer::Conv(ConvParams::he(8, 8, 1, 1, 0, false, &mut rng)), &[a]).unwrap();
        let report = decompose_graph(&g, Shape::new(2, 4, 8, 8), 3, 0).unwrap();
        assert_eq!(report.row("shift").unwrap().share_pct, 0.0);
        let total: f64 = report.rows.iter().map(|r| r.share_pct).sum();
        assert!((total - 100.0).abs() <= 0.1);
    }

    #[test]
    fn decomposition_classes_and_in_place_shift() {
        let arch = ArchSpec::MiniShiftNet(MiniShiftNetSpec::default());
        let report = run_decomposition(&arch, Shape::new(4, 2, 12, 12), 2, 0).unwrap();
        let labels: Vec<&str> = report.rows.iter().map(|r| r.kernel.as_str()).collect();
        assert_eq!(labels, vec!["shift", "conv1x1", "depthwise", "other"]);
        assert!(report.row("shift").unwrap().bytes_moved() > 0);
        assert_eq!(report.row("depthwise").unwrap().madds, 0);

        let dw = ArchSpec::MiniShiftNet(MiniShiftNetSpec {
            spatial: SpatialOp::Depthwise { kernel: 3 },
            ..Default::default()
        });
        let report = run_decomposition(&dw, Shape::new(4, 2, 12, 12), 2, 0).unwrap();
        assert_eq!(report.row("shift").unwrap().mean_ms, 0.0);
        assert!(report.row("depthwise").unwrap().madds > 0);
    }

    #[test]
    fn set_sparsity_applies_to_all_layers() {
        let mut g = ArchSpec::MiniShiftNet(MiniShiftNetSpec::default()).build(0).unwrap();
        set_shift_sparsity(&mut g, 0.5, 1);
        assert_eq!(g.shift_sparsity(), 0.5);
        set_shift_sparsity(&mut g, 1.0, 1);
        assert_eq!(g.shift_sparsity(), 1.0);
    }
}
