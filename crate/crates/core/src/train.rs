//! SGD training: schedules, the optimizer step, and the training loop.

use std::collections::HashMap;
use std::io::Write;
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::data::{Augment, BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::graph::{Graph, Layer, ParamRole};
use crate::nn::argmax_rows;
use crate::shift::{penalty_grad_accumulate, penalty_value, PenaltyConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    /// Multiply by `factor` at each milestone reached (`iter >= milestone`).
    StepDecay { milestones: Vec<usize>, factor: f32 },
    /// Linear ramp from the base rate at iteration 0 to zero at `total_iters`.
    LinearDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f32,
    pub lr_schedule: LrSchedule,
    #[serde(default = "default_momentum")]
    pub momentum: f32,
    #[serde(default)]
    pub weight_decay: f32,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    /// Shift displacements stop updating once `iter >= fraction * total_iters`.
    #[serde(default = "default_freeze")]
    pub shift_freeze_fraction: f32,
    pub total_iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub augment: Augment,
    /// A metrics row is emitted every `log_interval` iterations and after the last one.
    #[serde(default = "default_log_interval")]
    pub log_interval: usize,
    /// Batches prepared ahead on a loader thread; 0 loads inline.
    #[serde(default)]
    pub prefetch: usize,
    /// Evaluation uses at most this many held-out samples per metrics row (0 = all).
    #[serde(default)]
    pub eval_limit: usize,
}

fn default_momentum() -> f32 {
    0.9
}

fn default_freeze() -> f32 {
    0.75
}

fn default_log_interval() -> usize {
    100
}

impl TrainConfig {
    /// Small-scale defaults: batch 32, lr 0.1 with step decay at 50% and 75%.
    pub fn quick(total_iters: usize) -> Self {
        let mut milestones = vec![total_iters / 2, total_iters * 3 / 4];
        milestones.retain(|&m| m > 0);
        milestones.dedup();
        TrainConfig {
            batch_size: 32,
            base_lr: 0.1,
            lr_schedule: LrSchedule::StepDecay { milestones, factor: 0.1 },
            momentum: 0.9,
            weight_decay: 1e-4,
            penalty: PenaltyConfig { lambda: 0.0, ..PenaltyConfig::default() },
            shift_freeze_fraction: 0.75,
            total_iters,
            seed: 0,
            augment: Augment::default(),
            log_interval: 100,
            prefetch: 0,
            eval_limit: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.shift_freeze_fraction > 0.0 && self.shift_freeze_fraction <= 1.0) {
            return bad(format!("shift_freeze_fraction must be in (0, 1], got {}", self.shift_freeze_fraction));
        }
        if self.log_interval == 0 {
            return bad("log_interval must be >= 1".into());
        }
        self.penalty.validate()?;
        if let LrSchedule::StepDecay { milestones, factor } = &self.lr_schedule {
            if factor.is_nan() || *factor <= 0.0 {
                return bad(format!("step decay factor must be positive, got {factor}"));
            }
            if milestones.windows(2).any(|w| w[0] >= w[1]) {
                return bad("milestones must be strictly increasing".into());
            }
            if milestones.last().is_some_and(|&m| m >= self.total_iters && self.total_iters > 0) {
                return bad("milestones must be below total_iters".into());
            }
        }
        Ok(())
    }

    /// First iteration at which shift displacements are frozen.
    pub fn freeze_iter(&self) -> usize {
        (self.shift_freeze_fraction as f64 * self.total_iters as f64).ceil() as usize
    }
}

pub fn lr_at(cfg: &TrainConfig, iter: usize) -> f32 {
    match &cfg.lr_schedule {
        LrSchedule::StepDecay { milestones, factor } => {
            let passed = milestones.iter().filter(|&&m| iter >= m).count();
            cfg.base_lr * factor.powi(passed as i32)
        }
        LrSchedule::LinearDecay => {
            let frac = iter as f64 / cfg.total_iters.max(1) as f64;
            (cfg.base_lr as f64 * (1.0 - frac)) as f32
        }
    }
}

/// Momentum SGD state keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    velocity: HashMap<String, Vec<f32>>,
}

impl Sgd {
    pub fn new() -> Self {
        Self::default()
    }

    /// `v <- m*v + g (+ wd*w for weights); w <- w - lr*v`, skipping frozen shifts.
    pub fn step(&mut self, graph: &mut Graph, cfg: &TrainConfig, iter: usize) {
        let lr = lr_at(cfg, iter);
        for p in graph.params_mut() {
            if p.frozen {
                continue;
            }
            let wd = if p.role == ParamRole::Weight { cfg.weight_decay } else { 0.0 };
            let v = self.velocity.entry(p.name).or_insert_with(|| vec![0.0; p.value.len()]);
            for ((w, &g), v) in p.value.iter_mut().zip(p.grad.iter()).zip(v.iter_mut()) {
                *v = cfg.momentum * *v + g + wd * *w;
                *w -= lr * *v;
            }
        }
    }
}

/// Adds the displacement penalty gradient to every learnable, unfrozen shift layer.
pub fn add_penalty_grads(graph: &mut Graph, penalty: &PenaltyConfig) {
    for (_, sp, mode) in graph.shift_layers_mut() {
        if mode.is_learnable() {
            penalty_grad_accumulate(sp, penalty);
        }
    }
}

pub fn total_penalty(graph: &Graph, penalty: &PenaltyConfig) -> f64 {
    graph.shift_layers().filter(|(_, _, mode)| mode.is_learnable()).map(|(_, sp, _)| penalty_value(sp, penalty)).sum()
}

/// One line of the metrics log. Loss and accuracy average the iterations since the
/// previous row; loss is the cross-entropy term only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
    pub sparsity: f64,
    pub lr: f32,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "iter,train_loss,train_acc,eval_acc,sparsity,lr";

    pub fn to_csv(&self) -> String {
        let eval = self.eval_acc.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{},{},{}", self.iter, self.train_loss, self.train_acc, eval, self.sparsity, self.lr)
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        let err = || Error::invalid("metrics_csv", format!("malformed row {line:?}"));
        if fields.len() != 6 {
            return Err(err());
        }
        Ok(MetricsRow {
            iter: fields[0].parse().map_err(|_| err())?,
            train_loss: fields[1].parse().map_err(|_| err())?,
            train_acc: fields[2].parse().map_err(|_| err())?,
            eval_acc: if fields[3].is_empty() { None } else { Some(fields[3].parse().map_err(|_| err())?) },
            sparsity: fields[4].parse().map_err(|_| err())?,
            lr: fields[5].parse().map_err(|_| err())?,
        })
    }
}

pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[MetricsRow]) -> std::io::Result<()> {
    writeln!(out, "{}", MetricsRow::CSV_HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    Ok(())
}

/// Top-1 accuracy of the eval-mode graph over the first `limit` samples (0 = all).
pub fn evaluate(graph: &Graph, data: &Dataset, batch: usize, limit: usize) -> Result<f64> {
    let n = if limit == 0 { data.len() } else { limit.min(data.len()) };
    if n == 0 {
        return Err(Error::invalid("evaluate", "dataset is empty"));
    }
    let batch = batch.max(1);
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
        let (x, y) = data.batch(&idx)?;
        let pred = argmax_rows(&graph.infer(&x)?);
        correct += pred.iter().zip(&y).filter(|(p, l)| p == l).count();
        start += batch;
    }
    Ok(correct as f64 / n as f64)
}

/// Runs `cfg.total_iters` SGD iterations, invoking `on_row` with each metrics row
/// and the graph at that point. Returns all rows.
///
/// Displacements freeze at [`TrainConfig::freeze_iter`]; after that neither the
/// task gradient nor the penalty reaches them. A non-finite loss aborts with
/// [`Error::TrainingDiverged`].
pub fn train(
    graph: &mut Graph,
    train_data: &Dataset,
    eval_data: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_row: impl FnMut(&MetricsRow, &Graph),
) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let classes = graph.output_shape().c;
    if train_data.classes() > classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the network outputs {classes}",
            train_data.classes()
        )));
    }
    graph.reseed(cfg.seed ^ 0x5eed_d20b);
    let mut sgd = Sgd::new();
    let mut rows = Vec::new();
    if cfg.total_iters == 0 {
        return Ok(rows);
    }
    let mut sampler = BatchSampler::new(train_data, cfg.batch_size, cfg.augment, cfg.seed)?;

    let mut run = |next: &mut dyn FnMut() -> Result<(Tensor, Vec<usize>)>| -> Result<()> {
        let (mut loss_sum, mut correct, mut seen, mut iters) = (0.0f64, 0usize, 0usize, 0usize);
        for iter in 0..cfg.total_iters {
            let frozen = iter >= cfg.freeze_iter();
            graph.set_shifts_frozen(frozen);
            let (x, y) = next()?;
            graph.zero_grad();
            let (loss, logits, dlogits) = match graph.forward_loss(&x, &y) {
                Ok(v) => v,
                Err(Error::NonFiniteLoss(loss)) => return Err(Error::TrainingDiverged { iter, loss }),
                Err(e) => return Err(e),
            };
            graph.backward(&dlogits)?;
            if !frozen {
                add_penalty_grads(graph, &cfg.penalty);
            }
            sgd.step(graph, cfg, iter);

            loss_sum += loss as f64;
            correct += argmax_rows(&logits).iter().zip(&y).filter(|(p, l)| p == l).count();
            seen += y.len();
            iters += 1;
            let last = iter + 1 == cfg.total_iters;
            if (iter + 1) % cfg.log_interval == 0 || last {
                let eval_acc = match eval_data {
                    Some(d) => Some(evaluate(graph, d, cfg.batch_size.max(64), cfg.eval_limit)?),
                    None => None,
                };
                let row = MetricsRow {
                    iter: iter + 1,
                    train_loss: loss_sum / iters as f64,
                    train_acc: correct as f64 / seen as f64,
                    eval_acc,
                    sparsity: graph.shift_sparsity(),
                    lr: lr_at(cfg, iter),
                };
                on_row(&row, graph);
                rows.push(row);
                (loss_sum, correct, seen, iters) = (0.0, 0, 0, 0);
            }
        }
        Ok(())
    };

    if cfg.prefetch == 0 {
        run(&mut || sampler.next_batch())?;
    } else {
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = mpsc::sync_channel(cfg.prefetch);
            let total = cfg.total_iters;
            scope.spawn(move || {
                for _ in 0..total {
                    let batch = sampler.next_batch();
                    let failed = batch.is_err();
                    if tx.send(batch).is_err() || failed {
                        break;
                    }
                }
            });
            run(&mut || rx.recv().map_err(|_| Error::invalid("train", "batch loader stopped early"))?)
        })?;
    }
    Ok(rows)
}

/// Names of learnable shift layers, least important (highest sparsity) first.
/// Ties keep graph order.
pub fn shift_layers_by_sparsity(graph: &Graph) -> Vec<(String, f64)> {
    let mut layers: Vec<(String, f64)> = graph
        .nodes()
        .iter()
        .filter_map(|n| match &n.layer {
            Layer::Shift { params, .. } => Some((n.name.clone(), crate::shift::shift_sparsity(params))),
            _ => None,
        })
        .collect();
    layers.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite sparsity"));
    layers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Graph, Layer};
    use crate::nn::{BNParams, ConvParams, FcParams};
    use crate::shift::{Norm, ShiftMode, ShiftParams};
    use crate::tensor::Shape;
    use crate::testing::seeded;
    use rand::Rng;

    fn scalar_graph(w: f32, decay: bool) -> Graph {
        let mut g = Graph::new(Shape::new(1, 1, 1, 1));
        let p = ConvParams::new(Tensor::full(Shape::new(1, 1, 1, 1), w), None, 1, 0).unwrap();
        let layer = if decay { Layer::Conv(p) } else { Layer::Depthwise(p) };
        g.add("w", layer, &[0]).unwrap();
        g
    }

    fn set_grad(g: &mut Graph, v: f32) {
        for p in g.params_mut() {
            p.grad.fill(v);
        }
    }

    fn value(g: &mut Graph) -> f32 {
        g.params_mut()[0].value[0]
    }

    fn plain(lr: f32, m: f32, wd: f32) -> TrainConfig {
        TrainConfig {
            base_lr: lr,
            momentum: m,
            weight_decay: wd,
            lr_schedule: LrSchedule::StepDecay { milestones: vec![], factor: 0.1 },
            ..TrainConfig::quick(100)
        }
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut g = scalar_graph(0.7, true);
        Sgd::new().step(&mut g, &plain(0.1, 0.9, 0.0), 0);
        assert_eq!(value(&mut g), 0.7);
    }

    #[test]
    fn single_step_without_momentum() {
        let mut g = scalar_graph(1.0, true);
        set_grad(&mut g, 1.0);
        Sgd::new().step(&mut g, &plain(0.1, 0.0, 0.0), 0);
        assert!((value(&mut g) - 0.9).abs() < 1e-7);
    }

    #[test]
    fn two_momentum_steps() {
        let mut g = scalar_graph(1.0, true);
        let cfg = plain(0.1, 0.9, 0.0);
        let mut sgd = Sgd::new();
        for i in 0..2 {
            set_grad(&mut g, 1.0);
            sgd.step(&mut g, &cfg, i);
        }
        assert!((1.0 - value(&mut g) - 0.29).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_only_on_weights() {
        let cfg = plain(0.5, 0.0, 0.1);
        let mut g = scalar_graph(2.0, true);
        Sgd::new().step(&mut g, &cfg, 0);
        assert!((value(&mut g) - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-7);

        let mut g = Graph::new(Shape::new(1, 2, 2, 2));
        let mut bn = BNParams::new(2);
        bn.beta = vec![0.5, -0.5];
        let b = g.add("bn", Layer::BatchNorm(bn), &[0]).unwrap();
        let sp = ShiftParams::from_displacements(vec![0.7, -0.2], vec![1.1, 0.0]).unwrap();
        g.add("s", Layer::Shift { params: sp, mode: ShiftMode::SparseQuantized }, &[b]).unwrap();
        let before = g.state_dict();
        Sgd::new().step(&mut g, &cfg, 0);
        assert_eq!(g.state_dict(), before);
    }

    #[test]
    fn step_decay_at_paper_milestones() {
        let cfg = TrainConfig {
            base_lr: 0.1,
            lr_schedule: LrSchedule::StepDecay { milestones: vec![32_000, 48_000], factor: 0.1 },
            ..TrainConfig::quick(64_000)
        };
        assert!((lr_at(&cfg, 40_000) - 0.01).abs() < 1e-9);
        assert_eq!(lr_at(&cfg, 0), 0.1);
        assert!((lr_at(&cfg, 48_000) - 0.001).abs() < 1e-9);
        assert!((lr_at(&cfg, 31_999) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn linear_decay() {
        let cfg = TrainConfig { base_lr: 0.6, lr_schedule: LrSchedule::LinearDecay, ..TrainConfig::quick(1000) };
        assert_eq!(lr_at(&cfg, 0), 0.6);
        assert!((lr_at(&cfg, 500) - 0.3).abs() < 1e-7);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::quick(100);
        assert!(cfg.validate().is_ok());
        cfg.lr_schedule = LrSchedule::StepDecay { milestones: vec![50, 40], factor: 0.1 };
        assert!(cfg.validate().is_err());
        cfg.lr_schedule = LrSchedule::StepDecay { milestones: vec![50, 100], factor: 0.1 };
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::quick(100);
        cfg.shift_freeze_fraction = 0.0;
        assert!(cfg.validate().is_err());
        let err = serde_json::from_str::<TrainConfig>(
            r#"{"batch_size":1,"base_lr":0.1,"lr_schedule":{"type":"linear_decay"},"total_iters":5,"bogus":1}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn l1_penalty_shrinks_without_crossing_zero() {
        let mut rng = seeded(90);
        let alpha: Vec<f32> = (0..16).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        let mut g = Graph::new(Shape::new(1, 16, 4, 4));
        let sp = ShiftParams::from_displacements(alpha.clone(), vec![0.0; 16]).unwrap();
        g.add("s", Layer::Shift { params: sp, mode: ShiftMode::SparseQuantized }, &[0]).unwrap();
        let cfg = TrainConfig { penalty: PenaltyConfig { lambda: 0.05, norm: Norm::L1 }, ..plain(0.1, 0.0, 0.0) };
        let mut sgd = Sgd::new();
        let mut prev = alpha;
        for iter in 0..50 {
            g.zero_grad();
            add_penalty_grads(&mut g, &cfg.penalty);
            sgd.step(&mut g, &cfg, iter);
            let now = g.shift_layers().next().unwrap().1.alpha.clone();
            for (p, n) in prev.iter().zip(&now) {
                if 0.1 * 0.05 < p.abs() {
                    assert!(n.abs() < p.abs(), "{p} -> {n}");
                    assert!(n.signum() == p.signum() || *n == 0.0, "{p} crossed to {n}");
                }
            }
            prev = now;
        }
    }

    #[test]
    fn metrics_csv_round_trip() {
        let rows = vec![
            MetricsRow {
                iter: 10,
                train_loss: 0.1 + 0.2,
                train_acc: 1.0 / 3.0,
                eval_acc: None,
                sparsity: 0.5,
                lr: 0.1,
            },
            MetricsRow {
                iter: 20,
                train_loss: 2.5e-9,
                train_acc: 0.0,
                eval_acc: Some(0.987654321),
                sparsity: 1.0,
                lr: 1e-3,
            },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), MetricsRow::CSV_HEADER);
        let parsed: Vec<MetricsRow> = lines.map(|l| MetricsRow::from_csv(l).unwrap()).collect();
        assert_eq!(parsed, rows);
    }

    /// Gaussian blobs: class k has mean +-1 in channel k.
    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = seeded(seed);
        let shape = Shape::new(n, 3, 4, 4);
        let mut data = Vec::with_capacity(shape.len());
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 3;
            for c in 0..3 {
                let mean = if c == label { 1.0 } else { -0.5 };
                for _ in 0..16 {
                    data.push(mean + rng.random_range(-0.8f32..0.8));
                }
            }
            labels.push(label);
        }
        Dataset::from_f32(shape, data, labels, 3).unwrap()
    }

    fn tiny_net(seed: u64) -> Graph {
        let mut rng = seeded(seed);
        let mut g = Graph::new(Shape::new(1, 3, 4, 4));
        let c = g.add("conv", Layer::Conv(ConvParams::he(3, 8, 1, 1, 0, false, &mut rng)), &[0]).unwrap();
        let b = g.add("bn", Layer::BatchNorm(BNParams::new(8)), &[c]).unwrap();
        let r = g.add("relu", Layer::Relu, &[b]).unwrap();
        let sp = crate::shift::grouped_displacements(8, 3, Default::default()).unwrap();
        let s = g.add("shift", Layer::Shift { params: sp, mode: ShiftMode::SparseQuantized }, &[r]).unwrap();
        let p = g.add("gap", Layer::GlobalAvgPool, &[s]).unwrap();
        g.add("fc", Layer::Linear(FcParams::he(8, 3, &mut rng)), &[p]).unwrap();
        g
    }

    #[test]
    fn zero_iterations_leave_graph_unchanged() {
        let mut g = tiny_net(1);
        let before = g.clone();
        let rows = train(&mut g, &blobs(30, 2), None, &TrainConfig::quick(0), |_, _| {}).unwrap();
        assert!(rows.is_empty());
        assert_eq!(g, before);
    }

    #[test]
    fn separable_data_trains_above_ninety_percent() {
        let mut g = tiny_net(3);
        let data = blobs(300, 4);
        let cfg = TrainConfig { log_interval: 50, ..TrainConfig::quick(200) };
        let rows = train(&mut g, &data, Some(&data), &cfg, |_, _| {}).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.last().unwrap().train_acc > 0.9, "{rows:?}");
        assert!(evaluate(&g, &data, 64, 0).unwrap() > 0.9);
    }

    #[test]
    fn training_is_deterministic_and_prefetch_preserves_order() {
        let data = blobs(90, 5);
        let cfg = TrainConfig {
            log_interval: 10,
            augment: Augment { hflip: true, crop_pad: 1 },
            penalty: PenaltyConfig { lambda: 1e-2, norm: Norm::L2 },
            ..TrainConfig::quick(30)
        };
        let run = |prefetch| {
            let mut g = tiny_net(6);
            let rows = train(&mut g, &data, None, &TrainConfig { prefetch, ..cfg.clone() }, |_, _| {}).unwrap();
            (g.state_dict(), rows)
        };
        let a = run(0);
        assert_eq!(a, run(0));
        assert_eq!(a, run(1));
        assert_eq!(a, run(3));
    }

    #[test]
    fn displacements_constant_after_freeze() {
        let data = blobs(90, 7);
        let cfg = TrainConfig {
            penalty: PenaltyConfig { lambda: 0.05, norm: Norm::L2 },
            shift_freeze_fraction: 0.5,
            log_interval: 5,
            ..TrainConfig::quick(20)
        };
        let mut g = tiny_net(8);
        let initial = g.shift_layers().next().unwrap().1.alpha.clone();
        let mut snapshots = Vec::new();
        train(&mut g, &data, None, &cfg, |row, graph| {
            let sp = graph.shift_layers().next().unwrap().1;
            snapshots.push((row.iter, sp.alpha.clone(), sp.beta.clone(), graph.state_dict()));
        })
        .unwrap();
        assert_eq!(snapshots.iter().map(|s| s.0).collect::<Vec<_>>(), vec![5, 10, 15, 20]);
        assert_ne!(snapshots[0].1, initial);
        for later in &snapshots[2..] {
            assert_eq!(later.1, snapshots[1].1);
            assert_eq!(later.2, snapshots[1].2);
        }
        assert_ne!(snapshots[3].3, snapshots[1].3);
    }

    #[test]
    fn diverging_loss_aborts_with_iteration() {
        let mut g = tiny_net(9);
        let data = blobs(30, 10);
        let cfg = TrainConfig { base_lr: 1e30, momentum: 0.0, ..TrainConfig::quick(50) };
        match train(&mut g, &data, None, &cfg, |_, _| {}) {
            Err(Error::TrainingDiverged { iter, .. }) => assert!(iter > 0 && iter < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn ablation_order_is_most_sparse_first() {
        let mut g = Graph::new(Shape::new(1, 2, 4, 4));
        let mk = |a: Vec<f32>| ShiftParams::from_displacements(a, vec![0.0, 0.0]).unwrap();
        let a =
            g.add("a", Layer::Shift { params: mk(vec![1.0, 1.0]), mode: ShiftMode::SparseQuantized }, &[0]).unwrap();
        let b =
            g.add("b", Layer::Shift { params: mk(vec![0.0, 0.0]), mode: ShiftMode::SparseQuantized }, &[a]).unwrap();
        g.add("c", Layer::Shift { params: mk(vec![0.0, 1.0]), mode: ShiftMode::SparseQuantized }, &[b]).unwrap();
        let order: Vec<String> = shift_layers_by_sparsity(&g).into_iter().map(|(n, _)| n).collect();
        assert_eq!(order, vec!["b", "c", "a"]);
    }
}
