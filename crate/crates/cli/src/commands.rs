//! Subcommand implementations. Each writes its human-readable report to `out`
//! and returns a structured summary for programmatic callers.

use std::io::Write;
use std::path::{Path, PathBuf};

use sparse_shift::arch::ArchSpec;
use sparse_shift::bench::{decompose_graph, run_kernel_bench, set_shift_sparsity, BenchReport};
use sparse_shift::data::{synthetic_translation, Dataset};
use sparse_shift::graph::{CostReport, Graph};
use sparse_shift::train::{evaluate, shift_layers_by_sparsity, train, write_metrics_csv, LrSchedule, MetricsRow};

use crate::checkpoint::{Checkpoint, Metadata};
use crate::cifar::{load_cifar, Which};
use crate::config::{BenchConfig, Config, DatasetSpec};
use crate::error::{CliError, CliResult};

/// Number of trailing metrics rows stored in checkpoint metadata.
pub const METRICS_TAIL: usize = 5;
const EVAL_BATCH: usize = 100;

/// Command-line overrides applied on top of a loaded [`Config`].
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub iters: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut Config) -> CliResult<()> {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(iters) = self.iters {
            let old = cfg.train.total_iters;
            if let LrSchedule::StepDecay { milestones, .. } = &mut cfg.train.lr_schedule {
                // Milestones keep their relative position in the shortened schedule.
                for m in milestones.iter_mut() {
                    *m = (*m as u128 * iters as u128 / old.max(1) as u128) as usize;
                }
                milestones.retain(|&m| m > 0 && m < iters);
                milestones.dedup();
            }
            cfg.train.total_iters = iters;
        }
        cfg.validate()
    }
}

/// Train and test splits described by `spec`. Synthetic test data uses `seed + 1`.
pub fn load_datasets(spec: &DatasetSpec) -> CliResult<(Dataset, Dataset)> {
    match spec {
        DatasetSpec::Cifar10 { path } => load_cifar(path, Which::Cifar10),
        DatasetSpec::Cifar100 { path } => load_cifar(path, Which::Cifar100),
        DatasetSpec::SyntheticTranslation { classes, size, samples, test_samples, seed } => Ok((
            synthetic_translation(*classes, *size, *samples, *seed)?,
            synthetic_translation(*classes, *size, *test_samples, seed.wrapping_add(1))?,
        )),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::io("writing report", e))
}

fn tail(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    rows[rows.len().saturating_sub(METRICS_TAIL)..].to_vec()
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub rows: Vec<MetricsRow>,
    pub checkpoint: PathBuf,
    pub snapshots: Vec<PathBuf>,
}

/// Trains `cfg.arch` from scratch. Writes `metrics.csv`, the final `model.ckpt`, and
/// `ckpt_iter{N}.ckpt` at every logged iteration that is a multiple of `checkpoint_every`.
pub fn cmd_train(cfg: &Config, out: &mut dyn Write) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let (train_data, test_data) = load_datasets(&cfg.dataset)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    let resolved = serde_json::to_string_pretty(cfg).map_err(|e| CliError::Validation(e.to_string()))?;
    write_file(&dir.join("config.json"), resolved)?;

    let seed = cfg.train.seed;
    let mut graph = cfg.arch.build(seed)?;
    let mut logged: Vec<MetricsRow> = Vec::new();
    let mut snapshots = Vec::new();
    let mut failure: Option<CliError> = None;
    let rows = train(&mut graph, &train_data, Some(&test_data), &cfg.train, |row, g| {
        logged.push(row.clone());
        let _ = writeln!(
            out,
            "iter {:>6}  loss {:.4}  train_acc {:.3}  eval_acc {}  sparsity {:.3}  lr {}",
            row.iter,
            row.train_loss,
            row.train_acc,
            row.eval_acc.map_or("-".into(), |a| format!("{a:.3}")),
            row.sparsity,
            row.lr
        );
        if failure.is_some() || cfg.checkpoint_every == 0 || row.iter % cfg.checkpoint_every != 0 {
            return;
        }
        let path = dir.join(format!("ckpt_iter{}.ckpt", row.iter));
        let meta = Metadata { arch: cfg.arch.clone(), iter: row.iter, seed, metrics_tail: tail(&logged) };
        match Checkpoint::from_graph(g, meta).save(&path) {
            Ok(()) => snapshots.push(path),
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }

    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &rows).map_err(|e| CliError::io("formatting metrics", e))?;
    write_file(&dir.join("metrics.csv"), csv)?;
    let checkpoint = dir.join("model.ckpt");
    let meta = Metadata { arch: cfg.arch.clone(), iter: cfg.train.total_iters, seed, metrics_tail: tail(&rows) };
    Checkpoint::from_graph(&graph, meta).save(&checkpoint)?;
    emit(out, &format!("wrote {}\n", checkpoint.display()))?;
    Ok(TrainSummary { rows, checkpoint, snapshots })
}

fn checked_graph(ck: &Checkpoint, cfg: &Config) -> CliResult<Graph> {
    let graph = ck.to_graph()?;
    let (net, data) = (graph.output_shape().c, cfg.dataset.classes());
    let (input, expected) = (graph.input_shape(), cfg.arch.input_shape());
    if net < data || input.c != expected.c || input.h != expected.h || input.w != expected.w {
        return Err(CliError::Validation(format!(
            "checkpoint network (input {input}, {net} outputs) does not fit the configured dataset \
             (input {expected}, {data} classes)"
        )));
    }
    Ok(graph)
}

/// Top-1 test accuracy of a checkpoint. Reads the checkpoint only.
pub fn cmd_eval(cfg: &Config, checkpoint: &Path, out: &mut dyn Write) -> CliResult<f64> {
    let ck = Checkpoint::load(checkpoint)?;
    let graph = checked_graph(&ck, cfg)?;
    let (_, test) = load_datasets(&cfg.dataset)?;
    let acc = evaluate(&graph, &test, EVAL_BATCH, 0)?;
    emit(out, &format!("accuracy {acc:.4} ({} samples)\n", test.len()))?;
    Ok(acc)
}

/// Reads either a full run config or a bare architecture document.
pub fn load_arch(path: &Path) -> CliResult<ArchSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if value.get("arch").is_some() {
        return Ok(Config::from_json(&text)?.arch);
    }
    let arch: ArchSpec = serde_json::from_value(value).map_err(|e| CliError::Validation(format!("arch: {e}")))?;
    arch.build(0).map_err(|e| CliError::Validation(format!("arch: {e}")))?;
    Ok(arch)
}

/// Multiply-adds and parameters for one sample at the architecture's native input size.
pub fn cmd_cost(arch: &ArchSpec, out: &mut dyn Write) -> CliResult<CostReport> {
    let graph = arch.build(0)?;
    let cost = graph.cost_for(arch.input_shape())?;
    emit(
        out,
        &format!(
            "input   {}\nmadds   {} ({:.1}M)\nparams  {} ({:.2}M)\n",
            arch.input_shape(),
            cost.madds,
            cost.madds as f64 / 1e6,
            cost.params,
            cost.params as f64 / 1e6
        ),
    )?;
    Ok(cost)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSparsity {
    pub name: String,
    pub unshifted: usize,
    pub channels: usize,
}

impl LayerSparsity {
    pub fn sparsity(&self) -> f64 {
        if self.channels == 0 {
            1.0
        } else {
            self.unshifted as f64 / self.channels as f64
        }
    }
}

/// Per-layer unshifted channel counts in graph order, followed by the total row.
pub fn sparsity_table(graph: &Graph) -> (Vec<LayerSparsity>, LayerSparsity) {
    let layers: Vec<LayerSparsity> = graph
        .shift_layers()
        .map(|(name, sp, _)| LayerSparsity {
            name: name.strip_suffix(".shift").unwrap_or(name).to_string(),
            unshifted: sp.unshifted_count(),
            channels: sp.channels(),
        })
        .collect();
    let total = LayerSparsity {
        name: "Total".into(),
        unshifted: layers.iter().map(|l| l.unshifted).sum(),
        channels: layers.iter().map(|l| l.channels).sum(),
    };
    (layers, total)
}

pub fn cmd_sparsity(checkpoint: &Path, out: &mut dyn Write) -> CliResult<(Vec<LayerSparsity>, LayerSparsity)> {
    let graph = Checkpoint::load(checkpoint)?.to_graph()?;
    let (layers, total) = sparsity_table(&graph);
    let width = layers.iter().map(|l| l.name.len()).max().unwrap_or(0).max(5);
    let mut text = format!("{:<width$}  {:>15}  {:>8}\n", "layer", "unshifted/total", "sparsity");
    for row in layers.iter().chain(std::iter::once(&total)) {
        let ratio = format!("{} / {}", row.unshifted, row.channels);
        text += &format!("{:<width$}  {:>15}  {:>7.1}%\n", row.name, ratio, 100.0 * row.sparsity());
    }
    emit(out, &text)?;
    Ok((layers, total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub removed: usize,
    pub accuracy: f64,
    pub layers: Vec<String>,
}

/// Removes the `k` highest-sparsity shift layers (every `k` from 0 to all layers
/// when `k` is `None`) and reports test accuracy after each removal.
pub fn cmd_ablate(
    cfg: &Config,
    checkpoint: &Path,
    k: Option<usize>,
    out: &mut dyn Write,
) -> CliResult<Vec<AblationRow>> {
    let ck = Checkpoint::load(checkpoint)?;
    let graph = checked_graph(&ck, cfg)?;
    let order: Vec<String> = shift_layers_by_sparsity(&graph).into_iter().map(|(name, _)| name).collect();
    let counts: Vec<usize> = match k {
        Some(k) if k > order.len() => {
            return Err(CliError::Validation(format!(
                "cannot remove {k} shift layers; the network has {}",
                order.len()
            )))
        }
        Some(k) => vec![k],
        None => (0..=order.len()).collect(),
    };
    let (_, test) = load_datasets(&cfg.dataset)?;
    let mut text = String::from("removed,accuracy,layers\n");
    let mut rows = Vec::with_capacity(counts.len());
    for removed in counts {
        let mut g = graph.clone();
        g.remove_shift_layers(&order[..removed])?;
        let accuracy = evaluate(&g, &test, EVAL_BATCH, 0)?;
        let layers = order[..removed].to_vec();
        text += &format!("{removed},{accuracy},{}\n", layers.join(" "));
        rows.push(AblationRow { removed, accuracy, layers });
    }
    emit(out, &text)?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct BenchSummary {
    pub kernels: Option<BenchReport>,
    pub decompositions: Vec<BenchReport>,
}

/// Runs every kernel case and graph decomposition. With `out_dir`, also writes
/// `kernels.csv` and `decomposition_{i}.csv`.
pub fn cmd_bench(cfg: &BenchConfig, out_dir: Option<&Path>, out: &mut dyn Write) -> CliResult<BenchSummary> {
    if let Some(dir) = out_dir {
        create_dir(dir)?;
    }
    let kernels = if cfg.cases.is_empty() {
        None
    } else {
        let rows = cfg.cases.iter().map(|case| run_kernel_bench(case, cfg.seed)).collect::<Result<Vec<_>, _>>()?;
        let threads = cfg.cases.iter().map(|c| c.threads).max().unwrap_or(1);
        let report = BenchReport::new(threads, rows);
        emit(out, &report.to_text())?;
        if let Some(dir) = out_dir {
            write_file(&dir.join("kernels.csv"), report.to_csv())?;
        }
        Some(report)
    };
    let mut decompositions = Vec::with_capacity(cfg.decomposition.len());
    for (i, d) in cfg.decomposition.iter().enumerate() {
        let mut graph = d.arch.build(cfg.seed)?;
        if let Some(s) = d.shift_sparsity {
            set_shift_sparsity(&mut graph, s, cfg.seed);
        }
        let report = decompose_graph(&graph, d.arch.input_shape().with_n(d.batch), d.runs, cfg.seed)?;
        emit(out, &format!("\n# decomposition {i}\n{}", report.to_text()))?;
        if let Some(dir) = out_dir {
            write_file(&dir.join(format!("decomposition_{i}.csv")), report.to_csv())?;
        }
        decompositions.push(report);
    }
    Ok(BenchSummary { kernels, decompositions })
}
