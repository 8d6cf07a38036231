//! JSON run configuration. Every struct rejects unknown keys, and all checks run
//! before any data is loaded or any training starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparse_shift::arch::ArchSpec;
use sparse_shift::bench::KernelCase;
use sparse_shift::train::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Cifar10 {
        path: PathBuf,
    },
    Cifar100 {
        path: PathBuf,
    },
    SyntheticTranslation {
        classes: usize,
        size: usize,
        samples: usize,
        #[serde(default = "default_test_samples")]
        test_samples: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_test_samples() -> usize {
    500
}

impl DatasetSpec {
    pub fn classes(&self) -> usize {
        match self {
            DatasetSpec::Cifar10 { .. } => 10,
            DatasetSpec::Cifar100 { .. } => 100,
            DatasetSpec::SyntheticTranslation { classes, .. } => *classes,
        }
    }

    fn validate(&self) -> CliResult<()> {
        match self {
            DatasetSpec::Cifar10 { path } | DatasetSpec::Cifar100 { path } => {
                if !path.is_dir() {
                    return Err(CliError::Validation(format!("dataset path {} is not a directory", path.display())));
                }
            }
            DatasetSpec::SyntheticTranslation { classes, size, samples, test_samples, .. } => {
                if !(2..=8).contains(classes) || *size < 8 || *samples == 0 || *test_samples == 0 {
                    return Err(CliError::Validation(format!(
                        "synthetic_translation needs 2..=8 classes, size >= 8 and positive sample counts \
                         (got classes={classes}, size={size}, samples={samples}, test_samples={test_samples})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Write `ckpt_iter{N}.ckpt` at every metrics row whose iteration is a multiple of this (0 = off).
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Config {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Syntax and schema checks only; paths and semantic constraints are not checked.
    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let cfg = Self::load_unchecked(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a config whose dataset path may be replaced before use.
    pub fn load_unchecked(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        self.dataset.validate()?;
        let (net, data) = (self.arch.classes(), self.dataset.classes());
        if net < data {
            return Err(CliError::Validation(format!("network has {net} outputs but the dataset has {data} classes")));
        }
        let input = self.arch.input_shape();
        let expected_c = match self.dataset {
            DatasetSpec::SyntheticTranslation { .. } => 2,
            _ => 3,
        };
        if input.c != expected_c {
            return Err(CliError::Validation(format!(
                "network expects {} input channels but the dataset provides {expected_c}",
                input.c
            )));
        }
        if let DatasetSpec::SyntheticTranslation { size, .. } = self.dataset {
            if input.h != size {
                return Err(CliError::Validation(format!(
                    "network input size {} differs from synthetic size {size}",
                    input.h
                )));
            }
        }
        self.arch.build(0).map(drop).map_err(|e| CliError::Validation(format!("arch: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionSpec {
    pub arch: ArchSpec,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_decomp_runs")]
    pub runs: usize,
    /// Overrides every shift layer's displacements with this fraction of unshifted channels.
    #[serde(default)]
    pub shift_sparsity: Option<f64>,
}

fn default_batch() -> usize {
    1
}

fn default_decomp_runs() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub cases: Vec<KernelCase>,
    #[serde(default)]
    pub decomposition: Vec<DecompositionSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl BenchConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read bench config {}: {e}", path.display())))?;
        let cfg: BenchConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("bench config: {e}")))?;
        for case in &cfg.cases {
            case.validate()?;
        }
        for d in &cfg.decomposition {
            if d.batch == 0 || d.runs == 0 {
                return Err(CliError::Validation("decomposition batch and runs must be >= 1".into()));
            }
            if d.shift_sparsity.is_some_and(|s| !(0.0..=1.0).contains(&s)) {
                return Err(CliError::Validation("decomposition shift_sparsity must be in [0, 1]".into()));
            }
        }
        if cfg.cases.is_empty() && cfg.decomposition.is_empty() {
            return Err(CliError::Validation("bench config lists no cases and no decompositions".into()));
        }
        Ok(cfg)
    }
}
