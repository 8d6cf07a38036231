//! CIFAR-10 / CIFAR-100 binary-format loader.
//!
//! Per-channel normalisation constants are computed from the training images on
//! first load and cached as `normalization.json` in the dataset directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparse_shift::data::Dataset;
use sparse_shift::Shape;

use crate::error::{CliError, CliResult};

pub const IMAGE_BYTES: usize = 3 * 32 * 32;
const NORMALIZATION_FILE: &str = "normalization.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Cifar10,
    /// Fine (100-class) labels.
    Cifar100,
}

impl Which {
    fn label_bytes(self) -> usize {
        match self {
            Which::Cifar10 => 1,
            Which::Cifar100 => 2,
        }
    }

    fn classes(self) -> usize {
        match self {
            Which::Cifar10 => 10,
            Which::Cifar100 => 100,
        }
    }

    fn files(self, train: bool) -> Vec<(&'static str, usize)> {
        match (self, train) {
            (Which::Cifar10, true) => vec![
                ("data_batch_1.bin", 10_000),
                ("data_batch_2.bin", 10_000),
                ("data_batch_3.bin", 10_000),
                ("data_batch_4.bin", 10_000),
                ("data_batch_5.bin", 10_000),
            ],
            (Which::Cifar10, false) => vec![("test_batch.bin", 10_000)],
            (Which::Cifar100, true) => vec![("train.bin", 50_000)],
            (Which::Cifar100, false) => vec![("test.bin", 10_000)],
        }
    }
}

/// Decoded records: labels and channel-planar pixels, `IMAGE_BYTES` per image.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSplit {
    pub labels: Vec<usize>,
    pub pixels: Vec<u8>,
}

/// Parses one binary batch file's contents, which must hold exactly `records` records.
pub fn parse_records(bytes: &[u8], which: Which, records: usize, path: &Path) -> CliResult<RawSplit> {
    let record = which.label_bytes() + IMAGE_BYTES;
    let expected = (record * records) as u64;
    if bytes.len() as u64 != expected {
        return Err(CliError::CorruptDataset { path: path.to_path_buf(), expected, actual: bytes.len() as u64 });
    }
    let mut split = RawSplit { labels: Vec::with_capacity(records), pixels: Vec::with_capacity(records * IMAGE_BYTES) };
    for rec in bytes.chunks_exact(record) {
        let label = rec[which.label_bytes() - 1] as usize;
        if label >= which.classes() {
            return Err(CliError::Validation(format!(
                "{}: label {label} out of range for {} classes",
                path.display(),
                which.classes()
            )));
        }
        split.labels.push(label);
        split.pixels.extend_from_slice(&rec[which.label_bytes()..]);
    }
    Ok(split)
}

/// Serialises records back to the binary format (coarse label 0 for CIFAR-100).
pub fn encode_records(split: &RawSplit, which: Which) -> Vec<u8> {
    let mut out = Vec::with_capacity(split.labels.len() * (which.label_bytes() + IMAGE_BYTES));
    for (label, image) in split.labels.iter().zip(split.pixels.chunks_exact(IMAGE_BYTES)) {
        if which == Which::Cifar100 {
            out.push(0);
        }
        out.push(*label as u8);
        out.extend_from_slice(image);
    }
    out
}

pub fn read_split(dir: &Path, which: Which, train: bool) -> CliResult<RawSplit> {
    let mut all = RawSplit { labels: Vec::new(), pixels: Vec::new() };
    for (name, records) in which.files(train) {
        let path = dir.join(name);
        let bytes =
            std::fs::read(&path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let part = parse_records(&bytes, which, records, &path)?;
        all.labels.extend(part.labels);
        all.pixels.extend(part.pixels);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    /// Per-channel mean and population standard deviation of pixel values scaled to `[0, 1]`.
    pub fn from_pixels(pixels: &[u8]) -> Self {
        let plane = IMAGE_BYTES / 3;
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        for image in pixels.chunks_exact(IMAGE_BYTES) {
            for c in 0..3 {
                for &p in &image[c * plane..(c + 1) * plane] {
                    let v = p as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let count = (pixels.len() / 3).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        Normalization {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: (0..3).map(|c| ((sq[c] / count - mean[c] * mean[c]).max(1e-12)).sqrt() as f32).collect(),
        }
    }

    fn valid(&self) -> bool {
        self.mean.len() == 3 && self.std.len() == 3 && self.std.iter().all(|&s| s > 0.0 && s.is_finite())
    }
}

fn cached_normalization(dir: &Path, train: &RawSplit) -> Normalization {
    let path: PathBuf = dir.join(NORMALIZATION_FILE);
    if let Some(cached) = std::fs::read(&path)
        .ok()
        .and_then(|b| serde_json::from_slice::<Normalization>(&b).ok())
        .filter(Normalization::valid)
    {
        return cached;
    }
    let norm = Normalization::from_pixels(&train.pixels);
    // A read-only dataset directory only loses the cache, not the load.
    if let Ok(json) = serde_json::to_vec_pretty(&norm) {
        let _ = std::fs::write(&path, json);
    }
    norm
}

fn to_dataset(split: RawSplit, which: Which, norm: &Normalization) -> CliResult<Dataset> {
    Ok(Dataset::from_u8(
        Shape::new(split.labels.len(), 3, 32, 32),
        split.pixels,
        split.labels,
        which.classes(),
        norm.mean.clone(),
        norm.std.clone(),
    )?)
}

/// Loads the train and test splits of a CIFAR directory.
pub fn load_cifar(dir: &Path, which: Which) -> CliResult<(Dataset, Dataset)> {
    let train = read_split(dir, which, true)?;
    let test = read_split(dir, which, false)?;
    let norm = cached_normalization(dir, &train);
    Ok((to_dataset(train, which, &norm)?, to_dataset(test, which, &norm)?))
}
