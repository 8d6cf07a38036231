//! In-memory labelled image datasets, augmentation, and the synthetic translation task.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shift::kernels::shift_plane;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
enum Pixels {
    F32(Vec<f32>),
    /// Raw bytes normalised on access as `(v / 255 - mean[c]) / std[c]`.
    U8 {
        data: Vec<u8>,
        mean: Vec<f32>,
        std: Vec<f32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n` is the sample count.
    shape: Shape,
    pixels: Pixels,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn from_f32(shape: Shape, data: Vec<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        Self::check(shape, data.len(), &labels, classes)?;
        Ok(Dataset { shape, pixels: Pixels::F32(data), labels, classes })
    }

    pub fn from_u8(
        shape: Shape,
        data: Vec<u8>,
        labels: Vec<usize>,
        classes: usize,
        mean: Vec<f32>,
        std: Vec<f32>,
    ) -> Result<Self> {
        Self::check(shape, data.len(), &labels, classes)?;
        if mean.len() != shape.c || std.len() != shape.c {
            return Err(Error::dim("dataset", "c", shape.c, mean.len().min(std.len())));
        }
        if std.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::invalid("dataset", "normalisation std must be positive"));
        }
        Ok(Dataset { shape, pixels: Pixels::U8 { data, mean, std }, labels, classes })
    }

    fn check(shape: Shape, len: usize, labels: &[usize], classes: usize) -> Result<()> {
        if len != shape.len() {
            return Err(Error::invalid("dataset", format!("expected {} values, got {len}", shape.len())));
        }
        if labels.len() != shape.n {
            return Err(Error::dim("dataset", "n", shape.n, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid("dataset", format!("label {bad} >= class count {classes}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.shape.n
    }

    pub fn is_empty(&self) -> bool {
        self.shape.n == 0
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Shape of one sample (`n == 1`).
    pub fn sample_shape(&self) -> Shape {
        self.shape.with_n(1)
    }

    /// Raw bytes of sample `idx` when backed by `u8` storage.
    pub fn raw_u8(&self, idx: usize) -> Option<&[u8]> {
        let k = self.sample_shape().len();
        match &self.pixels {
            Pixels::U8 { data, .. } => Some(&data[idx * k..(idx + 1) * k]),
            Pixels::F32(_) => None,
        }
    }

    fn write_sample(&self, idx: usize, dst: &mut [f32]) {
        let k = self.sample_shape().len();
        match &self.pixels {
            Pixels::F32(data) => dst.copy_from_slice(&data[idx * k..(idx + 1) * k]),
            Pixels::U8 { data, mean, std } => {
                let plane = self.shape.plane();
                let src = &data[idx * k..(idx + 1) * k];
                for (c, (d, s)) in dst.chunks_mut(plane).zip(src.chunks(plane)).enumerate() {
                    for (d, &v) in d.iter_mut().zip(s) {
                        *d = (v as f32 / 255.0 - mean[c]) / std[c];
                    }
                }
            }
        }
    }

    /// Gathers the given samples into a batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::invalid("dataset_batch", "empty batch"));
        }
        let k = self.sample_shape().len();
        let mut data = vec![0.0f32; indices.len() * k];
        for (dst, &i) in data.chunks_mut(k).zip(indices) {
            if i >= self.len() {
                return Err(Error::invalid("dataset_batch", format!("index {i} out of range")));
            }
            self.write_sample(i, dst);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(self.shape.with_n(indices.len()), data)?, labels))
    }

    /// Consecutive samples `start..start + count` as a new dataset.
    pub fn slice(&self, start: usize, count: usize) -> Result<Dataset> {
        if count == 0 || start + count > self.len() {
            return Err(Error::invalid("dataset_slice", format!("{start}+{count} exceeds {}", self.len())));
        }
        let k = self.sample_shape().len();
        let pixels = match &self.pixels {
            Pixels::F32(d) => Pixels::F32(d[start * k..(start + count) * k].to_vec()),
            Pixels::U8 { data, mean, std } => {
                Pixels::U8 { data: data[start * k..(start + count) * k].to_vec(), mean: mean.clone(), std: std.clone() }
            }
        };
        Ok(Dataset {
            shape: self.shape.with_n(count),
            pixels,
            labels: self.labels[start..start + count].to_vec(),
            classes: self.classes,
        })
    }
}

/// Random zero-padded crop followed by an optional horizontal flip, per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augment {
    pub hflip: bool,
    pub crop_pad: usize,
}

impl Augment {
    pub fn is_identity(&self) -> bool {
        !self.hflip && self.crop_pad == 0
    }

    pub fn apply<R: Rng + ?Sized>(&self, batch: &mut Tensor, rng: &mut R) {
        if self.is_identity() {
            return;
        }
        let s = batch.shape();
        let mut scratch = vec![0.0f32; s.plane()];
        let pad = self.crop_pad as i64;
        for n in 0..s.n {
            // A crop at offset (dy, dx) of the padded image is a zero-filled shift.
            let (dy, dx) = if pad > 0 {
                (rng.random_range(-pad..=pad) as isize, rng.random_range(-pad..=pad) as isize)
            } else {
                (0, 0)
            };
            let flip = self.hflip && rng.random::<bool>();
            for c in 0..s.c {
                let plane = batch.plane_mut(n, c);
                if dy != 0 || dx != 0 {
                    shift_plane(plane, &mut scratch, s.h, s.w, dy, dx);
                    plane.copy_from_slice(&scratch);
                }
                if flip {
                    for row in plane.chunks_mut(s.w) {
                        row.reverse();
                    }
                }
            }
        }
    }
}

/// Endless shuffled mini-batch stream. Each pass over the data uses a fresh
/// permutation; a trailing partial batch is dropped.
pub struct BatchSampler<'a> {
    data: &'a Dataset,
    batch: usize,
    augment: Augment,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> BatchSampler<'a> {
    pub fn new(data: &'a Dataset, batch: usize, augment: Augment, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("batch_sampler", "dataset is empty"));
        }
        if batch == 0 {
            return Err(Error::invalid("batch_sampler", "batch size must be >= 1"));
        }
        let batch = batch.min(data.len());
        Ok(BatchSampler {
            data,
            batch,
            augment,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..data.len()).collect(),
            cursor: data.len(),
        })
    }

    pub fn next_batch(&mut self) -> Result<(Tensor, Vec<usize>)> {
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let idx = &self.order[self.cursor..self.cursor + self.batch];
        self.cursor += self.batch;
        let (mut x, y) = self.data.batch(idx)?;
        self.augment.apply(&mut x, &mut self.rng);
        Ok((x, y))
    }
}

/// Displacements for the translation task, axis-aligned first.
pub const DIRECTIONS: [(isize, isize); 8] = [(0, 1), (1, 0), (0, -1), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Two-channel translation task. Channel 0 is a random `+-1` field; channel 1 is
/// channel 0 circularly rolled by the class direction, plus Gaussian noise.
/// Every pixel pair `(ch0[i,j], ch1[i,j])` has the same distribution for every
/// class, so a network without spatial context is at chance.
pub fn synthetic_translation(classes: usize, size: usize, samples: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 || classes > DIRECTIONS.len() {
        return Err(Error::invalid("synthetic_translation", format!("classes must be in 2..=8, got {classes}")));
    }
    if size < 8 {
        return Err(Error::invalid("synthetic_translation", format!("size must be >= 8, got {size}")));
    }
    if samples == 0 {
        return Err(Error::invalid("synthetic_translation", "samples must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.3).expect("valid std");
    let plane = size * size;
    let mut data = vec![0.0f32; samples * 2 * plane];
    let mut labels = Vec::with_capacity(samples);
    for (i, sample) in data.chunks_mut(2 * plane).enumerate() {
        let label = i % classes;
        let (dy, dx) = DIRECTIONS[label];
        let (base, rolled) = sample.split_at_mut(plane);
        for v in base.iter_mut() {
            *v = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        for r in 0..size {
            for c in 0..size {
                let sr = (r as isize + dy).rem_euclid(size as isize) as usize;
                let sc = (c as isize + dx).rem_euclid(size as isize) as usize;
                rolled[r * size + c] = base[sr * size + sc] + noise.sample(&mut rng);
            }
        }
        labels.push(label);
    }
    Dataset::from_f32(Shape::new(samples, 2, size, size), data, labels, classes)
}
