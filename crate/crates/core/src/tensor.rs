//! Dense rank-4 feature maps in NCHW order.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Extent of a rank-4 tensor: batch, channels, rows, cols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub const fn with_n(self, n: usize) -> Self {
        Shape { n, ..self }
    }

    pub const fn with_hw(self, h: usize, w: usize) -> Self {
        Shape { h, w, ..self }
    }

    fn validate(&self) -> Result<()> {
        for (axis, v) in [("n", self.n), ("c", self.c), ("h", self.h), ("w", self.w)] {
            if v == 0 {
                return Err(Error::invalid("tensor", format!("axis `{axis}` must be >= 1")));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Contiguous float32 tensor; element `(n, c, i, j)` lives at `((n*C + c)*H + i)*W + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::dim("tensor", "data", shape.len(), data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        assert!(!shape.is_empty(), "tensor dimensions must be >= 1, got {shape}");
        Tensor { shape, data: vec![value; shape.len()] }
    }

    /// Gaussian samples with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f32, rng: &mut R) -> Self {
        let data = (0..shape.len())
            .map(|_| {
                let z: f32 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor::new(shape, data).expect("randn shape")
    }

    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f32, hi: f32, rng: &mut R) -> Self {
        let data = (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::new(shape, data).expect("uniform shape")
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + i) * self.shape.w + j
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, i: usize, j: usize) -> f32 {
        self.data[self.index(n, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, v: f32) {
        let idx = self.index(n, c, i, j);
        self.data[idx] = v;
    }

    /// The `h*w` plane of channel `c` in sample `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape("add", self.shape, other.shape)?;
        Ok(Tensor { shape: self.shape, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        check_same_shape("add_assign", self.shape, other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Inner product accumulated in f64.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        check_same_shape("dot", self.shape, other.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a as f64 * b as f64).sum())
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, x| m.max(x.abs()))
    }

    /// Copies samples `[start, start + count)` along the batch axis.
    pub fn batch_slice(&self, start: usize, count: usize) -> Result<Tensor> {
        if count == 0 || start + count > self.shape.n {
            return Err(Error::invalid(
                "batch_slice",
                format!("range {start}..{} outside batch {}", start + count, self.shape.n),
            ));
        }
        let per = self.shape.c * self.shape.plane();
        Tensor::new(self.shape.with_n(count), self.data[start * per..(start + count) * per].to_vec())
    }
}

pub(crate) fn check_same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    for (axis, x, y) in [("n", a.n, b.n), ("c", a.c, b.c), ("h", a.h, b.h), ("w", a.w, b.w)] {
        if x != y {
            return Err(Error::dim(op, axis, x, y));
        }
    }
    Ok(())
}

/// Splits channels into `[0, first)` and `[first, c)`.
pub fn channel_split(input: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
    let s = input.shape();
    if first == 0 || first >= s.c {
        return Err(Error::SplitOutOfRange { first, channels: s.c });
    }
    Ok((channel_slice(input, 0, first)?, channel_slice(input, first, s.c - first)?))
}

/// Copies channels `[start, start + count)`.
pub fn channel_slice(input: &Tensor, start: usize, count: usize) -> Result<Tensor> {
    let s = input.shape();
    if count == 0 || start + count > s.c {
        return Err(Error::SplitOutOfRange { first: start + count, channels: s.c });
    }
    let p = s.plane();
    let mut data = Vec::with_capacity(s.n * count * p);
    for n in 0..s.n {
        let base = (n * s.c + start) * p;
        data.extend_from_slice(&input.data()[base..base + count * p]);
    }
    Tensor::new(s.with_c(count), data)
}

/// Concatenates along the channel axis.
pub fn channel_concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    for (axis, x, y) in [("n", sa.n, sb.n), ("h", sa.h, sb.h), ("w", sa.w, sb.w)] {
        if x != y {
            return Err(Error::dim("channel_concat", axis, x, y));
        }
    }
    let p = sa.plane();
    let c = sa.c + sb.c;
    let mut data = Vec::with_capacity(sa.n * c * p);
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * sa.c * p..(n + 1) * sa.c * p]);
        data.extend_from_slice(&b.data()[n * sb.c * p..(n + 1) * sb.c * p]);
    }
    Tensor::new(sa.with_c(c), data)
}
