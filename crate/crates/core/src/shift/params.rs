use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel learnable displacement pair with gradient accumulators.
///
/// `alpha` moves along rows, `beta` along columns, both in pixels:
/// `out[c, i, j] = in[c, i + alpha_c, j + beta_c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftParams {
    pub alpha: Vec<f32>,
    pub beta: Vec<f32>,
    pub grad_alpha: Vec<f32>,
    pub grad_beta: Vec<f32>,
    /// Frozen displacements produce no gradients and are never updated.
    pub frozen: bool,
}

impl ShiftParams {
    pub fn zeros(channels: usize) -> Self {
        ShiftParams {
            alpha: vec![0.0; channels],
            beta: vec![0.0; channels],
            grad_alpha: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
            frozen: false,
        }
    }

    pub fn from_displacements(alpha: Vec<f32>, beta: Vec<f32>) -> Result<Self> {
        if alpha.len() != beta.len() {
            return Err(Error::dim("shift_params", "beta", alpha.len(), beta.len()));
        }
        if alpha.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(Error::invalid("shift_params", "displacements must be finite"));
        }
        let c = alpha.len();
        Ok(ShiftParams { alpha, beta, grad_alpha: vec![0.0; c], grad_beta: vec![0.0; c], frozen: false })
    }

    pub fn channels(&self) -> usize {
        self.alpha.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad_alpha.fill(0.0);
        self.grad_beta.fill(0.0);
    }

    /// Integer displacement actually applied by the quantized forward, per channel.
    pub fn rounded(&self) -> Vec<(isize, isize)> {
        self.alpha.iter().zip(&self.beta).map(|(&a, &b)| (round_displacement(a), round_displacement(b))).collect()
    }

    /// Channels whose rounded displacement is `(0, 0)`.
    pub fn unshifted_count(&self) -> usize {
        self.rounded().iter().filter(|&&d| d == (0, 0)).count()
    }
}

/// Round half away from zero.
#[inline]
pub fn round_displacement(v: f32) -> isize {
    v.round() as isize
}

/// Fraction of channels that need no memory movement at inference.
pub fn shift_sparsity(sp: &ShiftParams) -> f64 {
    if sp.channels() == 0 {
        return 1.0;
    }
    sp.unshifted_count() as f64 / sp.channels() as f64
}

/// How a shift layer obtains and learns its displacements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShiftMode {
    /// Fixed heuristic assignment covering every offset of a `kernel x kernel` window.
    Grouped { kernel: usize },
    /// Real-valued displacements applied by bilinear interpolation.
    ActiveBilinear,
    /// Learnable displacements, rounded in the forward pass (sparse shift layer).
    SparseQuantized,
}

impl ShiftMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ShiftMode::Grouped { kernel } if kernel < 3 || kernel.is_multiple_of(2) => {
                Err(Error::InvalidKernel(kernel))
            }
            _ => Ok(()),
        }
    }

    pub fn is_learnable(&self) -> bool {
        !matches!(self, ShiftMode::Grouped { .. })
    }
}

/// Channel-to-group rule for [`grouped_displacements`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupAssignment {
    /// `K^2` contiguous groups of `floor(C / K^2)` channels; leftovers stay at `(0, 0)`.
    #[default]
    EvenPartition,
    /// Group index `floor(c / K^2)`: fixed blocks of `K^2` channels, one offset per block.
    BlocksOfKSquared,
}

/// Grouped shift assignment: group `g` gets `(floor(g / K) - K/2, g mod K - K/2)`.
pub fn grouped_displacements(channels: usize, kernel: usize, rule: GroupAssignment) -> Result<ShiftParams> {
    if kernel < 3 || kernel.is_multiple_of(2) {
        return Err(Error::InvalidKernel(kernel));
    }
    if channels == 0 {
        return Err(Error::invalid("grouped_displacements", "channels must be >= 1"));
    }
    let k2 = kernel * kernel;
    let half = (kernel / 2) as isize;
    let offset = |g: usize| {
        let g = g as isize;
        let k = kernel as isize;
        ((g / k - half) as f32, (g % k - half) as f32)
    };
    let mut alpha = vec![0.0f32; channels];
    let mut beta = vec![0.0f32; channels];
    for c in 0..channels {
        let group = match rule {
            GroupAssignment::EvenPartition => {
                let size = channels / k2;
                if size == 0 || c >= size * k2 {
                    continue;
                }
                c / size
            }
            GroupAssignment::BlocksOfKSquared => c / k2,
        };
        let (a, b) = offset(group);
        alpha[c] = a;
        beta[c] = b;
    }
    ShiftParams::from_displacements(alpha, beta)
}
