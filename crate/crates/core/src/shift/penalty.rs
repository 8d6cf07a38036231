use serde::{Deserialize, Serialize};

use super::ShiftParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L1,
    #[default]
    L2,
}

/// Displacement penalty `lambda * sum(|alpha| + |beta|)` (L1) or of the squares (L2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub lambda: f32,
    #[serde(default)]
    pub norm: Norm,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig { lambda: 5e-4, norm: Norm::L2 }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("penalty lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

pub fn penalty_value(sp: &ShiftParams, cfg: &PenaltyConfig) -> f64 {
    let lambda = cfg.lambda as f64;
    let sum: f64 = sp
        .alpha
        .iter()
        .chain(&sp.beta)
        .map(|&v| match cfg.norm {
            Norm::L1 => (v as f64).abs(),
            Norm::L2 => (v as f64) * (v as f64),
        })
        .sum();
    lambda * sum
}

/// Adds the penalty gradient into the accumulators. No-op for frozen parameters.
pub fn penalty_grad_accumulate(sp: &mut ShiftParams, cfg: &PenaltyConfig) {
    if sp.frozen || cfg.lambda == 0.0 {
        return;
    }
    let lambda = cfg.lambda;
    let grad = |v: f32| match cfg.norm {
        Norm::L1 if v == 0.0 => 0.0,
        Norm::L1 => lambda * v.signum(),
        Norm::L2 => 2.0 * lambda * v,
    };
    for (g, &v) in sp.grad_alpha.iter_mut().zip(&sp.alpha) {
        *g += grad(v);
    }
    for (g, &v) in sp.grad_beta.iter_mut().zip(&sp.beta) {
        *g += grad(v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ShiftParams {
        ShiftParams::from_displacements(vec![1.0, -2.0], vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn zero_displacements_have_no_penalty() {
        let mut sp = ShiftParams::zeros(4);
        for norm in [Norm::L1, Norm::L2] {
            let cfg = PenaltyConfig { lambda: 1.0, norm };
            assert_eq!(penalty_value(&sp, &cfg), 0.0);
            penalty_grad_accumulate(&mut sp, &cfg);
            assert!(sp.grad_alpha.iter().chain(&sp.grad_beta).all(|&g| g == 0.0));
        }
    }

    #[test]
    fn l1_hand_values() {
        let mut sp = sample();
        let cfg = PenaltyConfig { lambda: 1e-4, norm: Norm::L1 };
        assert!((penalty_value(&sp, &cfg) - 3e-4).abs() < 3e-4 * 1e-6);
        penalty_grad_accumulate(&mut sp, &cfg);
        assert_eq!(sp.grad_alpha, vec![1e-4, -1e-4]);
        assert_eq!(sp.grad_beta, vec![0.0, 0.0]);
    }

    #[test]
    fn l2_hand_values() {
        let mut sp = sample();
        let cfg = PenaltyConfig { lambda: 1e-4, norm: Norm::L2 };
        assert!((penalty_value(&sp, &cfg) - 5e-4).abs() < 5e-4 * 1e-6);
        penalty_grad_accumulate(&mut sp, &cfg);
        assert_eq!(sp.grad_alpha, vec![2e-4, -4e-4]);
    }

    #[test]
    fn frozen_skips_grad() {
        let mut sp = sample();
        sp.frozen = true;
        penalty_grad_accumulate(&mut sp, &PenaltyConfig::default());
        assert_eq!(sp.grad_alpha, vec![0.0, 0.0]);
    }

    #[test]
    fn default_is_l2_and_negative_lambda_rejected() {
        assert_eq!(PenaltyConfig::default().norm, Norm::L2);
        assert!(PenaltyConfig { lambda: -1.0, norm: Norm::L1 }.validate().is_err());
        let parsed: PenaltyConfig = serde_json::from_str(r#"{"lambda": 0.001}"#).unwrap();
        assert_eq!(parsed.norm, Norm::L2);
    }
}
