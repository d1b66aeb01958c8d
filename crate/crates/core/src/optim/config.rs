use serde::{Deserialize, Serialize};

use crate::dp::ClipConfig;
use crate::filter::FilterSpec;

use super::OptimError;

/// Fraction of the run spent in linear warmup under [`Schedule::CosineWarmup`].
pub const WARMUP_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Sgd,
    Adam,
    Galore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Linear warmup over the first 10% of steps, then cosine decay to zero.
    CosineWarmup,
}

impl Schedule {
    /// Stepsize multiplier at step `t` of `total`.
    pub fn factor(&self, t: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => 1.0,
            Schedule::CosineWarmup => {
                let warmup = (WARMUP_FRACTION * total as f64).ceil() as usize;
                if t < warmup {
                    (t + 1) as f64 / warmup as f64
                } else {
                    let span = (total - warmup).max(1) as f64;
                    let progress = (t - warmup) as f64 / span;
                    0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }
}

/// Everything that determines a run apart from the problem and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub variant: Variant,
    pub filter: FilterSpec,
    pub eta: f64,
    pub clip: ClipConfig,
    /// Per-coordinate standard deviation of the privatization noise.
    pub sigma_dp: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Second-moment EMA weight: `v = (1 - beta) v + beta g^2`.
    #[serde(default = "default_beta")]
    pub adam_beta: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_rank")]
    pub galore_rank: usize,
    #[serde(default = "default_period")]
    pub galore_period: usize,
    #[serde(default)]
    pub schedule: Schedule,
    /// Record gradient snapshots every this many steps; 0 disables them.
    #[serde(default)]
    pub snapshot_stride: usize,
}

fn default_beta() -> f64 {
    0.001
}

fn default_eps() -> f64 {
    1e-8
}

fn default_rank() -> usize {
    4
}

fn default_period() -> usize {
    50
}

impl OptimizerConfig {
    /// SGD-variant config with Adam/GaLore fields at their defaults.
    pub fn sgd(
        filter: FilterSpec,
        eta: f64,
        clip: ClipConfig,
        sigma_dp: f64,
        batch_size: usize,
        steps: usize,
    ) -> Self {
        Self {
            variant: Variant::Sgd,
            filter,
            eta,
            clip,
            sigma_dp,
            batch_size,
            steps,
            adam_beta: default_beta(),
            adam_eps: default_eps(),
            galore_rank: default_rank(),
            galore_period: default_period(),
            schedule: Schedule::Constant,
            snapshot_stride: 0,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Checks the parameters that do not depend on the problem.
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |msg: String| Err(OptimError::Config(msg));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive and finite, got {}", self.eta));
        }
        self.clip.validate()?;
        if !(self.sigma_dp >= 0.0 && self.sigma_dp.is_finite()) {
            return bad(format!(
                "sigma_dp must be nonnegative, got {}",
                self.sigma_dp
            ));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.variant != Variant::Sgd {
            if !(self.adam_beta > 0.0 && self.adam_beta < 1.0) {
                return bad(format!(
                    "adam_beta must lie in (0, 1), got {}",
                    self.adam_beta
                ));
            }
            if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
                return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
            }
        }
        if self.variant == Variant::Galore && (self.galore_rank == 0 || self.galore_period == 0) {
            return bad("galore rank and period must be at least 1".into());
        }
        Ok(())
    }
}
