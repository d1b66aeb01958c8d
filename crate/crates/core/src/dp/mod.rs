//! Gaussian mechanism for minibatch gradients.
//!
//! Per-sample gradients are clipped to norm `C`, averaged, and perturbed with
//! i.i.d. `N(0, sigma_dp^2)` noise on every coordinate. Noise is added after
//! averaging, so `sigma_dp` is the literal per-coordinate standard deviation of
//! the released gradient.

mod calibration;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use calibration::{
    default_delta, sigma_from_budget, sigma_from_gaussian_mechanism, NoiseCalibration,
    DEFAULT_ACCOUNTANT_MULTIPLIER,
};

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("clipping threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("normalize mode needs a finite threshold")]
    UnboundedNormalize,
    #[error("minibatch is empty")]
    EmptyBatch,
    #[error("sample {sample} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        sample: usize,
        expected: usize,
        got: usize,
    },
    #[error("block sizes sum to {total}, gradient has dimension {dim}")]
    BlockLayout { total: usize, dim: usize },
    #[error("gradient contains a non-finite entry at index {0}")]
    NonFiniteGradient(usize),
    #[error("noise standard deviation must be nonnegative, got {0}")]
    NegativeSigma(f64),
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("delta = {0} is outside (0, {1}]")]
    InvalidDelta(f64, f64),
    #[error("{name} must be positive, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// Scale by `min(1, C / |g|)`.
    Clip,
    /// Scale by `C / |g|`.
    Normalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One norm over the whole parameter vector.
    Flat,
    /// Each block clipped to `C / sqrt(#blocks)`.
    PerBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    /// Serialized as the string `"inf"` when infinite.
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub mode: ClipMode,
    pub granularity: Granularity,
}

impl ClipConfig {
    pub fn new(threshold: f64, mode: ClipMode, granularity: Granularity) -> Result<Self, DpError> {
        let config = Self {
            threshold,
            mode,
            granularity,
        };
        config.validate()?;
        Ok(config)
    }

    /// Flat clipping at `threshold`.
    pub fn flat(threshold: f64) -> Self {
        Self {
            threshold,
            mode: ClipMode::Clip,
            granularity: Granularity::Flat,
        }
    }

    /// Clip mode with an infinite threshold, i.e. no clipping.
    pub fn disabled() -> Self {
        Self::flat(f64::INFINITY)
    }

    pub fn validate(&self) -> Result<(), DpError> {
        if self.threshold.is_nan() || self.threshold <= 0.0 {
            return Err(DpError::InvalidThreshold(self.threshold));
        }
        if self.mode == ClipMode::Normalize && self.threshold.is_infinite() {
            return Err(DpError::UnboundedNormalize);
        }
        Ok(())
    }
}

mod threshold_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *value == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*value)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Number(x) => Ok(x),
            Raw::Text(t) if matches!(t.to_ascii_lowercase().as_str(), "inf" | "infinity") => {
                Ok(f64::INFINITY)
            }
            Raw::Text(t) => Err(de::Error::custom(format!("invalid threshold {t:?}"))),
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn scale_for(norm: f64, threshold: f64, mode: ClipMode) -> f64 {
    match mode {
        ClipMode::Clip => {
            if norm > threshold {
                threshold / norm
            } else {
                1.0
            }
        }
        ClipMode::Normalize => threshold / norm.max(NORM_FLOOR),
    }
}

/// Clips one per-sample gradient in place.
///
/// `blocks` lists the block sizes used by [`Granularity::PerBlock`]; it is
/// ignored for flat clipping.
pub fn clip_in_place(g: &mut [f64], blocks: &[usize], config: &ClipConfig) -> Result<(), DpError> {
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(DpError::NonFiniteGradient(i));
    }
    match config.granularity {
        Granularity::Flat => {
            let s = scale_for(norm(g), config.threshold, config.mode);
            g.iter_mut().for_each(|v| *v *= s);
        }
        Granularity::PerBlock => {
            let total: usize = blocks.iter().sum();
            if total != g.len() || blocks.is_empty() {
                return Err(DpError::BlockLayout {
                    total,
                    dim: g.len(),
                });
            }
            let threshold = config.threshold / (blocks.len() as f64).sqrt();
            let mut start = 0;
            for &size in blocks {
                let block = &mut g[start..start + size];
                let s = scale_for(norm(block), threshold, config.mode);
                block.iter_mut().for_each(|v| *v *= s);
                start += size;
            }
        }
    }
    Ok(())
}

pub fn clip(g: &[f64], blocks: &[usize], config: &ClipConfig) -> Result<Vec<f64>, DpError> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, blocks, config)?;
    Ok(out)
}

/// Mean of clipped per-sample gradients plus Gaussian noise.
///
/// Noise is drawn coordinate by coordinate from `rng` after averaging; no
/// draws happen when `sigma_dp == 0`.
pub fn privatize<R: Rng + ?Sized>(
    per_sample: &[Vec<f64>],
    blocks: &[usize],
    config: &ClipConfig,
    sigma_dp: f64,
    rng: &mut R,
) -> Result<Vec<f64>, DpError> {
    if sigma_dp.is_nan() || sigma_dp < 0.0 {
        return Err(DpError::NegativeSigma(sigma_dp));
    }
    let first = per_sample.first().ok_or(DpError::EmptyBatch)?;
    let dim = first.len();
    let mut sum = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];
    for (sample, g) in per_sample.iter().enumerate() {
        if g.len() != dim {
            return Err(DpError::DimensionMismatch {
                sample,
                expected: dim,
                got: g.len(),
            });
        }
        scratch.copy_from_slice(g);
        clip_in_place(&mut scratch, blocks, config)?;
        for (s, v) in sum.iter_mut().zip(&scratch) {
            *s += v;
        }
    }
    let batch = per_sample.len() as f64;
    for s in sum.iter_mut() {
        *s /= batch;
    }
    if sigma_dp > 0.0 {
        for s in sum.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *s += sigma_dp * z;
        }
    }
    Ok(sum)
}
