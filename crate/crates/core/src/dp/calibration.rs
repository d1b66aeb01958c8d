//! Privacy budget to noise level.

use serde::{Deserialize, Serialize};

use super::DpError;

/// Largest delta for which the Gaussian-mechanism formula is stated.
pub const MAX_MECHANISM_DELTA: f64 = 0.05;

/// Default value of the accountant constant `v`.
///
/// The true constant depends on the moments accountant; this is a surrogate.
pub const DEFAULT_ACCOUNTANT_MULTIPLIER: f64 = 2.0;

/// `sigma = Delta sqrt(2 ln(1/(2 delta))) / eps + Delta / sqrt(2 eps)`.
pub fn sigma_from_gaussian_mechanism(
    sensitivity: f64,
    epsilon: f64,
    delta: f64,
) -> Result<f64, DpError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(DpError::InvalidEpsilon(epsilon));
    }
    if !(delta > 0.0 && delta <= MAX_MECHANISM_DELTA) {
        return Err(DpError::InvalidDelta(delta, MAX_MECHANISM_DELTA));
    }
    if sensitivity.is_nan() || sensitivity < 0.0 {
        return Err(DpError::InvalidParameter {
            name: "sensitivity",
            value: sensitivity,
        });
    }
    let log_term = (2.0 * (1.0 / (2.0 * delta)).ln()).sqrt();
    Ok(sensitivity * log_term / epsilon + sensitivity / (2.0 * epsilon).sqrt())
}

/// `sigma_dp = sqrt(v) C sqrt(T ln(1/delta)) / (N eps)`.
pub fn sigma_from_budget(
    epsilon: f64,
    delta: f64,
    dataset_size: usize,
    steps: usize,
    threshold: f64,
    v: f64,
) -> Result<f64, DpError> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(DpError::InvalidEpsilon(epsilon));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DpError::InvalidDelta(delta, 1.0));
    }
    for (name, value) in [
        ("dataset size", dataset_size as f64),
        ("steps", steps as f64),
        ("clipping threshold", threshold),
        ("accountant multiplier", v),
    ] {
        if value.is_nan() || value <= 0.0 || !value.is_finite() {
            return Err(DpError::InvalidParameter { name, value });
        }
    }
    let t = steps as f64;
    Ok(v.sqrt() * threshold * (t * (1.0 / delta).ln()).sqrt() / (dataset_size as f64 * epsilon))
}

/// `delta = N^{-1.1}`.
pub fn default_delta(dataset_size: usize) -> Result<f64, DpError> {
    if dataset_size < 2 {
        return Err(DpError::InvalidParameter {
            name: "dataset size (need at least 2)",
            value: dataset_size as f64,
        });
    }
    Ok((dataset_size as f64).powf(-1.1))
}

/// Privacy budget together with the noise level it implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub epsilon: f64,
    pub delta: f64,
    pub dataset_size: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub threshold: f64,
    pub v: f64,
    pub sigma_dp: f64,
}

impl NoiseCalibration {
    /// Calibrates `sigma_dp` from the budget; `delta = None` uses
    /// [`default_delta`].
    pub fn from_budget(
        epsilon: f64,
        delta: Option<f64>,
        dataset_size: usize,
        batch_size: usize,
        steps: usize,
        threshold: f64,
        v: f64,
    ) -> Result<Self, DpError> {
        if batch_size == 0 || batch_size > dataset_size {
            return Err(DpError::InvalidParameter {
                name: "batch size",
                value: batch_size as f64,
            });
        }
        let delta = match delta {
            Some(d) => d,
            None => default_delta(dataset_size)?,
        };
        let sigma_dp = sigma_from_budget(epsilon, delta, dataset_size, steps, threshold, v)?;
        Ok(Self {
            epsilon,
            delta,
            dataset_size,
            batch_size,
            steps,
            threshold,
            v,
            sigma_dp,
        })
    }

    /// Message when `epsilon >= u B^2 T / N^2`, outside the range where the
    /// calibration is guaranteed.
    pub fn envelope_warning(&self, u: f64) -> Option<String> {
        let n = self.dataset_size as f64;
        let b = self.batch_size as f64;
        let limit = u * b * b * self.steps as f64 / (n * n);
        (self.epsilon >= limit).then(|| {
            format!(
                "epsilon {} is outside the calibration envelope epsilon < u B^2 T / N^2 = {limit}",
                self.epsilon
            )
        })
    }
}
