use doppler::dp::NoiseCalibration;
use serde::Serialize;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub calibration: NoiseCalibration,
    pub envelope_warning: Option<String>,
}

/// `calibrate`: `sigma_dp` for a budget, with `delta = N^{-1.1}` by default.
#[allow(clippy::too_many_arguments)]
pub fn cmd_calibrate(
    epsilon: f64,
    delta: Option<f64>,
    num_samples: usize,
    batch_size: usize,
    steps: usize,
    threshold: f64,
    v: f64,
    u: Option<f64>,
) -> Result<CalibrationReport> {
    let calibration =
        NoiseCalibration::from_budget(epsilon, delta, num_samples, batch_size, steps, threshold, v)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(CalibrationReport {
        envelope_warning: u.and_then(|u| calibration.envelope_warning(u)),
        calibration,
    })
}
