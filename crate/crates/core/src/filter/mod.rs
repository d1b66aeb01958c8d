//! Linear low-pass filters applied to privatized gradients.
//!
//! A filter is the recursion
//!
//! ```text
//! m_t = -sum_{k=1..n_a} a_k m_{t-k} + sum_{k=0..n_b} b_k g_{t-k}
//! ```
//!
//! with zero-initialized histories. [`FilterState`] runs it on parameter-sized
//! vectors and divides by the accumulated scalar gain so early outputs are not
//! shrunk towards zero. The remaining submodules analyse a [`FilterSpec`]:
//! impulse response, poles and residues, frequency response, and the
//! signal-to-noise ratio used to compare designs.

mod presets;
mod response;
mod snr;
mod state;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use presets::{preset, PRESET_NAMES};
pub use response::{
    frequency_response, impulse_response, kappa, kappa_closed_form, pole_zero_decompose,
    ImpulseResponse, KappaSource, PoleZeroDecomposition,
};
pub use snr::{
    estimate_autocorrelation, normalized_snr, optimal_fir, AutoCorrelationProfile,
    DEFAULT_ESTIMATOR_FLOOR,
};
pub use state::{FilterOutput, FilterState};

/// Poles closer than this are treated as repeated.
pub const SIMPLE_POLE_SEPARATION: f64 = 1e-8;

/// Maximum pole magnitude accepted as stable.
pub const STABILITY_MARGIN: f64 = 1.0 - 1e-9;

/// Largest order handled by the analysis routines.
pub const MAX_ORDER: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("coefficient {kind}[{index}] is not finite ({value})")]
    NonFiniteCoefficient {
        kind: char,
        index: usize,
        value: f64,
    },
    #[error("filter needs at least one feedforward coefficient")]
    EmptyFeedforward,
    #[error("filter order {order} exceeds the supported maximum of {MAX_ORDER}")]
    OrderTooLarge { order: usize },
    #[error("filter has no feedback coefficients, poles are undefined")]
    NoFeedback,
    #[error("poles {0} and {1} are not simple (distance {2:e}); use the recursion path")]
    RepeatedPoles(usize, usize, f64),
    #[error("closed-form impulse response has imaginary part {0:e} at lag {1}")]
    ImaginaryResidue(f64, usize),
    #[error("bias factor c_a = {value:e} at step {step} is degenerate")]
    DegenerateBias { step: u64, value: f64 },
    #[error("gradient has dimension {got}, filter state expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("filter state was built for (n_a={state_a}, n_b={state_b}) but spec has (n_a={spec_a}, n_b={spec_b})")]
    StateMismatch {
        state_a: usize,
        state_b: usize,
        spec_a: usize,
        spec_b: usize,
    },
    #[error("frequency response denominator vanishes at nu = {0} (pole on the unit circle)")]
    PoleOnUnitCircle(f64),
    #[error("impulse response is identically zero, SNR undefined")]
    UndefinedSnr,
    #[error("horizon {horizon} exceeds impulse response length {len}")]
    HorizonTooLong { horizon: usize, len: usize },
    #[error("autocorrelation coefficients sum to {0}, no valid FIR filter")]
    NoValidFilter(f64),
    #[error("estimation window holds {got} gradients, need at least {need}")]
    WindowTooShort { got: usize, need: usize },
    #[error("root finding did not converge")]
    RootFinding,
}

/// Feedback (`a_1..a_{n_a}`) and feedforward (`b_0..b_{n_b}`) coefficients.
///
/// Trailing zero feedback coefficients are stripped on construction, so
/// `a.len()` is the true feedback order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFilterSpec")]
pub struct FilterSpec {
    a: Vec<f64>,
    b: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

#[derive(Deserialize)]
struct RawFilterSpec {
    #[serde(default)]
    a: Vec<f64>,
    b: Vec<f64>,
    #[serde(default)]
    name: Option<String>,
}

impl TryFrom<RawFilterSpec> for FilterSpec {
    type Error = FilterError;

    fn try_from(raw: RawFilterSpec) -> Result<Self, Self::Error> {
        let spec = FilterSpec::new(raw.a, raw.b)?;
        Ok(match raw.name {
            Some(name) => spec.with_name(name),
            None => spec,
        })
    }
}

impl FilterSpec {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self, FilterError> {
        if b.is_empty() {
            return Err(FilterError::EmptyFeedforward);
        }
        for (kind, coeffs) in [('a', &a), ('b', &b)] {
            if let Some((index, &value)) = coeffs.iter().enumerate().find(|(_, c)| !c.is_finite()) {
                return Err(FilterError::NonFiniteCoefficient { kind, index, value });
            }
        }
        let mut a = a;
        while a.last() == Some(&0.0) {
            a.pop();
        }
        let order = a.len().max(b.len() - 1);
        if order > MAX_ORDER {
            return Err(FilterError::OrderTooLarge { order });
        }
        Ok(Self { a, b, name: None })
    }

    /// The pass-through filter `m_t = g_t`.
    pub fn identity() -> Self {
        Self {
            a: Vec::new(),
            b: vec![1.0],
            name: None,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn feedback_order(&self) -> usize {
        self.a.len()
    }

    pub fn feedforward_order(&self) -> usize {
        self.b.len() - 1
    }

    /// DC gain `-sum(a) + sum(b)` as written in the unit-gain constraint.
    pub fn gain(&self) -> f64 {
        self.b.iter().sum::<f64>() - self.a.iter().sum::<f64>()
    }

    pub fn is_identity(&self) -> bool {
        self.a.is_empty() && self.b == [1.0]
    }

    /// Returns a copy with `b` rescaled so that the DC gain is one.
    ///
    /// Only `b` changes, so poles and stability are preserved.
    pub fn renormalized(&self) -> Result<Self, FilterError> {
        let target = 1.0 + self.a.iter().sum::<f64>();
        let sum_b: f64 = self.b.iter().sum();
        if sum_b.abs() < 1e-12 {
            return Err(FilterError::NoValidFilter(sum_b));
        }
        let scale = target / sum_b;
        Ok(Self {
            a: self.a.clone(),
            b: self.b.iter().map(|&b| b * scale).collect(),
            name: self.name.clone(),
        })
    }

    /// Roots of `z^{n_a} + a_1 z^{n_a-1} + ... + a_{n_a}`.
    pub fn poles(&self) -> Result<Vec<Complex64>, FilterError> {
        response::poles(&self.a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub unit_gain_error: f64,
    pub pole_magnitudes: Vec<f64>,
    pub stable: bool,
}

impl ValidationReport {
    pub fn is_unit_gain(&self, tol: f64) -> bool {
        self.unit_gain_error <= tol
    }

    pub fn max_pole_magnitude(&self) -> f64 {
        self.pole_magnitudes.iter().cloned().fold(0.0, f64::max)
    }
}

/// Checks the unit-gain and stability constraints.
pub fn validate_spec(spec: &FilterSpec) -> Result<ValidationReport, FilterError> {
    let unit_gain_error = (spec.gain() - 1.0).abs();
    let pole_magnitudes: Vec<f64> = spec.poles()?.iter().map(|p| p.norm()).collect();
    let stable = pole_magnitudes.iter().all(|&m| m < STABILITY_MARGIN);
    Ok(ValidationReport {
        unit_gain_error,
        pole_magnitudes,
        stable,
    })
}
