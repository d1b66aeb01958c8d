//! Differentially private optimization with low-pass filtered gradients.
//!
//! * [`filter`]: the gradient filter, its impulse/frequency response and SNR.
//! * [`dp`]: per-sample clipping, Gaussian noise and noise calibration.
//! * [`spectral`]: autocorrelation and power spectral density of gradient
//!   sequences.
//! * [`optim`]: DP-SGD, DP-Adam and DP-GaLore update pipelines with a filter.
//! * [`problems`]: synthetic ERM problems with analytic gradients.

pub mod dp;
pub mod filter;
pub mod optim;
pub mod problems;
pub mod spectral;

pub use filter::{FilterSpec, FilterState};
pub use optim::{run, OptimizerConfig, RunOutput, RunTrace, Variant};
pub use problems::Problem;
