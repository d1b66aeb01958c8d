//! Correlogram estimates of gradient sequences.
//!
//! The autocorrelation uses the unbiased `1/(T - tau)` normalization and the
//! PSD is the DFT of the lag-symmetrized autocorrelation (rectangular lag
//! window) on the grid `nu_k = k / (2L + 1)`, `k = -L..=L`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{frequency_response, FilterError, FilterSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("max lag {max_lag} must be smaller than the series length {len}")]
    LagTooLarge { max_lag: usize, len: usize },
    #[error("series entry {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("autocorrelation is empty")]
    Empty,
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Autocorrelation and power spectral density of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    /// `phi(0..=L)`.
    pub phi: Vec<f64>,
    /// Grid frequencies in ascending order, `-L/(2L+1) .. L/(2L+1)`.
    pub nu: Vec<f64>,
    /// Power at each grid frequency.
    pub power: Vec<f64>,
}

impl SpectralEstimate {
    pub fn max_lag(&self) -> usize {
        self.phi.len() - 1
    }

    /// Sum of power over grid points with `|nu| > cutoff`.
    pub fn band_mass_above(&self, cutoff: f64) -> f64 {
        self.nu
            .iter()
            .zip(&self.power)
            .filter(|(nu, _)| nu.abs() > cutoff)
            .map(|(_, p)| p)
            .sum()
    }
}

/// `phi(tau) = 1/(T - tau) sum_{t=tau}^{T-1} <s_t, s_{t-tau}>`.
pub fn autocorrelation(series: &[Vec<f64>], max_lag: usize) -> Result<Vec<f64>, SpectralError> {
    if max_lag >= series.len() {
        return Err(SpectralError::LagTooLarge {
            max_lag,
            len: series.len(),
        });
    }
    let dim = series[0].len();
    if let Some((index, s)) = series.iter().enumerate().find(|(_, s)| s.len() != dim) {
        return Err(SpectralError::DimensionMismatch {
            index,
            expected: dim,
            got: s.len(),
        });
    }
    let n = series.len();
    Ok((0..=max_lag)
        .map(|tau| {
            let total: f64 = (tau..n)
                .map(|t| {
                    series[t]
                        .iter()
                        .zip(&series[t - tau])
                        .map(|(x, y)| x * y)
                        .sum::<f64>()
                })
                .sum();
            total / (n - tau) as f64
        })
        .collect())
}

/// Scalar-series convenience wrapper around [`autocorrelation`].
pub fn autocorrelation_scalar(series: &[f64], max_lag: usize) -> Result<Vec<f64>, SpectralError> {
    if max_lag >= series.len() {
        return Err(SpectralError::LagTooLarge {
            max_lag,
            len: series.len(),
        });
    }
    let n = series.len();
    Ok((0..=max_lag)
        .map(|tau| {
            let total: f64 = (tau..n).map(|t| series[t] * series[t - tau]).sum();
            total / (n - tau) as f64
        })
        .collect())
}

/// Grid frequencies `k / (2L + 1)` for `k = -L..=L`.
pub fn frequency_grid(max_lag: usize) -> Vec<f64> {
    let m = (2 * max_lag + 1) as f64;
    let l = max_lag as isize;
    (-l..=l).map(|k| k as f64 / m).collect()
}

/// Power spectral density from `phi(0..=L)`.
pub fn psd(phi: &[f64]) -> Result<SpectralEstimate, SpectralError> {
    if phi.is_empty() {
        return Err(SpectralError::Empty);
    }
    let l = phi.len() - 1;
    let m = 2 * l + 1;
    // Circular layout: lags 0..=L, then -L..=-1.
    let mut buf: Vec<Complex64> = (0..m)
        .map(|n| {
            let lag = if n <= l { n } else { m - n };
            Complex64::new(phi[lag], 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);

    let nu = frequency_grid(l);
    let power = (0..m)
        .map(|i| {
            let k = i as isize - l as isize;
            let bin = k.rem_euclid(m as isize) as usize;
            debug_assert!(buf[bin].im.abs() <= 1e-9 * (1.0 + buf[bin].re.abs()));
            buf[bin].re
        })
        .collect();
    Ok(SpectralEstimate {
        phi: phi.to_vec(),
        nu,
        power,
    })
}

/// Autocorrelation followed by [`psd`].
pub fn estimate(series: &[Vec<f64>], max_lag: usize) -> Result<SpectralEstimate, SpectralError> {
    psd(&autocorrelation(series, max_lag)?)
}

/// White-noise level `d sigma_dp^2 + sigma_sgd^2 / B`.
pub fn expected_noise_psd(sigma_dp: f64, dim: usize, sigma_sgd: f64, batch_size: usize) -> f64 {
    dim as f64 * sigma_dp * sigma_dp + sigma_sgd * sigma_sgd / batch_size as f64
}

/// `|H(nu)|^2 * level` at each grid frequency.
pub fn filtered_noise_psd(
    spec: &FilterSpec,
    level: f64,
    grid: &[f64],
) -> Result<Vec<f64>, SpectralError> {
    grid.iter()
        .map(|&nu| Ok(frequency_response(spec, nu)?.norm_sqr() * level))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::preset;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_series() {
        let v = vec![1.0, 2.0, -2.0];
        let series = vec![v; 10];
        let phi = autocorrelation(&series, 4).unwrap();
        for p in phi {
            assert_abs_diff_eq!(p, 9.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn alternating_series() {
        let series: Vec<Vec<f64>> = (0..20)
            .map(|t| {
                let s = if t % 2 == 0 { 1.0 } else { -1.0 };
                vec![s * 3.0, s * 4.0]
            })
            .collect();
        let phi = autocorrelation(&series, 5).unwrap();
        for (tau, p) in phi.iter().enumerate() {
            let sign = if tau % 2 == 0 { 1.0 } else { -1.0 };
            assert_abs_diff_eq!(*p, sign * 25.0, epsilon = 1e-12);
        }
        let est = psd(&phi).unwrap();
        let peak = est
            .power
            .iter()
            .cloned()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        assert!(peak == 0 || peak == est.nu.len() - 1);
        assert!(est.nu[peak].abs() > 0.45);
    }

    #[test]
    fn white_noise_autocorrelation() {
        let d = 8;
        let sigma: f64 = 0.5;
        let t = 4000;
        let mut within = 0;
        let seeds = 20;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let series: Vec<Vec<f64>> = (0..t)
                .map(|_| {
                    (0..d)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            sigma * z
                        })
                        .collect::<Vec<f64>>()
                })
                .collect();
            let phi = autocorrelation(&series, 5).unwrap();
            assert!((phi[0] - d as f64 * sigma * sigma).abs() < 0.1 * d as f64 * sigma * sigma);
            let ok = phi[1..].iter().enumerate().all(|(i, p)| {
                let tau = i + 1;
                p.abs() < 4.0 * sigma * sigma * (d as f64 / (t - tau) as f64).sqrt()
            });
            within += ok as usize;
        }
        assert!(within as f64 >= 0.95 * seeds as f64 - 1.0);
    }

    #[test]
    fn white_psd_is_flat() {
        let mut phi = vec![0.0; 10];
        phi[0] = 2.5;
        let est = psd(&phi).unwrap();
        assert_eq!(est.nu.len(), 19);
        for p in est.power {
            assert_abs_diff_eq!(p, 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn ar1_psd_decreases_in_frequency() {
        let phi: Vec<f64> = (0..30).map(|t| 0.7f64.powi(t)).collect();
        let est = psd(&phi).unwrap();
        let l = est.max_lag();
        // nonnegative half of the grid, nu = 0 up to nu close to 1/2
        let half = &est.power[l..];
        for w in half.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert_abs_diff_eq!(est.nu[l], 0.0);
    }

    #[test]
    fn psd_matches_cosine_sum() {
        let phi = [1.0, 0.4, -0.3, 0.2];
        let est = psd(&phi).unwrap();
        for (nu, p) in est.nu.iter().zip(&est.power) {
            let direct = phi[0]
                + 2.0
                    * (1..phi.len())
                        .map(|t| phi[t] * (2.0 * std::f64::consts::PI * nu * t as f64).cos())
                        .sum::<f64>();
            assert_abs_diff_eq!(*p, direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn parseval() {
        let phi = [3.0, 1.2, -0.7, 0.1, 0.05];
        let est = psd(&phi).unwrap();
        let mean: f64 = est.power.iter().sum::<f64>() / est.power.len() as f64;
        assert!((mean - phi[0]).abs() / phi[0] < 1e-12);
    }

    #[test]
    fn noise_levels() {
        assert_eq!(expected_noise_psd(0.0, 10, 0.0, 4), 0.0);
        assert_abs_diff_eq!(expected_noise_psd(0.1, 100, 1.0, 10), 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(
            expected_noise_psd(0.1, 200, 0.0, 10),
            2.0 * expected_noise_psd(0.1, 100, 0.0, 10),
            epsilon = 1e-12
        );
    }

    #[test]
    fn filtered_noise_levels() {
        let grid = frequency_grid(8);
        let flat = filtered_noise_psd(&FilterSpec::identity(), 2.0, &grid).unwrap();
        assert!(flat.iter().all(|&p| (p - 2.0).abs() < 1e-12));
        let momentum = preset("momentum").unwrap();
        let ends = filtered_noise_psd(&momentum, 1.0, &[0.0, 0.5]).unwrap();
        assert_abs_diff_eq!(ends[0] / ends[1], 361.0, epsilon = 1e-9);
        let zero = filtered_noise_psd(&momentum, 0.0, &grid).unwrap();
        assert!(zero.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn lag_bounds() {
        assert!(matches!(
            autocorrelation(&vec![vec![1.0]; 3], 3),
            Err(SpectralError::LagTooLarge { max_lag: 3, len: 3 })
        ));
    }
}
