//! Signal-to-noise ratio of a filter and the FIR design that maximizes it.

use serde::{Deserialize, Serialize};

use super::{FilterError, FilterSpec, ImpulseResponse};

/// Floor on the estimator denominator.
pub const DEFAULT_ESTIMATOR_FLOOR: f64 = 1e-3;

/// Gradient auto-correlation coefficients `c_tau` (forward) and `c_{-tau}`
/// (backward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoCorrelationProfile {
    pub c: Vec<f64>,
    pub c_neg: Vec<f64>,
}

impl AutoCorrelationProfile {
    /// Profile with the given forward coefficients and `c_{-tau} = 1/2`.
    pub fn from_forward(c: Vec<f64>) -> Self {
        let c_neg = vec![0.5; c.len()];
        Self { c, c_neg }
    }

    /// `c_tau = c_{-tau} = 1/2` for all lags.
    pub fn constant_half() -> Self {
        Self::from_forward(vec![0.5])
    }

    /// Coefficient at `lag`, repeating the last value past the end.
    pub fn at(&self, lag: usize) -> f64 {
        match self.c.get(lag) {
            Some(&c) => c,
            None => self.c.last().copied().unwrap_or(0.0),
        }
    }
}

/// Ratio of correlation-weighted signal mass to filtered noise energy over
/// `horizon` steps.
///
/// Uses `sum_{t<T} sum_{tau<=t} x_tau = sum_{tau<T} (T - tau) x_tau` for both
/// the numerator (`x = c kappa`) and the denominator (`x = kappa^2`).
pub fn normalized_snr(
    kappa: &ImpulseResponse,
    profile: &AutoCorrelationProfile,
    horizon: usize,
) -> Result<f64, FilterError> {
    if kappa.len() < horizon {
        return Err(FilterError::HorizonTooLong {
            horizon,
            len: kappa.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (tau, &k) in kappa.kappa.iter().take(horizon).enumerate() {
        let weight = (horizon - tau) as f64;
        num += weight * profile.at(tau) * k;
        den += weight * k * k;
    }
    if den == 0.0 {
        return Err(FilterError::UndefinedSnr);
    }
    Ok(num / den)
}

/// FIR filter with `b_tau = c_tau / sum c`.
pub fn optimal_fir(c: &[f64]) -> Result<FilterSpec, FilterError> {
    let total: f64 = c.iter().sum();
    if total.is_nan() || total <= 1e-12 {
        return Err(FilterError::NoValidFilter(total));
    }
    FilterSpec::new(Vec::new(), c.iter().map(|&x| x / total).collect())
}

/// Estimates `c_1..c_max_lag` from a window of privatized gradients, oldest
/// first.
///
/// For each lag the expectations are window averages over the pairs
/// `(g_t, g_{t-tau})` available in the window. `c_0` is fixed at 1/2.
pub fn estimate_autocorrelation(
    window: &[Vec<f64>],
    sigma_dp: f64,
    max_lag: usize,
    floor: f64,
) -> Result<AutoCorrelationProfile, FilterError> {
    let need = (max_lag + 1).max(2);
    if window.len() < need {
        return Err(FilterError::WindowTooShort {
            got: window.len(),
            need,
        });
    }
    let dim = window[0].len();
    for g in window {
        if g.len() != dim {
            return Err(FilterError::DimensionMismatch {
                expected: dim,
                got: g.len(),
            });
        }
    }
    let noise_energy = dim as f64 * sigma_dp * sigma_dp;
    let sq_norms: Vec<f64> = window.iter().map(|g| dot(g, g)).collect();

    let mut c = vec![0.5];
    for lag in 1..=max_lag {
        let pairs = window.len() - lag;
        let mut num = 0.0;
        let mut den = 0.0;
        for t in lag..window.len() {
            num += dot(&window[t], &window[t - lag])
                - 0.5 * (sq_norms[t - lag] - noise_energy).max(0.0);
            den += (sq_norms[t] - noise_energy).max(floor);
        }
        c.push((num / pairs as f64) / (den / pairs as f64));
    }
    Ok(AutoCorrelationProfile::from_forward(c))
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{impulse_response, preset, validate_spec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn sgd_snr_is_half() {
        let kappa = impulse_response(&FilterSpec::identity(), 100);
        let profile = AutoCorrelationProfile::from_forward(vec![0.5, 0.3, -0.2]);
        assert_abs_diff_eq!(
            normalized_snr(&kappa, &profile, 100).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn momentum_snr_matches_geometric_sums() {
        // With c = 1/2: num = (T - 9 + 9 * 0.9^T) / 2,
        // den = (0.01 / 0.19) (T - 0.81 (1 - 0.81^T) / 0.19).
        let kappa = impulse_response(&preset("momentum").unwrap(), 10_000);
        let profile = AutoCorrelationProfile::constant_half();
        for horizon in [10usize, 100, 10_000] {
            let t = horizon as f64;
            let num = 0.5 * (t - 0.9 * (1.0 - 0.9f64.powf(t)) / 0.1);
            let den = 0.01 / 0.19 * (t - 0.81 * (1.0 - 0.81f64.powf(t)) / 0.19);
            let snr = normalized_snr(&kappa, &profile, horizon).unwrap();
            assert_abs_diff_eq!(snr, num / den, epsilon = 1e-9);
        }
        let long = impulse_response(&preset("momentum").unwrap(), 2_000_000);
        let snr = normalized_snr(&long, &profile, 2_000_000).unwrap();
        assert!((snr - 9.5).abs() < 3e-5);
        assert!(snr > 0.5);
    }

    #[test]
    fn single_term_snr() {
        let kappa = ImpulseResponse { kappa: vec![1.0] };
        let profile = AutoCorrelationProfile::from_forward(vec![1.0]);
        assert_eq!(normalized_snr(&kappa, &profile, 1).unwrap(), 1.0);
    }

    #[test]
    fn snr_errors() {
        let zero = ImpulseResponse {
            kappa: vec![0.0; 4],
        };
        let profile = AutoCorrelationProfile::constant_half();
        assert_eq!(
            normalized_snr(&zero, &profile, 4),
            Err(FilterError::UndefinedSnr)
        );
        assert!(matches!(
            normalized_snr(&zero, &profile, 5),
            Err(FilterError::HorizonTooLong { horizon: 5, len: 4 })
        ));
    }

    #[test]
    fn optimal_fir_examples() {
        assert_eq!(optimal_fir(&[0.5, 0.3, 0.2]).unwrap().b(), &[0.5, 0.3, 0.2]);
        assert_eq!(optimal_fir(&[0.5; 4]).unwrap().b(), &[0.25; 4]);
        assert!(optimal_fir(&[1.0]).unwrap().is_identity());
        assert!(matches!(
            optimal_fir(&[0.5, -0.5]),
            Err(FilterError::NoValidFilter(_))
        ));
    }

    proptest! {
        #[test]
        fn optimal_fir_is_unit_gain(c in proptest::collection::vec(0.0f64..1.0, 1..9)) {
            prop_assume!(c.iter().sum::<f64>() > 1e-6);
            let spec = optimal_fir(&c).unwrap();
            prop_assert!(validate_spec(&spec).unwrap().unit_gain_error <= 1e-12);
        }
    }

    #[test]
    fn constant_window_gives_half() {
        let v = vec![1.0, -2.0, 0.5];
        let window = vec![v.clone(); 6];
        let profile = estimate_autocorrelation(&window, 0.0, 3, DEFAULT_ESTIMATOR_FLOOR).unwrap();
        for c in &profile.c {
            assert_abs_diff_eq!(*c, 0.5, epsilon = 1e-12);
        }
        assert!(profile.c_neg.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn pure_noise_window_gives_zero() {
        // Orthogonal gradients with squared norm exactly d * sigma^2.
        let d = 4;
        let sigma: f64 = 0.5;
        let window: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let mut g = vec![0.0; d];
                g[i] = sigma * (d as f64).sqrt();
                g
            })
            .collect();
        let profile = estimate_autocorrelation(&window, sigma, 3, DEFAULT_ESTIMATOR_FLOOR).unwrap();
        assert_eq!(profile.c[0], 0.5);
        for c in &profile.c[1..] {
            assert_abs_diff_eq!(*c, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn ar1_window_matches_brute_force() {
        let rho: f64 = 0.8;
        let d = 50;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut window = Vec::new();
        for _ in 0..400 {
            window.push(g.clone());
            for x in g.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *x = rho * *x + (1.0 - rho * rho).sqrt() * e;
            }
        }
        let profile = estimate_autocorrelation(&window, 0.0, 4, DEFAULT_ESTIMATOR_FLOOR).unwrap();
        for lag in 1..=4usize {
            let mut num = Vec::new();
            let mut den = Vec::new();
            for t in lag..window.len() {
                let ip: f64 = (0..d).map(|i| window[t][i] * window[t - lag][i]).sum();
                let nl: f64 = (0..d).map(|i| window[t - lag][i].powi(2)).sum();
                let nt: f64 = (0..d).map(|i| window[t][i].powi(2)).sum();
                num.push(ip - 0.5 * nl);
                den.push(nt.max(1e-3));
            }
            let brute = (num.iter().sum::<f64>() / num.len() as f64)
                / (den.iter().sum::<f64>() / den.len() as f64);
            assert_abs_diff_eq!(profile.c[lag], brute, epsilon = 1e-12);
            let population = rho.powi(lag as i32) - 0.5;
            assert!((profile.c[lag] - population).abs() < 0.1, "lag {lag}");
        }
    }

    #[test]
    fn short_window_rejected() {
        assert!(matches!(
            estimate_autocorrelation(&[vec![1.0]], 0.0, 1, DEFAULT_ESTIMATOR_FLOOR),
            Err(FilterError::WindowTooShort { got: 1, need: 2 })
        ));
    }

    #[test]
    fn profile_extends_with_last_value() {
        let p = AutoCorrelationProfile::from_forward(vec![0.5, 0.4]);
        assert_eq!(p.at(0), 0.5);
        assert_eq!(p.at(1), 0.4);
        assert_eq!(p.at(100), 0.4);
    }
}
