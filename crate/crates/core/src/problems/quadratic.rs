use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{fnv_fingerprint, Problem, ProblemError};

/// `f(x; xi_i) = 1/2 x^T A x - b_i^T x` with diagonal `A`.
///
/// The offsets `b_i - b_bar` are frozen at construction and centered, so
/// `F`, its minimizer and `F*` are exact.
#[derive(Debug, Clone)]
pub struct Quadratic {
    eigenvalues: Vec<f64>,
    b_mean: Vec<f64>,
    /// Row-major `N x d` offsets, empty when noiseless.
    offsets: Vec<f64>,
    num_samples: usize,
    sgd_std: f64,
    initial: Vec<f64>,
}

impl Quadratic {
    /// Quadratic with minimizer `x_star` and `num_samples` identical samples.
    pub fn noiseless(eigenvalues: Vec<f64>, x_star: &[f64], num_samples: usize) -> Self {
        let b_mean = eigenvalues.iter().zip(x_star).map(|(l, x)| l * x).collect();
        let d = eigenvalues.len();
        Self {
            eigenvalues,
            b_mean,
            offsets: Vec::new(),
            num_samples,
            sgd_std: 0.0,
            initial: vec![0.0; d],
        }
    }

    pub fn with_initial_point(mut self, x0: Vec<f64>) -> Self {
        assert_eq!(x0.len(), self.eigenvalues.len());
        self.initial = x0;
        self
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn minimizer(&self) -> Vec<f64> {
        self.b_mean
            .iter()
            .zip(&self.eigenvalues)
            .map(|(b, l)| b / l)
            .collect()
    }

    fn b_sample(&self, i: usize, j: usize) -> f64 {
        if self.offsets.is_empty() {
            self.b_mean[j]
        } else {
            self.b_mean[j] + self.offsets[i * self.eigenvalues.len() + j]
        }
    }

    fn curvature_term(&self, x: &[f64]) -> f64 {
        0.5 * self
            .eigenvalues
            .iter()
            .zip(x)
            .map(|(l, v)| l * v * v)
            .sum::<f64>()
    }
}

/// Random diagonal quadratic with eigenvalues log-spaced in `[mu, l]`.
///
/// The minimizer has i.i.d. standard normal entries; per-sample offsets are
/// Gaussian, centered, and rescaled so their mean squared norm is exactly
/// `sigma_sgd^2`.
pub fn make_quadratic(
    d: usize,
    l: f64,
    mu: f64,
    sigma_sgd: f64,
    num_samples: usize,
    seed: u64,
) -> Result<Quadratic, ProblemError> {
    if d == 0 || num_samples == 0 {
        return Err(ProblemError::InvalidParameter(
            "dimension and sample count must be positive".into(),
        ));
    }
    if !(mu > 0.0 && mu <= l && l.is_finite()) {
        return Err(ProblemError::InvalidParameter(format!(
            "need 0 < mu <= L, got mu = {mu}, L = {l}"
        )));
    }
    if sigma_sgd.is_nan() || sigma_sgd < 0.0 {
        return Err(ProblemError::InvalidParameter(format!(
            "sigma_sgd must be nonnegative, got {sigma_sgd}"
        )));
    }
    let eigenvalues: Vec<f64> = if d == 1 {
        vec![l]
    } else {
        let (lo, hi) = (mu.ln(), l.ln());
        (0..d)
            .map(|j| {
                if j == d - 1 {
                    l
                } else {
                    (lo + (hi - lo) * j as f64 / (d - 1) as f64).exp()
                }
            })
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_star: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut problem = Quadratic::noiseless(eigenvalues, &x_star, num_samples);

    if sigma_sgd > 0.0 && num_samples > 1 {
        let mut offsets: Vec<f64> = (0..num_samples * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        for j in 0..d {
            let mean =
                (0..num_samples).map(|i| offsets[i * d + j]).sum::<f64>() / num_samples as f64;
            for i in 0..num_samples {
                offsets[i * d + j] -= mean;
            }
        }
        let mean_sq = offsets.iter().map(|v| v * v).sum::<f64>() / num_samples as f64;
        let scale = sigma_sgd / mean_sq.sqrt();
        offsets.iter_mut().for_each(|v| *v *= scale);
        problem.offsets = offsets;
        problem.sgd_std = sigma_sgd;
    }
    Ok(problem)
}

impl Problem for Quadratic {
    fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn num_samples(&self) -> usize {
        self.num_samples
    }

    fn sample_loss(&self, x: &[f64], i: usize) -> f64 {
        let linear: f64 = (0..x.len()).map(|j| self.b_sample(i, j) * x[j]).sum();
        self.curvature_term(x) - linear
    }

    fn sample_grad(&self, x: &[f64], i: usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.eigenvalues[j] * x[j] - self.b_sample(i, j);
        }
    }

    fn loss(&self, x: &[f64]) -> f64 {
        let linear: f64 = self.b_mean.iter().zip(x).map(|(b, v)| b * v).sum();
        self.curvature_term(x) - linear
    }

    fn full_grad(&self, x: &[f64]) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .zip(x)
            .zip(&self.b_mean)
            .map(|((l, v), b)| l * v - b)
            .collect()
    }

    fn initial_point(&self) -> Vec<f64> {
        self.initial.clone()
    }

    fn optimum_value(&self) -> Option<f64> {
        Some(
            -0.5 * self
                .b_mean
                .iter()
                .zip(&self.eigenvalues)
                .map(|(b, l)| b * b / l)
                .sum::<f64>(),
        )
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.eigenvalues.iter().cloned().fold(0.0, f64::max))
    }

    fn sgd_std(&self) -> Option<f64> {
        Some(self.sgd_std)
    }

    fn fingerprint(&self) -> u64 {
        fnv_fingerprint(
            &[
                &self.eigenvalues,
                &self.b_mean,
                &self.offsets,
                &self.initial,
            ],
            &[self.num_samples as u64],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::finite_difference_error;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn scalar_quadratic() {
        let p = make_quadratic(1, 1.0, 1.0, 0.0, 5, 9).unwrap();
        assert_eq!(p.eigenvalues(), &[1.0]);
        let x_star = p.minimizer();
        let b = p.b_mean[0];
        assert_eq!(x_star[0], b);
        assert_abs_diff_eq!(p.full_grad(&x_star)[0], 0.0);
        assert_abs_diff_eq!(p.loss(&[2.0]), 0.5 * 4.0 - 2.0 * b, epsilon = 1e-15);
    }

    #[test]
    fn spectrum_and_smoothness() {
        let p = make_quadratic(50, 10.0, 0.1, 0.0, 10, 1).unwrap();
        let e = p.eigenvalues();
        assert_abs_diff_eq!(e[0], 0.1, epsilon = 1e-15);
        assert_eq!(e[49], 10.0);
        assert!(e.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(p.smoothness(), Some(10.0));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let x: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
            let gx = p.full_grad(&x);
            let gy = p.full_grad(&y);
            let num: f64 = gx
                .iter()
                .zip(&gy)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let den: f64 = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(num / den);
        }
        assert!(worst <= 10.0 + 1e-12);
    }

    #[test]
    fn gradient_variance_matches_sigma() {
        let sigma = 0.7;
        let p = make_quadratic(10, 4.0, 0.5, sigma, 10_000, 5).unwrap();
        let x = vec![0.3; 10];
        let full = p.full_grad(&x);
        let mut g = vec![0.0; 10];
        let mut total = 0.0;
        for i in 0..p.num_samples() {
            p.sample_grad(&x, i, &mut g);
            total += g
                .iter()
                .zip(&full)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        }
        let var = total / p.num_samples() as f64;
        assert!((var - sigma * sigma).abs() / (sigma * sigma) < 0.05);
        assert_eq!(p.sgd_std(), Some(sigma));
    }

    #[test]
    fn mean_of_samples_is_full_objective() {
        let p = make_quadratic(6, 3.0, 0.2, 1.0, 40, 8).unwrap();
        let x = vec![0.1, -0.4, 2.0, 0.0, 1.0, -1.0];
        let mean_loss: f64 = (0..40).map(|i| p.sample_loss(&x, i)).sum::<f64>() / 40.0;
        assert_abs_diff_eq!(mean_loss, p.loss(&x), epsilon = 1e-12);
        let generic = {
            let mut total = vec![0.0; 6];
            let mut g = vec![0.0; 6];
            for i in 0..40 {
                p.sample_grad(&x, i, &mut g);
                total.iter_mut().zip(&g).for_each(|(t, v)| *t += v / 40.0);
            }
            total
        };
        for (a, b) in generic.iter().zip(p.full_grad(&x)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn excess_risk_nonnegative_and_fd() {
        let p = make_quadratic(20, 10.0, 0.1, 0.5, 100, 3).unwrap();
        let f_star = p.optimum_value().unwrap();
        assert_abs_diff_eq!(p.loss(&p.minimizer()), f_star, epsilon = 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert!(p.loss(&x) - f_star >= 0.0);
            let i = rng.random_range(0..100);
            assert!(finite_difference_error(&p, &x, i, 1e-5) <= 1e-6);
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(make_quadratic(3, 1.0, 2.0, 0.0, 10, 0).is_err());
        assert!(make_quadratic(3, 1.0, 0.0, 0.0, 10, 0).is_err());
        assert!(make_quadratic(0, 1.0, 1.0, 0.0, 10, 0).is_err());
    }

    #[test]
    fn seeded_construction_is_deterministic() {
        let a = make_quadratic(5, 2.0, 0.5, 0.3, 20, 77).unwrap();
        let b = make_quadratic(5, 2.0, 0.5, 0.3, 20, 77).unwrap();
        let c = make_quadratic(5, 2.0, 0.5, 0.3, 20, 78).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
