//! Finite-sum objectives `F(x) = (1/N) sum_i f(x; xi_i)` with analytic
//! per-sample gradients.

mod logistic;
mod quadratic;

use thiserror::Error;

pub use logistic::{load_csv, make_logistic, CsvOptions, Logistic, DEFAULT_MAX_CELLS};
pub use quadratic::{make_quadratic, Quadratic};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("csv row {row}, column {column}: cannot parse {value:?} as a number")]
    NonNumeric {
        row: usize,
        column: usize,
        value: String,
    },
    #[error("csv row {row} has {got} fields, header has {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("label column {name:?} not found; columns are {available:?}")]
    UnknownLabel {
        name: String,
        available: Vec<String>,
    },
    #[error("csv has {cells} cells, limit is {limit}")]
    TooLarge { cells: usize, limit: usize },
}

/// An ERM instance.
///
/// Optional constants are `None` when the problem cannot state them exactly.
pub trait Problem: Send + Sync {
    fn dim(&self) -> usize;

    fn num_samples(&self) -> usize;

    fn sample_loss(&self, x: &[f64], i: usize) -> f64;

    /// Writes `grad f(x; xi_i)` into `out`.
    fn sample_grad(&self, x: &[f64], i: usize, out: &mut [f64]);

    fn loss(&self, x: &[f64]) -> f64 {
        let n = self.num_samples();
        (0..n).map(|i| self.sample_loss(x, i)).sum::<f64>() / n as f64
    }

    fn full_grad(&self, x: &[f64]) -> Vec<f64> {
        let n = self.num_samples();
        let mut total = vec![0.0; self.dim()];
        let mut g = vec![0.0; self.dim()];
        for i in 0..n {
            self.sample_grad(x, i, &mut g);
            for (t, v) in total.iter_mut().zip(&g) {
                *t += v;
            }
        }
        total.iter_mut().for_each(|t| *t /= n as f64);
        total
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// Minimum value `F*`.
    fn optimum_value(&self) -> Option<f64> {
        None
    }

    /// Smoothness constant `L` of `F`.
    fn smoothness(&self) -> Option<f64> {
        None
    }

    /// Bound `G` on every per-sample gradient norm.
    fn grad_bound(&self) -> Option<f64> {
        None
    }

    /// `sigma_SGD` with `E |grad f - grad F|^2 <= sigma_SGD^2`.
    fn sgd_std(&self) -> Option<f64> {
        None
    }

    /// `(rows, cols)` when the parameter vector is a row-major matrix.
    fn matrix_shape(&self) -> Option<(usize, usize)> {
        None
    }

    /// Block sizes for per-block clipping.
    fn blocks(&self) -> Vec<usize> {
        vec![self.dim()]
    }

    /// Stable fingerprint of the problem data.
    fn fingerprint(&self) -> u64;
}

/// Worst relative error between the analytic per-sample gradient and central
/// differences with step `h`.
///
/// The error for one probe is `|fd - g| / max(|g|, 1e-8)`.
pub fn finite_difference_error(problem: &dyn Problem, x: &[f64], i: usize, h: f64) -> f64 {
    let d = problem.dim();
    let mut grad = vec![0.0; d];
    problem.sample_grad(x, i, &mut grad);
    let mut probe = x.to_vec();
    let mut diff_sq = 0.0;
    for j in 0..d {
        let orig = probe[j];
        probe[j] = orig + h;
        let up = problem.sample_loss(&probe, i);
        probe[j] = orig - h;
        let down = problem.sample_loss(&probe, i);
        probe[j] = orig;
        let fd = (up - down) / (2.0 * h);
        diff_sq += (fd - grad[j]).powi(2);
    }
    let scale = grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-8);
    diff_sq.sqrt() / scale
}

pub(crate) fn fnv_fingerprint(parts: &[&[f64]], extra: &[u64]) -> u64 {
    use std::hash::Hasher;
    let mut hasher = fnv::FnvHasher::default();
    for part in parts {
        hasher.write_u64(part.len() as u64);
        for v in *part {
            hasher.write_u64(v.to_bits());
        }
    }
    for e in extra {
        hasher.write_u64(*e);
    }
    hasher.finish()
}
