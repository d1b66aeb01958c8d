use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{fnv_fingerprint, Problem, ProblemError};

/// Default cap on the number of cells read from a CSV file.
pub const DEFAULT_MAX_CELLS: usize = 1_000_000;

/// Multinomial logistic regression with an intercept.
///
/// The parameter is a row-major `(d + 1) x k` matrix: rows `0..d` hold the
/// feature weights and row `d` the per-class intercepts.
#[derive(Debug, Clone)]
pub struct Logistic {
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
    max_feature_norm: f64,
    mean_feature_sq: f64,
}

impl Logistic {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        num_features: usize,
        num_classes: usize,
    ) -> Result<Self, ProblemError> {
        let n = labels.len();
        if n == 0 || features.len() != n * num_features {
            return Err(ProblemError::InvalidParameter(format!(
                "{} feature values do not form {n} rows of {num_features}",
                features.len()
            )));
        }
        if num_classes < 2 {
            return Err(ProblemError::InvalidParameter(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(ProblemError::InvalidParameter(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        // |phi|^2 = |x|^2 + 1 for the augmented feature vector.
        let sq: Vec<f64> = features
            .chunks(num_features.max(1))
            .take(n)
            .map(|row| {
                if num_features == 0 {
                    1.0
                } else {
                    row.iter().map(|v| v * v).sum::<f64>() + 1.0
                }
            })
            .collect();
        let max_feature_norm = sq.iter().cloned().fold(0.0, f64::max).sqrt();
        let mean_feature_sq = sq.iter().sum::<f64>() / n as f64;
        Ok(Self {
            features,
            labels,
            num_features,
            num_classes,
            max_feature_norm,
            mean_feature_sq,
        })
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Class probabilities for sample `i`.
    fn softmax(&self, w: &[f64], i: usize) -> Vec<f64> {
        let k = self.num_classes;
        let x = self.features(i);
        let mut logits: Vec<f64> = w[self.num_features * k..].to_vec();
        for (j, &xj) in x.iter().enumerate() {
            for (c, z) in logits.iter_mut().enumerate() {
                *z += xj * w[j * k + c];
            }
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for z in logits.iter_mut() {
            *z = (*z - max).exp();
            total += *z;
        }
        logits.iter_mut().for_each(|z| *z /= total);
        logits
    }
}

/// Gaussian class clusters with means at distance `separation` from the
/// origin in random directions; labels are balanced (`y_i = i mod k`).
pub fn make_logistic(
    d: usize,
    k: usize,
    num_samples: usize,
    seed: u64,
    separation: f64,
) -> Result<Logistic, ProblemError> {
    if k < 2 || d == 0 || num_samples == 0 {
        return Err(ProblemError::InvalidParameter(format!(
            "need d >= 1, k >= 2, N >= 1 (got d = {d}, k = {k}, N = {num_samples})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(k);
    for _ in 0..k {
        let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        means.push(
            dir.iter()
                .map(|v| separation * v / norm)
                .collect::<Vec<f64>>(),
        );
    }
    let mut features = Vec::with_capacity(num_samples * d);
    let mut labels = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let y = i % k;
        labels.push(y);
        for mean in &means[y] {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(mean + z);
        }
    }
    Logistic::new(features, labels, d, k)
}

/// Options for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub max_cells: usize,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            max_cells: DEFAULT_MAX_CELLS,
        }
    }
}

/// Reads a numeric CSV with a header row and fits a logistic head on the
/// standardized remaining columns.
///
/// Rows in errors are file line numbers (the header is line 1); columns are
/// 1-based. Quoted fields are not supported.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    options: &CsvOptions,
) -> Result<Logistic, ProblemError> {
    let path = path.as_ref();
    let io_err = |source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .quoting(false)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| ProblemError::Csv {
            row: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| ProblemError::UnknownLabel {
            name: label_column.to_string(),
            available: header.clone(),
        })?;
    let width = header.len();
    let num_features = width - 1;

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); num_features];
    let mut raw_labels = Vec::new();
    let mut cells = width;
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| ProblemError::Csv {
            row,
            message: e.to_string(),
        })?;
        if record.len() != width {
            return Err(ProblemError::Ragged {
                row,
                expected: width,
                got: record.len(),
            });
        }
        cells += width;
        if cells > options.max_cells {
            return Err(ProblemError::TooLarge {
                cells,
                limit: options.max_cells,
            });
        }
        let mut feature = 0;
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| ProblemError::NonNumeric {
                row,
                column: col + 1,
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(ProblemError::NonNumeric {
                    row,
                    column: col + 1,
                    value: cell.to_string(),
                });
            }
            if col == label_idx {
                raw_labels.push(value);
            } else {
                columns[feature].push(value);
                feature += 1;
            }
        }
    }
    let n = raw_labels.len();
    if n == 0 {
        return Err(ProblemError::Csv {
            row: 2,
            message: "no data rows".into(),
        });
    }

    let mut classes = raw_labels.clone();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|v| classes.binary_search_by(|c| c.total_cmp(v)).unwrap())
        .collect();

    for column in columns.iter_mut() {
        let mean = column.iter().sum::<f64>() / n as f64;
        let var = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        for v in column.iter_mut() {
            *v -= mean;
            if std > 0.0 {
                *v /= std;
            }
        }
    }
    let mut features = Vec::with_capacity(n * num_features);
    for i in 0..n {
        for column in &columns {
            features.push(column[i]);
        }
    }
    Logistic::new(features, labels, num_features, classes.len())
}

impl Problem for Logistic {
    fn dim(&self) -> usize {
        (self.num_features + 1) * self.num_classes
    }

    fn num_samples(&self) -> usize {
        self.labels.len()
    }

    fn sample_loss(&self, w: &[f64], i: usize) -> f64 {
        let k = self.num_classes;
        let x = self.features(i);
        let mut logits: Vec<f64> = w[self.num_features * k..].to_vec();
        for (j, &xj) in x.iter().enumerate() {
            for (c, z) in logits.iter_mut().enumerate() {
                *z += xj * w[j * k + c];
            }
        }
        // margins relative to the true class; log1p keeps confident samples accurate
        let zy = logits[self.labels[i]];
        let max = logits.iter().map(|z| z - zy).fold(0.0, f64::max);
        if max == 0.0 {
            let rest: f64 = logits
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != self.labels[i])
                .map(|(_, z)| (z - zy).exp())
                .sum();
            rest.ln_1p()
        } else {
            max + logits
                .iter()
                .map(|z| (z - zy - max).exp())
                .sum::<f64>()
                .ln()
        }
    }

    fn sample_grad(&self, w: &[f64], i: usize, out: &mut [f64]) {
        let k = self.num_classes;
        let mut residual = self.softmax(w, i);
        residual[self.labels[i]] -= 1.0;
        for (j, &xj) in self.features(i).iter().enumerate() {
            for c in 0..k {
                out[j * k + c] = residual[c] * xj;
            }
        }
        out[self.num_features * k..].copy_from_slice(&residual);
    }

    /// `(1/2) mean |phi|^2` bounds the largest Hessian eigenvalue, since the
    /// softmax Jacobian has norm at most 1/2.
    fn smoothness(&self) -> Option<f64> {
        Some(0.5 * self.mean_feature_sq)
    }

    fn grad_bound(&self) -> Option<f64> {
        Some(std::f64::consts::SQRT_2 * self.max_feature_norm)
    }

    fn matrix_shape(&self) -> Option<(usize, usize)> {
        Some((self.num_features + 1, self.num_classes))
    }

    fn blocks(&self) -> Vec<usize> {
        vec![self.num_features * self.num_classes, self.num_classes]
    }

    fn fingerprint(&self) -> u64 {
        let labels: Vec<f64> = self.labels.iter().map(|&y| y as f64).collect();
        fnv_fingerprint(
            &[&self.features, &labels],
            &[self.num_features as u64, self.num_classes as u64],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::finite_difference_error;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use std::io::Write;

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let p = make_logistic(3, 4, 8, 1, 2.0).unwrap();
        let w = vec![0.0; p.dim()];
        let mut g = vec![0.0; p.dim()];
        for i in 0..8 {
            p.sample_grad(&w, i, &mut g);
            let y = p.label(i);
            let mut phi = p.features(i).to_vec();
            phi.push(1.0);
            for (j, f) in phi.iter().enumerate() {
                for c in 0..4 {
                    let r = 0.25 - if c == y { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(g[j * 4 + c], r * f, epsilon = 1e-15);
                }
            }
            assert_abs_diff_eq!(p.sample_loss(&w, i), 4f64.ln(), epsilon = 1e-15);
        }
    }

    #[test]
    fn confident_loss_keeps_relative_precision() {
        // one feature, two classes; logit margin m gives loss ln(1 + e^-m)
        let p = Logistic::new(vec![1.0], vec![0], 1, 2).unwrap();
        for m in [5.0f64, 20.0, 40.0] {
            let w = [m / 2.0, -m / 2.0, 0.0, 0.0];
            let exact = (-m).exp().ln_1p();
            assert!(
                (p.sample_loss(&w, 0) - exact).abs() <= 1e-14 * exact,
                "margin {m}"
            );
        }
    }

    #[test]
    fn separable_limit_has_vanishing_loss() {
        let d = 5;
        let k = 3;
        let p = make_logistic(d, k, 60, 2, 200.0).unwrap();
        // weights proportional to the empirical class means
        let mut w = vec![0.0; p.dim()];
        for i in 0..60 {
            for (j, f) in p.features(i).iter().enumerate() {
                w[j * k + p.label(i)] += f / 20.0;
            }
        }
        for c in 0..k {
            let sq: f64 = (0..d).map(|j| w[j * k + c].powi(2)).sum();
            w[d * k + c] = -0.5 * sq;
        }
        let scaled: Vec<f64> = w.iter().map(|v| v * 10.0).collect();
        assert!(p.loss(&scaled) < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = make_logistic(6, 3, 50, 3, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let w: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let i = rng.random_range(0..50);
            let err = finite_difference_error(&p, &w, i, 1e-5);
            assert!(err <= 1e-6, "{err}");
        }
    }

    #[test]
    fn gradient_bound_holds() {
        let p = make_logistic(4, 3, 200, 4, 3.0).unwrap();
        let bound = p.grad_bound().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut g = vec![0.0; p.dim()];
        for _ in 0..10_000 {
            let w: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-5.0..5.0)).collect();
            p.sample_grad(&w, rng.random_range(0..200), &mut g);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= bound + 1e-12);
        }
    }

    #[test]
    fn shape_and_blocks() {
        let p = make_logistic(4, 5, 10, 0, 1.0).unwrap();
        assert_eq!(p.dim(), 25);
        assert_eq!(p.matrix_shape(), Some((5, 5)));
        assert_eq!(p.blocks(), vec![20, 5]);
        assert!(make_logistic(4, 1, 10, 0, 1.0).is_err());
    }

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(contents.as_bytes()).unwrap();
        file
    }

    #[test]
    fn toy_csv_shape_and_standardization() {
        let file = write_csv("x1,label,x2\n1.0,0,5\n2.0,1,7\n4.5,0,6\n");
        let p = load_csv(file.path(), "label", &CsvOptions::default()).unwrap();
        assert_eq!(p.num_samples(), 3);
        assert_eq!(p.num_features(), 2);
        assert_eq!(p.num_classes(), 2);
        for j in 0..2 {
            let mean: f64 = (0..3).map(|i| p.features(i)[j]).sum::<f64>() / 3.0;
            let var: f64 = (0..3).map(|i| p.features(i)[j].powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() <= 1e-9);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
        }
        assert_eq!((p.label(0), p.label(1), p.label(2)), (0, 1, 0));
        let again = load_csv(file.path(), "label", &CsvOptions::default()).unwrap();
        assert_eq!(p.fingerprint(), again.fingerprint());
    }

    #[test]
    fn csv_errors_carry_positions() {
        let ragged = write_csv("a,b,y\n1,2,0\n3,4\n");
        match load_csv(ragged.path(), "y", &CsvOptions::default()) {
            Err(ProblemError::Ragged {
                row: 3,
                expected: 3,
                got: 2,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let text = write_csv("a,b,y\n1,2,0\n3,oops,1\n");
        match load_csv(text.path(), "y", &CsvOptions::default()) {
            Err(ProblemError::NonNumeric {
                row: 3, column: 2, ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let ok = write_csv("a,b,y\n1,2,0\n3,4,1\n");
        assert!(matches!(
            load_csv(ok.path(), "target", &CsvOptions::default()),
            Err(ProblemError::UnknownLabel { .. })
        ));
        assert!(matches!(
            load_csv(ok.path(), "y", &CsvOptions { max_cells: 6 }),
            Err(ProblemError::TooLarge { .. })
        ));
        assert!(load_csv(ok.path(), "y", &CsvOptions { max_cells: 9 }).is_ok());
    }
}
