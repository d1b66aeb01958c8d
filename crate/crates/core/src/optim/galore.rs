use nalgebra::DMatrix;

use super::OptimError;

/// Orthonormal `rows x r` basis for the low-rank gradient subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    matrix: DMatrix<f64>,
    padded: bool,
}

impl Projector {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }

    /// True when the gradient had fewer than `r` nonzero singular values and
    /// the basis was completed with an arbitrary orthonormal complement.
    pub fn padded(&self) -> bool {
        self.padded
    }

    /// `P^T G` for a row-major `rows x cols` matrix, returned row-major
    /// `r x cols`.
    pub fn project(&self, g: &[f64], cols: usize) -> Vec<f64> {
        let gm = DMatrix::from_row_slice(self.rows(), cols, g);
        row_major(&(self.matrix.transpose() * gm))
    }

    /// `P D` for a row-major `r x cols` matrix.
    pub fn back_project(&self, d: &[f64], cols: usize) -> Vec<f64> {
        let dm = DMatrix::from_row_slice(self.rank(), cols, d);
        row_major(&(&self.matrix * dm))
    }

    /// `max |P^T P - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.matrix.transpose() * &self.matrix;
        let r = self.rank();
        (gram - DMatrix::<f64>::identity(r, r)).amax()
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Top-`r` left singular vectors of the row-major `rows x cols` matrix `g`.
pub fn find_projector(
    g: &[f64],
    rows: usize,
    cols: usize,
    r: usize,
) -> Result<Projector, OptimError> {
    if g.len() != rows * cols {
        return Err(OptimError::Config(format!(
            "gradient of length {} is not a {rows} x {cols} matrix",
            g.len()
        )));
    }
    if r == 0 || r > rows.min(cols) {
        return Err(OptimError::Config(format!(
            "rank {r} must lie in 1..={}",
            rows.min(cols)
        )));
    }
    let svd = DMatrix::from_row_slice(rows, cols, g).svd(true, false);
    let u = svd.u.as_ref().ok_or(OptimError::Projector)?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let top = sv.iter().cloned().fold(0.0, f64::max);
    let tol = top * rows.max(cols) as f64 * f64::EPSILON;

    let mut basis: Vec<Vec<f64>> = order
        .iter()
        .take(r)
        .filter(|&&i| top > 0.0 && sv[i] > tol)
        .map(|&i| u.column(i).iter().copied().collect())
        .collect();
    let padded = basis.len() < r;
    let mut candidate = 0;
    while basis.len() < r {
        if candidate >= rows {
            return Err(OptimError::Projector);
        }
        let mut e = vec![0.0; rows];
        e[candidate] = 1.0;
        candidate += 1;
        // two rounds of Gram-Schmidt
        for _ in 0..2 {
            for q in &basis {
                let proj: f64 = q.iter().zip(&e).map(|(a, b)| a * b).sum();
                e.iter_mut().zip(q).for_each(|(x, qv)| *x -= proj * qv);
            }
        }
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.5 {
            basis.push(e.iter().map(|v| v / norm).collect());
        }
    }
    let matrix = DMatrix::from_fn(rows, r, |i, j| basis[j][i]);
    Ok(Projector { matrix, padded })
}
