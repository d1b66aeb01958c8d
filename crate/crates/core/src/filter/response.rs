use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{FilterError, FilterSpec, SIMPLE_POLE_SEPARATION};

const SCHUR_TOLERANCE: f64 = 1e-10;
const SCHUR_MAX_ITER: usize = 10_000;
const IMAGINARY_TOLERANCE: f64 = 1e-9;

/// Moving-average weights `kappa_0, kappa_1, ...` of a filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponse {
    pub kappa: Vec<f64>,
}

impl ImpulseResponse {
    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.kappa.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &ImpulseResponse) -> f64 {
        self.kappa
            .iter()
            .zip(&other.kappa)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// Which route produced an impulse response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KappaSource {
    /// No feedback: the weights are the feedforward coefficients.
    Feedforward,
    /// Partial-fraction expansion over simple poles.
    ClosedForm,
    /// Repeated poles, computed by running the recursion.
    Recursion,
}

/// Simple poles of `1 / (1 + sum a_k x^k)` and the matching residues.
#[derive(Debug, Clone, PartialEq)]
pub struct PoleZeroDecomposition {
    poles: Vec<Complex64>,
    residues: Vec<Complex64>,
}

impl PoleZeroDecomposition {
    pub fn new(poles: Vec<Complex64>, residues: Vec<Complex64>) -> Self {
        assert_eq!(poles.len(), residues.len());
        Self { poles, residues }
    }

    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    pub fn residues(&self) -> &[Complex64] {
        &self.residues
    }

    /// Evaluates `sum_k z_k / (1 - p_k x)`.
    pub fn eval(&self, x: Complex64) -> Complex64 {
        self.poles
            .iter()
            .zip(&self.residues)
            .map(|(p, z)| z / (Complex64::new(1.0, 0.0) - p * x))
            .sum()
    }
}

fn eval_monic(a: &[f64], z: Complex64) -> (Complex64, Complex64) {
    // Horner on z^n + a_1 z^{n-1} + ... + a_n, with derivative.
    let mut value = Complex64::new(1.0, 0.0);
    let mut deriv = Complex64::new(0.0, 0.0);
    for &c in a {
        deriv = deriv * z + value;
        value = value * z + c;
    }
    (value, deriv)
}

pub(super) fn poles(a: &[f64]) -> Result<Vec<Complex64>, FilterError> {
    let n = a.len();
    let mut roots: Vec<Complex64> = match n {
        0 => return Ok(Vec::new()),
        1 => vec![Complex64::new(-a[0], 0.0)],
        _ => {
            let mut companion = DMatrix::<f64>::zeros(n, n);
            for (j, &c) in a.iter().enumerate() {
                companion[(0, j)] = -c;
            }
            for i in 1..n {
                companion[(i, i - 1)] = 1.0;
            }
            let schur = companion
                .try_schur(SCHUR_TOLERANCE, SCHUR_MAX_ITER)
                .ok_or(FilterError::RootFinding)?;
            schur.complex_eigenvalues().iter().cloned().collect()
        }
    };
    for root in roots.iter_mut() {
        for _ in 0..4 {
            let (value, deriv) = eval_monic(a, *root);
            if deriv.norm() == 0.0 {
                break;
            }
            let next = *root - value / deriv;
            if eval_monic(a, next).0.norm() < value.norm() {
                *root = next;
            } else {
                break;
            }
        }
    }
    roots.sort_by(|x, y| {
        y.re.partial_cmp(&x.re)
            .unwrap()
            .then(y.im.partial_cmp(&x.im).unwrap())
    });
    Ok(roots)
}

/// Runs the raw recursion (no bias correction) on a unit impulse.
pub fn impulse_response(spec: &FilterSpec, len: usize) -> ImpulseResponse {
    let (a, b) = (spec.a(), spec.b());
    let mut kappa = Vec::with_capacity(len);
    for t in 0..len {
        let mut m = if t < b.len() { b[t] } else { 0.0 };
        for (k, &ak) in a.iter().enumerate() {
            if let Some(prev) = t.checked_sub(k + 1) {
                m -= ak * kappa[prev];
            }
        }
        kappa.push(m);
    }
    ImpulseResponse { kappa }
}

/// Partial-fraction expansion of the feedback polynomial.
///
/// Residues use `z_k = p_k^{n-1} / prod_{j != k} (p_k - p_j)`, which requires
/// simple poles.
pub fn pole_zero_decompose(spec: &FilterSpec) -> Result<PoleZeroDecomposition, FilterError> {
    let a = spec.a();
    if a.is_empty() {
        return Err(FilterError::NoFeedback);
    }
    let poles = poles(a)?;
    for i in 0..poles.len() {
        for j in i + 1..poles.len() {
            let dist = (poles[i] - poles[j]).norm();
            if dist <= SIMPLE_POLE_SEPARATION {
                return Err(FilterError::RepeatedPoles(i, j, dist));
            }
        }
    }
    let n = poles.len() as i32;
    let residues = poles
        .iter()
        .enumerate()
        .map(|(k, &pk)| {
            let denom: Complex64 = poles
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &pj)| pk - pj)
                .product();
            pk.powi(n - 1) / denom
        })
        .collect();
    Ok(PoleZeroDecomposition { poles, residues })
}

/// Impulse response from poles and residues, without running the recursion.
pub fn kappa_closed_form(
    pz: &PoleZeroDecomposition,
    b: &[f64],
    len: usize,
) -> Result<ImpulseResponse, FilterError> {
    // h_n = sum_k z_k p_k^n is the response of the feedback part alone.
    let mut powers: Vec<Complex64> = pz.residues.clone();
    let mut h = Vec::with_capacity(len);
    for _ in 0..len {
        h.push(powers.iter().sum::<Complex64>());
        for (w, p) in powers.iter_mut().zip(&pz.poles) {
            *w *= p;
        }
    }
    let mut kappa = Vec::with_capacity(len);
    for tau in 0..len {
        let value: Complex64 = b
            .iter()
            .enumerate()
            .take(tau + 1)
            .map(|(j, &bj)| h[tau - j] * bj)
            .sum();
        if value.im.abs() >= IMAGINARY_TOLERANCE {
            return Err(FilterError::ImaginaryResidue(value.im, tau));
        }
        kappa.push(value.re);
    }
    Ok(ImpulseResponse { kappa })
}

/// Impulse response by the closed form when poles are simple, otherwise by
/// recursion.
pub fn kappa(spec: &FilterSpec, len: usize) -> Result<(ImpulseResponse, KappaSource), FilterError> {
    if spec.feedback_order() == 0 {
        return Ok((impulse_response(spec, len), KappaSource::Feedforward));
    }
    match pole_zero_decompose(spec) {
        Ok(pz) => Ok((
            kappa_closed_form(&pz, spec.b(), len)?,
            KappaSource::ClosedForm,
        )),
        Err(FilterError::RepeatedPoles(..)) => {
            Ok((impulse_response(spec, len), KappaSource::Recursion))
        }
        Err(e) => Err(e),
    }
}

/// Complex gain at normalized frequency `nu` (cycles per step).
pub fn frequency_response(spec: &FilterSpec, nu: f64) -> Result<Complex64, FilterError> {
    let phasor = |tau: usize| Complex64::from_polar(1.0, -2.0 * PI * nu * tau as f64);
    let num: Complex64 = spec
        .b()
        .iter()
        .enumerate()
        .map(|(tau, &b)| phasor(tau) * b)
        .sum();
    let den: Complex64 = Complex64::new(1.0, 0.0)
        + spec
            .a()
            .iter()
            .enumerate()
            .map(|(k, &a)| phasor(k + 1) * a)
            .sum::<Complex64>();
    if den.norm() < 1e-12 {
        return Err(FilterError::PoleOnUnitCircle(nu));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{preset, PRESET_NAMES};
    use approx::assert_abs_diff_eq;

    #[test]
    fn momentum_impulse_response() {
        let k = impulse_response(&preset("momentum").unwrap(), 4);
        let expected = [0.1, 0.09, 0.081, 0.0729];
        for (x, y) in k.kappa.iter().zip(expected) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn sgd_impulse_is_delta() {
        let k = impulse_response(&FilterSpec::identity(), 5);
        assert_eq!(k.kappa, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn first_v1_hand_recursion() {
        let k = impulse_response(&preset("first_v1").unwrap(), 3);
        let expected = [1.0 / 11.0, 20.0 / 121.0, 9.0 / 11.0 * 20.0 / 121.0];
        for (x, y) in k.kappa.iter().zip(expected) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn first_order_decomposition() {
        let spec = FilterSpec::new(vec![-0.9], vec![1.0]).unwrap();
        let pz = pole_zero_decompose(&spec).unwrap();
        assert_abs_diff_eq!(pz.poles()[0].re, 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(pz.residues()[0].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn second_order_conjugate_poles() {
        let spec = FilterSpec::new(vec![-1.8, 0.85], vec![1.0]).unwrap();
        let pz = pole_zero_decompose(&spec).unwrap();
        let (p0, p1) = (pz.poles()[0], pz.poles()[1]);
        assert_abs_diff_eq!(p0.re, 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(p0.im.abs(), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!((p0 - p1.conj()).norm(), 0.0, epsilon = 1e-12);
        let (z0, z1) = (pz.residues()[0], pz.residues()[1]);
        assert_abs_diff_eq!((z0 - z1.conj()).norm(), 0.0, epsilon = 1e-12);
        // 2x2 linear solve: z0 + z1 = 1, z0 p1 + z1 p0 = 0.
        assert_abs_diff_eq!((z0 + z1 - 1.0).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((z0 * p1 + z1 * p0).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn partial_fraction_identity_on_presets() {
        for name in PRESET_NAMES {
            let spec = preset(name).unwrap();
            if spec.feedback_order() == 0 {
                continue;
            }
            let pz = pole_zero_decompose(&spec).unwrap();
            for i in 0..32 {
                let x = Complex64::from_polar(0.5 * (i as f64 + 1.0) / 32.0, 0.7 * i as f64);
                let direct = 1.0
                    / (Complex64::new(1.0, 0.0)
                        + spec
                            .a()
                            .iter()
                            .enumerate()
                            .map(|(k, &a)| x.powi(k as i32 + 1) * a)
                            .sum::<Complex64>());
                assert!((pz.eval(x) - direct).norm() < 1e-8, "{name} at {x}");
            }
        }
    }

    #[test]
    fn zero_feedback_is_rejected() {
        let spec = FilterSpec::new(vec![0.0], vec![1.0]).unwrap();
        assert_eq!(pole_zero_decompose(&spec), Err(FilterError::NoFeedback));
    }

    #[test]
    fn repeated_poles_fall_back_to_recursion() {
        // (1 - 0.5x)^2
        let spec = FilterSpec::new(vec![-1.0, 0.25], vec![0.25]).unwrap();
        assert!(matches!(
            pole_zero_decompose(&spec),
            Err(FilterError::RepeatedPoles(..))
        ));
        let (k, source) = kappa(&spec, 10).unwrap();
        assert_eq!(source, KappaSource::Recursion);
        assert_eq!(k, impulse_response(&spec, 10));
    }

    #[test]
    fn geometric_closed_form() {
        let pz = PoleZeroDecomposition::new(
            vec![Complex64::new(0.5, 0.0)],
            vec![Complex64::new(1.0, 0.0)],
        );
        let k = kappa_closed_form(&pz, &[1.0], 3).unwrap();
        assert_eq!(k.kappa, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn momentum_closed_form_matches_recursion() {
        let spec = preset("momentum").unwrap();
        let pz = pole_zero_decompose(&spec).unwrap();
        let closed = kappa_closed_form(&pz, spec.b(), 200).unwrap();
        let rec = impulse_response(&spec, 200);
        assert!(closed.max_abs_diff(&rec) < 1e-12);
    }

    #[test]
    fn unbalanced_residues_are_reported() {
        let pz = PoleZeroDecomposition::new(
            vec![Complex64::new(0.5, 0.1)],
            vec![Complex64::new(1.0, 0.0)],
        );
        assert!(matches!(
            kappa_closed_form(&pz, &[1.0], 4),
            Err(FilterError::ImaginaryResidue(_, 1))
        ));
    }

    #[test]
    fn frequency_response_values() {
        let momentum = preset("momentum").unwrap();
        let h0 = frequency_response(&momentum, 0.0).unwrap();
        assert_abs_diff_eq!(h0.re, 1.0, epsilon = 1e-12);
        let h_half = frequency_response(&momentum, 0.5).unwrap();
        assert_abs_diff_eq!(h_half.norm(), 0.1 / 1.9, epsilon = 1e-12);
        for nu in [-0.5, -0.1, 0.2, 0.37] {
            let h = frequency_response(&FilterSpec::identity(), nu).unwrap();
            assert_abs_diff_eq!((h - 1.0).norm(), 0.0, epsilon = 1e-15);
        }
        for name in PRESET_NAMES {
            let h = frequency_response(&preset(name).unwrap(), 0.0).unwrap();
            assert_abs_diff_eq!(h.re, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn pole_on_circle_is_an_error() {
        let spec = FilterSpec::new(vec![-1.0], vec![0.5]).unwrap();
        assert_eq!(
            frequency_response(&spec, 0.0),
            Err(FilterError::PoleOnUnitCircle(0.0))
        );
    }
}
