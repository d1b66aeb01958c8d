use std::collections::VecDeque;

use super::{FilterError, FilterSpec};

const BIAS_FLOOR: f64 = 1e-12;

/// Recursion buffers for one parameter vector.
///
/// Histories are ordered most recent first and start at zero. The scalar
/// `c_a` recursion is the same filter driven by a constant input of one, so
/// `m_t / c_{a,t}` has impulse weights that sum to one at every step.
#[derive(Debug, Clone)]
pub struct FilterState {
    dim: usize,
    m_hist: VecDeque<Vec<f64>>,
    g_hist: VecDeque<Vec<f64>>,
    ca_hist: VecDeque<f64>,
    cb_hist: VecDeque<f64>,
    t: u64,
}

/// Result of one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// Bias-corrected direction `m_t / c_{a,t}`.
    pub direction: Vec<f64>,
    /// Raw filter output `m_t`.
    pub raw: Vec<f64>,
    /// Bias factor `c_{a,t}`.
    pub bias: f64,
}

impl FilterState {
    pub fn new(spec: &FilterSpec, dim: usize) -> Self {
        let na = spec.feedback_order();
        let nb = spec.feedforward_order();
        Self {
            dim,
            m_hist: (0..na).map(|_| vec![0.0; dim]).collect(),
            g_hist: (0..nb).map(|_| vec![0.0; dim]).collect(),
            ca_hist: std::iter::repeat_n(0.0, na).collect(),
            cb_hist: std::iter::repeat_n(0.0, nb).collect(),
            t: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Most recent bias factor, `None` before the first step.
    pub fn last_bias(&self) -> Option<f64> {
        self.ca_hist.front().copied()
    }

    /// Advances the filter by one privatized gradient.
    pub fn step(&mut self, spec: &FilterSpec, g: &[f64]) -> Result<FilterOutput, FilterError> {
        let (a, b) = (spec.a(), spec.b());
        if a.len() != self.m_hist.len() || b.len() - 1 != self.g_hist.len() {
            return Err(FilterError::StateMismatch {
                state_a: self.m_hist.len(),
                state_b: self.g_hist.len(),
                spec_a: a.len(),
                spec_b: b.len() - 1,
            });
        }
        if g.len() != self.dim {
            return Err(FilterError::DimensionMismatch {
                expected: self.dim,
                got: g.len(),
            });
        }

        let mut raw: Vec<f64> = g.iter().map(|&x| b[0] * x).collect();
        for (bk, past) in b[1..].iter().zip(&self.g_hist) {
            for (m, &x) in raw.iter_mut().zip(past) {
                *m += bk * x;
            }
        }
        for (ak, past) in a.iter().zip(&self.m_hist) {
            for (m, &x) in raw.iter_mut().zip(past) {
                *m -= ak * x;
            }
        }

        let mut bias = b[0];
        for (bk, cb) in b[1..].iter().zip(&self.cb_hist) {
            bias += bk * cb;
        }
        for (ak, ca) in a.iter().zip(&self.ca_hist) {
            bias -= ak * ca;
        }
        if bias <= BIAS_FLOOR {
            return Err(FilterError::DegenerateBias {
                step: self.t,
                value: bias,
            });
        }

        if !self.m_hist.is_empty() {
            let mut slot = self.m_hist.pop_back().unwrap();
            slot.copy_from_slice(&raw);
            self.m_hist.push_front(slot);
            self.ca_hist.pop_back();
            self.ca_hist.push_front(bias);
        }
        if !self.g_hist.is_empty() {
            let mut slot = self.g_hist.pop_back().unwrap();
            slot.copy_from_slice(g);
            self.g_hist.push_front(slot);
            self.cb_hist.pop_back();
            self.cb_hist.push_front(1.0);
        }
        self.t += 1;

        let direction = raw.iter().map(|&m| m / bias).collect();
        Ok(FilterOutput {
            direction,
            raw,
            bias,
        })
    }
}
