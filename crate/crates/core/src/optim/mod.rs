//! Update pipelines for DP-SGD, DP-Adam and DP-GaLore with a gradient filter.
//!
//! One step runs, in order: privatize, GaLore projection, second-moment
//! update, filter with bias correction, Adam normalization, back-projection
//! and the parameter update. Plain DP-SGD is the SGD variant with the identity
//! filter.

mod audit;
mod config;
mod galore;
mod trace;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dp::{privatize, DpError};
use crate::filter::{FilterError, FilterState};
use crate::problems::Problem;

pub use audit::{audit_theory_bound, BoundReport};
pub use config::{OptimizerConfig, Schedule, Variant, WARMUP_FRACTION};
pub use galore::{find_projector, Projector};
pub use trace::{
    canonical_json, config_hash, config_hash_hex, hash_value, ProjectorEvent, RunTrace, Snapshot,
    StepRecord,
};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("non-finite parameter after step {step}")]
    NonFinite { step: usize },
    #[error("singular value decomposition failed")]
    Projector,
    #[error("audit needs {0}")]
    Audit(String),
    #[error("trace: {0}")]
    Trace(String),
}

/// `v / (1 - (1 - beta)^{v_steps})`.
pub fn second_moment_bias_correct(v: &[f64], beta: f64, v_steps: u64) -> Vec<f64> {
    let weight = 1.0 - (1.0 - beta).powf(v_steps as f64);
    v.iter().map(|x| x / weight).collect()
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub x: Vec<f64>,
    filter_state: FilterState,
    v: Vec<f64>,
    v_steps: u64,
    projector: Option<Projector>,
    steps_since_projection: usize,
    shape: Option<(usize, usize)>,
    blocks: Vec<usize>,
    t: usize,
}

/// Output of one [`step`].
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub record: StepRecord,
    /// Privatized gradient.
    pub raw: Vec<f64>,
    /// Filtered direction in parameter space.
    pub filtered: Vec<f64>,
    /// `Some(padded)` when the projector was refreshed this step.
    pub projector_refresh: Option<bool>,
}

impl OptimizerState {
    pub fn new(problem: &dyn Problem, cfg: &OptimizerConfig) -> Result<Self, OptimError> {
        cfg.validate()?;
        let d = problem.dim();
        let x = problem.initial_point();
        if x.len() != d {
            return Err(OptimError::Config(format!(
                "initial point has dimension {}, problem has {d}",
                x.len()
            )));
        }
        if cfg.batch_size > problem.num_samples() {
            return Err(OptimError::Config(format!(
                "batch size {} exceeds sample count {}",
                cfg.batch_size,
                problem.num_samples()
            )));
        }
        let (inner_dim, shape) = match cfg.variant {
            Variant::Galore => {
                let (rows, cols) = problem.matrix_shape().ok_or_else(|| {
                    OptimError::Config("GaLore needs a matrix-shaped parameter".into())
                })?;
                if cfg.galore_rank > rows.min(cols) {
                    return Err(OptimError::Config(format!(
                        "GaLore rank {} exceeds min({rows}, {cols})",
                        cfg.galore_rank
                    )));
                }
                (cfg.galore_rank * cols, Some((rows, cols)))
            }
            _ => (d, None),
        };
        Ok(Self {
            x,
            filter_state: FilterState::new(&cfg.filter, inner_dim),
            v: vec![
                0.0;
                if cfg.variant == Variant::Sgd {
                    0
                } else {
                    inner_dim
                }
            ],
            v_steps: 0,
            projector: None,
            steps_since_projection: 0,
            shape,
            blocks: problem.blocks(),
            t: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn projector(&self) -> Option<&Projector> {
        self.projector.as_ref()
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One optimizer step on the minibatch `batch`.
pub fn step<R: Rng + ?Sized>(
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    batch: &[usize],
    problem: &dyn Problem,
    rng: &mut R,
) -> Result<StepOutput, OptimError> {
    let t = state.t;
    let d = problem.dim();
    let loss = problem.loss(&state.x);
    let true_grad_norm = norm(&problem.full_grad(&state.x));

    let per_sample: Vec<Vec<f64>> = batch
        .iter()
        .map(|&i| {
            let mut g = vec![0.0; d];
            problem.sample_grad(&state.x, i, &mut g);
            g
        })
        .collect();
    let g = privatize(&per_sample, &state.blocks, &cfg.clip, cfg.sigma_dp, rng)?;

    let mut projector_refresh = None;
    let inner = match state.shape {
        Some((rows, cols)) => {
            if state
                .steps_since_projection
                .is_multiple_of(cfg.galore_period)
            {
                let p = find_projector(&g, rows, cols, cfg.galore_rank)?;
                projector_refresh = Some(p.padded());
                state.projector = Some(p);
                state.v.iter_mut().for_each(|v| *v = 0.0);
                state.v_steps = 0;
            }
            state.steps_since_projection += 1;
            state
                .projector
                .as_ref()
                .expect("projector set")
                .project(&g, cols)
        }
        None => g.clone(),
    };

    if cfg.variant != Variant::Sgd {
        let beta = cfg.adam_beta;
        for (v, x) in state.v.iter_mut().zip(&inner) {
            *v = (1.0 - beta) * *v + beta * x * x;
        }
        state.v_steps += 1;
    }

    let out = state.filter_state.step(&cfg.filter, &inner)?;
    let mut direction = out.direction;

    if cfg.variant != Variant::Sgd {
        let v_hat = second_moment_bias_correct(&state.v, cfg.adam_beta, state.v_steps);
        for (m, v) in direction.iter_mut().zip(&v_hat) {
            *m /= v.sqrt().max(cfg.adam_eps);
        }
    }
    if let (Some((_, cols)), Some(p)) = (state.shape, state.projector.as_ref()) {
        direction = p.back_project(&direction, cols);
    }

    let lr = cfg.eta * cfg.schedule.factor(t, cfg.steps);
    for (x, dir) in state.x.iter_mut().zip(&direction) {
        *x -= lr * dir;
    }
    if state.x.iter().any(|x| !x.is_finite()) {
        return Err(OptimError::NonFinite { step: t });
    }
    state.t += 1;

    Ok(StepOutput {
        record: StepRecord {
            t,
            loss,
            true_grad_norm,
            priv_grad_norm: norm(&g),
            bias: out.bias,
            lr,
        },
        raw: g,
        filtered: direction,
        projector_refresh,
    })
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: RunTrace,
    pub final_x: Vec<f64>,
    pub final_loss: f64,
}

/// Draws a uniform minibatch without replacement.
pub fn draw_batch<R: Rng + ?Sized>(
    rng: &mut R,
    num_samples: usize,
    batch_size: usize,
) -> Vec<usize> {
    index::sample(rng, num_samples, batch_size).into_vec()
}

/// Runs `cfg.steps` steps from the problem's initial point.
///
/// A single ChaCha8 stream seeded with `seed` supplies, per step, the
/// minibatch and then the privatization noise.
pub fn run(
    problem: &dyn Problem,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<RunOutput, OptimError> {
    let mut state = OptimizerState::new(problem, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = RunTrace::new(cfg, seed, problem.dim(), problem.sgd_std());
    trace.records.reserve(cfg.steps);
    for t in 0..cfg.steps {
        let batch = draw_batch(&mut rng, problem.num_samples(), cfg.batch_size);
        let out = step(&mut state, cfg, &batch, problem, &mut rng)?;
        if let Some(padded) = out.projector_refresh {
            trace.projector_events.push(ProjectorEvent { t, padded });
        }
        if cfg.snapshot_stride > 0 && t % cfg.snapshot_stride == 0 {
            trace.snapshots.push(Snapshot {
                t,
                raw: out.raw,
                filtered: out.filtered,
            });
        }
        trace.records.push(out.record);
    }
    let final_loss = problem.loss(&state.x);
    Ok(RunOutput {
        trace,
        final_x: state.x,
        final_loss,
    })
}
