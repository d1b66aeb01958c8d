use serde::{Deserialize, Serialize};

use crate::filter::{impulse_response, normalized_snr, AutoCorrelationProfile};
use crate::problems::Problem;

use super::{OptimError, OptimizerConfig, RunTrace};

/// Observed weighted gradient norm against the convergence bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `S_T = sum_t sum_{tau <= t} c_tau kappa_tau`.
    pub s_t: f64,
    pub snr: f64,
    /// `E_{t ~ P(t)} |grad F(x_t)|^2`.
    pub observed: f64,
    /// `(F(x_0) - F*) / (eta S_T)`.
    pub optimization_term: f64,
    /// `(eta L / (2 SNR)) (d sigma_dp^2 + sigma_SGD^2 / B)`.
    pub noise_term: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Evaluates the convergence bound on a recorded run.
pub fn audit_theory_bound(
    trace: &RunTrace,
    problem: &dyn Problem,
    cfg: &OptimizerConfig,
    profile: &AutoCorrelationProfile,
) -> Result<BoundReport, OptimError> {
    let missing = |what: &str| OptimError::Audit(what.to_string());
    let l = problem
        .smoothness()
        .ok_or_else(|| missing("a smoothness constant"))?;
    let f_star = problem
        .optimum_value()
        .ok_or_else(|| missing("the optimal value"))?;
    let sigma_sgd = problem
        .sgd_std()
        .ok_or_else(|| missing("a gradient variance bound"))?;
    let horizon = trace.records.len();
    if horizon == 0 {
        return Err(missing("at least one recorded step"));
    }
    if trace.records.iter().any(|r| !r.true_grad_norm.is_finite()) {
        return Err(missing("true gradient norms"));
    }

    let kappa = impulse_response(&cfg.filter, horizon);
    let mut cumulative = Vec::with_capacity(horizon);
    let mut running = 0.0;
    for (tau, k) in kappa.kappa.iter().enumerate() {
        running += profile.at(tau) * k;
        cumulative.push(running);
    }
    let s_t: f64 = cumulative.iter().sum();
    if s_t.is_nan() || s_t <= 0.0 {
        return Err(missing("a positive weight sum S_T"));
    }
    let observed = trace
        .records
        .iter()
        .zip(&cumulative)
        .map(|(r, w)| w / s_t * r.true_grad_norm * r.true_grad_norm)
        .sum();

    let snr = normalized_snr(&kappa, profile, horizon)?;
    let f0 = trace.records[0].loss;
    let optimization_term = (f0 - f_star) / (cfg.eta * s_t);
    let noise_level = trace.dim as f64 * cfg.sigma_dp * cfg.sigma_dp
        + sigma_sgd * sigma_sgd / cfg.batch_size as f64;
    let noise_term = cfg.eta * l / (2.0 * snr) * noise_level;
    let bound = optimization_term + noise_term;
    Ok(BoundReport {
        s_t,
        snr,
        observed,
        optimization_term,
        noise_term,
        bound,
        holds: observed <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::ClipConfig;
    use crate::filter::{preset, FilterSpec};
    use crate::optim::run;
    use crate::problems::{make_quadratic, Quadratic};
    use approx::assert_relative_eq;

    fn noiseless() -> Quadratic {
        let p = make_quadratic(20, 10.0, 0.1, 0.0, 16, 1).unwrap();
        let d = p.dim();
        p.with_initial_point(vec![3.0; d])
    }

    #[test]
    fn sgd_weight_sum_is_half_horizon() {
        let p = noiseless();
        let cfg = OptimizerConfig::sgd(
            FilterSpec::identity(),
            0.005,
            ClipConfig::disabled(),
            0.0,
            16,
            300,
        );
        let out = run(&p, &cfg, 0).unwrap();
        let report = audit_theory_bound(
            &out.trace,
            &p,
            &cfg,
            &AutoCorrelationProfile::constant_half(),
        )
        .unwrap();
        assert_relative_eq!(report.s_t, 150.0, max_relative = 1e-15);
        assert_eq!(report.noise_term, 0.0);
        assert!(report.holds);
        assert!(report.observed < report.bound);
    }

    #[test]
    fn momentum_bound_holds() {
        let p = noiseless();
        let cfg = OptimizerConfig::sgd(
            preset("momentum").unwrap(),
            0.005,
            ClipConfig::disabled(),
            0.0,
            16,
            300,
        );
        let out = run(&p, &cfg, 0).unwrap();
        let report = audit_theory_bound(
            &out.trace,
            &p,
            &cfg,
            &AutoCorrelationProfile::constant_half(),
        )
        .unwrap();
        assert!(report.holds, "{report:?}");
    }

    #[test]
    fn noise_term_is_linear_in_variance() {
        let p = noiseless();
        let mut cfg = OptimizerConfig::sgd(
            FilterSpec::identity(),
            0.005,
            ClipConfig::disabled(),
            0.0,
            16,
            10,
        );
        let out = run(&p, &cfg, 0).unwrap();
        let profile = AutoCorrelationProfile::constant_half();
        cfg.sigma_dp = 0.1;
        let a = audit_theory_bound(&out.trace, &p, &cfg, &profile).unwrap();
        cfg.sigma_dp = 0.2;
        let b = audit_theory_bound(&out.trace, &p, &cfg, &profile).unwrap();
        assert_relative_eq!(b.noise_term, 4.0 * a.noise_term, max_relative = 1e-12);
        assert_eq!(a.optimization_term, b.optimization_term);
    }
}
