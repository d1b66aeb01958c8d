use doppler::optim::run;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::config::{check_filter, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::output::{ensure_dir, pool, write_json, write_rows};

/// Fewest seeds accepted by `compare`.
pub const MIN_COMPARE_SEEDS: usize = 10;

/// Privacy-relevant parameters both arms must share.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacyAttestation {
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub sigma_dp: f64,
    pub clip_threshold: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub num_samples: usize,
}

impl PrivacyAttestation {
    fn of(cfg: &ExperimentConfig) -> Self {
        Self {
            epsilon: cfg.privacy.epsilon,
            delta: cfg.privacy.delta,
            sigma_dp: cfg.optimizer.sigma_dp,
            clip_threshold: cfg.optimizer.clip.threshold,
            batch_size: cfg.optimizer.batch_size,
            steps: cfg.optimizer.steps,
            num_samples: cfg.num_samples,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub baseline: String,
    pub candidate: String,
    pub baseline_hash: String,
    pub candidate_hash: String,
    pub seeds: Vec<u64>,
    pub baseline_losses: Vec<f64>,
    pub candidate_losses: Vec<f64>,
    /// `candidate - baseline` per seed.
    pub differences: Vec<f64>,
    pub mean_difference: f64,
    pub candidate_wins: usize,
    pub ties: usize,
    /// Two-sided sign test, ties dropped.
    pub p_value: f64,
    pub baseline_mean_excess: Option<f64>,
    pub candidate_mean_excess: Option<f64>,
    /// `1 - candidate / baseline` mean excess risk.
    pub excess_reduction: Option<f64>,
    pub privacy: PrivacyAttestation,
}

/// Two-sided sign-test p-value for `wins` against `losses` (ties excluded).
pub fn sign_test(wins: usize, losses: usize) -> f64 {
    let n = (wins + losses) as u64;
    if n == 0 {
        return 1.0;
    }
    let tail = Binomial::new(0.5, n)
        .expect("valid binomial")
        .cdf(wins.min(losses) as u64);
    (2.0 * tail).min(1.0)
}

fn arm(cfg: &ExperimentConfig, filter: &str) -> Result<ExperimentConfig> {
    let mut flat = cfg.flat.clone();
    flat.remove("optimizer.filter_a");
    flat.remove("optimizer.filter_b");
    flat.insert("optimizer.filter".into(), json!(filter));
    ExperimentConfig::from_flat(flat)
}

/// `compare`: paired runs of two filters over the same seeds.
///
/// The candidate arm may come from a second config; the comparison is refused
/// unless both arms share the privacy parameters and seeds.
pub fn cmd_compare(
    base: &ExperimentConfig,
    candidate_cfg: Option<&ExperimentConfig>,
    baseline: &str,
    candidate: &str,
    allow_nonunit_gain: bool,
    workers: usize,
) -> Result<ComparisonReport> {
    let a = arm(base, baseline)?;
    let b = arm(candidate_cfg.unwrap_or(base), candidate)?;
    if a.seeds.len() < MIN_COMPARE_SEEDS {
        return Err(HarnessError::Config(format!(
            "compare needs at least {MIN_COMPARE_SEEDS} seeds, got {}",
            a.seeds.len()
        )));
    }
    if a.seeds != b.seeds {
        return Err(HarnessError::Config("arms must use the same seeds".into()));
    }
    let (pa, pb) = (PrivacyAttestation::of(&a), PrivacyAttestation::of(&b));
    if pa != pb {
        return Err(HarnessError::Config(format!(
            "refusing to compare arms with different privacy parameters: {pa:?} vs {pb:?}"
        )));
    }
    check_filter(&a.optimizer.filter, allow_nonunit_gain)?;
    check_filter(&b.optimizer.filter, allow_nonunit_gain)?;

    let prob_a = a.build_problem()?;
    let prob_b = b.build_problem()?;
    let jobs: Vec<(usize, u64)> = a.seeds.iter().flat_map(|&s| [(0, s), (1, s)]).collect();
    let results: Vec<_> = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(which, seed)| {
                let (cfg, problem) = if which == 0 {
                    (&a, &prob_a)
                } else {
                    (&b, &prob_b)
                };
                run(problem.as_ref(), &cfg.optimizer, seed).map(|o| o.final_loss)
            })
            .collect()
    });
    let losses: Vec<f64> = results
        .into_iter()
        .map(|r| r.map_err(HarnessError::from))
        .collect::<Result<_>>()?;
    let baseline_losses: Vec<f64> = losses.iter().step_by(2).copied().collect();
    let candidate_losses: Vec<f64> = losses.iter().skip(1).step_by(2).copied().collect();
    let differences: Vec<f64> = candidate_losses
        .iter()
        .zip(&baseline_losses)
        .map(|(c, b)| c - b)
        .collect();
    let n = differences.len() as f64;
    let wins = differences.iter().filter(|&&d| d < 0.0).count();
    let ties = differences.iter().filter(|&&d| d == 0.0).count();
    let losses_count = differences.len() - wins - ties;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let excess = |p: &dyn doppler::problems::Problem, l: &[f64]| {
        p.optimum_value()
            .map(|f| mean(&l.iter().map(|x| x - f).collect::<Vec<_>>()))
    };
    let baseline_mean_excess = excess(prob_a.as_ref(), &baseline_losses);
    let candidate_mean_excess = excess(prob_b.as_ref(), &candidate_losses);
    let excess_reduction = match (baseline_mean_excess, candidate_mean_excess) {
        (Some(b), Some(c)) if b > 0.0 => Some(1.0 - c / b),
        _ => None,
    };

    let report = ComparisonReport {
        baseline: baseline.to_string(),
        candidate: candidate.to_string(),
        baseline_hash: a.hash(),
        candidate_hash: b.hash(),
        seeds: a.seeds.clone(),
        mean_difference: differences.iter().sum::<f64>() / n,
        candidate_wins: wins,
        ties,
        p_value: sign_test(wins, losses_count),
        baseline_losses,
        candidate_losses,
        differences,
        baseline_mean_excess,
        candidate_mean_excess,
        excess_reduction,
        privacy: pa,
    };

    ensure_dir(&base.out_dir)?;
    write_json(&base.out_dir.join("compare.json"), &report)?;
    write_rows(
        &base.out_dir.join("compare.csv"),
        &[
            "seed",
            "baseline_loss",
            "candidate_loss",
            "difference",
            "baseline_hash",
            "candidate_hash",
        ],
        (0..report.seeds.len()).map(|i| {
            vec![
                report.seeds[i].to_string(),
                report.baseline_losses[i].to_string(),
                report.candidate_losses[i].to_string(),
                report.differences[i].to_string(),
                report.baseline_hash.clone(),
                report.candidate_hash.clone(),
            ]
        }),
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom_two_sided(k: u64, n: u64) -> f64 {
        // direct sum of C(n, j) / 2^n for j <= k
        let mut c = 1.0f64;
        let mut total = 0.0;
        for j in 0..=k {
            if j > 0 {
                c *= (n - j + 1) as f64 / j as f64;
            }
            total += c;
        }
        (2.0 * total / 2f64.powi(n as i32)).min(1.0)
    }

    #[test]
    fn sign_test_matches_direct_sum() {
        assert_eq!(sign_test(0, 0), 1.0);
        assert!((sign_test(5, 5) - 1.0).abs() < 1e-12);
        for (w, l) in [(16, 4), (20, 0), (3, 9), (10, 8)] {
            let direct = binom_two_sided(w.min(l) as u64, (w + l) as u64);
            assert!((sign_test(w, l) - direct).abs() < 1e-12, "{w} {l}");
        }
        assert!((sign_test(20, 0) - 2.0 / 2f64.powi(20)).abs() < 1e-15);
    }
}
