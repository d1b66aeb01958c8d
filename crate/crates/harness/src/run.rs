use std::path::{Path, PathBuf};

use doppler::optim::{config_hash_hex, run, RunOutput, RunTrace};
use doppler::problems::Problem;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{check_filter, ExperimentConfig, FlatConfig, PrivacySpec, ProblemSpec};
use crate::error::{HarnessError, Result};
use crate::output::{ensure_dir, pool, write_json, write_rows};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A trace together with the hash of the experiment config that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceFile {
    pub config_hash: String,
    pub trace: RunTrace,
}

impl TraceFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: not a trace file: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub artifact_version: String,
    pub config_hash: String,
    pub optimizer_config_hash: String,
    pub config: FlatConfig,
    pub problem: ProblemSpec,
    pub privacy: PrivacySpec,
    pub dim: usize,
    pub num_samples: usize,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub final_losses: Vec<f64>,
    pub excess_risks: Option<Vec<f64>>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub metadata: RunMetadata,
    pub outputs: Vec<PathBuf>,
    pub runs: Vec<RunOutput>,
}

/// Runs every seed of `cfg` with `workers` threads, in seed order.
pub fn run_seeds(
    problem: &dyn Problem,
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<Vec<RunOutput>> {
    let results: Vec<_> = pool(workers)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run(problem, &cfg.optimizer, seed))
            .collect()
    });
    results
        .into_iter()
        .zip(&cfg.seeds)
        .map(|(r, seed)| {
            r.map_err(|e| match HarnessError::from(e) {
                HarnessError::Numerical(m) => HarnessError::Numerical(format!("seed {seed}: {m}")),
                other => other,
            })
        })
        .collect()
}

/// `run`: one CSV trace per seed plus `metadata.json`; JSON traces with
/// snapshots when a snapshot stride is configured.
pub fn cmd_run(
    cfg: &ExperimentConfig,
    allow_nonunit_gain: bool,
    workers: usize,
) -> Result<RunSummary> {
    check_filter(&cfg.optimizer.filter, allow_nonunit_gain)?;
    let problem = cfg.build_problem()?;
    let runs = run_seeds(problem.as_ref(), cfg, workers)?;
    ensure_dir(&cfg.out_dir)?;
    let hash = cfg.hash();
    let mut outputs = Vec::new();
    for out in &runs {
        let seed = out.trace.seed;
        let csv_path = cfg.out_dir.join(format!("trace_seed{seed}.csv"));
        let file = std::fs::File::create(&csv_path).map_err(|e| HarnessError::io(&csv_path, e))?;
        // every row carries the experiment hash, replacing the optimizer hash
        let mut trace = out.trace.clone();
        trace.config_hash = hash.clone();
        trace
            .write_csv(file)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        outputs.push(csv_path);
        if cfg.optimizer.snapshot_stride > 0 {
            let json_path = cfg.out_dir.join(format!("trace_seed{seed}.json"));
            write_json(
                &json_path,
                &TraceFile {
                    config_hash: hash.clone(),
                    trace: out.trace.clone(),
                },
            )?;
            outputs.push(json_path);
        }
    }
    let final_losses: Vec<f64> = runs.iter().map(|r| r.final_loss).collect();
    let metadata = RunMetadata {
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_hash: hash,
        optimizer_config_hash: config_hash_hex(&cfg.optimizer),
        config: cfg.flat.clone(),
        problem: cfg.problem.clone(),
        privacy: cfg.privacy.clone(),
        dim: cfg.dim,
        num_samples: cfg.num_samples,
        steps: cfg.optimizer.steps,
        seeds: cfg.seeds.clone(),
        excess_risks: problem
            .optimum_value()
            .map(|f| final_losses.iter().map(|l| l - f).collect()),
        final_losses,
    };
    let meta_path = cfg.out_dir.join("metadata.json");
    write_json(&meta_path, &metadata)?;
    outputs.push(meta_path);
    Ok(RunSummary {
        metadata,
        outputs,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub filter: String,
    pub config_hash: String,
    /// Mean over seeds; NaN for failed cells.
    pub final_loss: f64,
    /// Mean true-gradient norm over the tail window, averaged over seeds.
    pub tail_grad_norm: f64,
    pub status: String,
    pub best: bool,
}

/// Index of the lowest final loss among successful rows; ties go to the
/// smaller stepsize.
pub fn select_best(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| r.status == "ok" && r.final_loss.is_finite())
        .min_by(|(_, a), (_, b)| {
            a.final_loss
                .total_cmp(&b.final_loss)
                .then(a.eta.total_cmp(&b.eta))
        })
        .map(|(i, _)| i)
}

fn cell_overrides(cfg: &ExperimentConfig) -> Vec<Vec<(&'static str, Value)>> {
    let g = &cfg.grid;
    let axis = |key: &'static str, values: Vec<Value>| -> Vec<Option<(&'static str, Value)>> {
        if values.is_empty() {
            vec![None]
        } else {
            values.into_iter().map(|v| Some((key, v))).collect()
        }
    };
    let etas = axis("optimizer.eta", g.eta.iter().map(|&v| json!(v)).collect());
    let batches = axis(
        "optimizer.batch_size",
        g.batch_size.iter().map(|&v| json!(v)).collect(),
    );
    let steps = axis(
        "optimizer.steps",
        g.steps.iter().map(|&v| json!(v)).collect(),
    );
    let filters = axis(
        "optimizer.filter",
        g.filter.iter().map(|v| json!(v)).collect(),
    );
    let mut cells = Vec::new();
    for e in &etas {
        for b in &batches {
            for s in &steps {
                for f in &filters {
                    cells.push([e, b, s, f].into_iter().flatten().cloned().collect());
                }
            }
        }
    }
    cells
}

fn apply(cfg: &ExperimentConfig, overrides: &[(&'static str, Value)]) -> Result<ExperimentConfig> {
    let mut flat = cfg.flat.clone();
    for key in [
        "sweep.eta",
        "sweep.batch_size",
        "sweep.steps",
        "sweep.filter",
    ] {
        flat.remove(key);
    }
    for (key, value) in overrides {
        match *key {
            "optimizer.steps" => {
                flat.remove("optimizer.epochs");
            }
            "optimizer.filter" => {
                flat.remove("optimizer.filter_a");
                flat.remove("optimizer.filter_b");
            }
            _ => {}
        }
        flat.insert(key.to_string(), value.clone());
    }
    ExperimentConfig::from_flat(flat)
}

fn run_cell(cfg: &ExperimentConfig, allow_nonunit_gain: bool) -> Result<(f64, f64)> {
    check_filter(&cfg.optimizer.filter, allow_nonunit_gain)?;
    let problem = cfg.build_problem()?;
    let mut loss = 0.0;
    let mut tail = 0.0;
    for &seed in &cfg.seeds {
        let out = run(problem.as_ref(), &cfg.optimizer, seed)?;
        loss += out.final_loss;
        let records = &out.trace.records;
        let window = cfg.tail_window.min(records.len()).max(1);
        let start = records.len().saturating_sub(window);
        let slice = &records[start..];
        tail += if slice.is_empty() {
            0.0
        } else {
            slice.iter().map(|r| r.true_grad_norm).sum::<f64>() / slice.len() as f64
        };
    }
    let n = cfg.seeds.len() as f64;
    Ok((loss / n, tail / n))
}

/// `sweep`: cross product of the `sweep.*` axes, one row per cell in
/// `sweep.csv`. Failed cells are recorded and the sweep continues.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    allow_nonunit_gain: bool,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    let cells = cell_overrides(cfg);
    let mut rows: Vec<SweepRow> = pool(workers)?.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(cell, overrides)| {
                let value_of = |key: &str| {
                    overrides
                        .iter()
                        .find(|(k, _)| *k == key)
                        .map(|(_, v)| v.clone())
                };
                let mut row = SweepRow {
                    cell,
                    eta: value_of("optimizer.eta")
                        .and_then(|v| v.as_f64())
                        .unwrap_or(cfg.optimizer.eta),
                    batch_size: value_of("optimizer.batch_size")
                        .and_then(|v| v.as_u64())
                        .map_or(cfg.optimizer.batch_size, |v| v as usize),
                    steps: value_of("optimizer.steps")
                        .and_then(|v| v.as_u64())
                        .map_or(cfg.optimizer.steps, |v| v as usize),
                    filter: value_of("optimizer.filter")
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_else(|| {
                            cfg.optimizer.filter.name().unwrap_or("custom").to_string()
                        }),
                    config_hash: String::new(),
                    final_loss: f64::NAN,
                    tail_grad_norm: f64::NAN,
                    status: "ok".into(),
                    best: false,
                };
                match apply(cfg, overrides) {
                    Ok(cell_cfg) => {
                        row.config_hash = cell_cfg.hash();
                        match run_cell(&cell_cfg, allow_nonunit_gain) {
                            Ok((loss, tail)) => {
                                row.final_loss = loss;
                                row.tail_grad_norm = tail;
                            }
                            Err(e) => row.status = format!("failed: {e}"),
                        }
                    }
                    Err(e) => row.status = format!("failed: {e}"),
                }
                row
            })
            .collect()
    });
    if let Some(best) = select_best(&rows) {
        rows[best].best = true;
    }
    ensure_dir(&cfg.out_dir)?;
    let hash = cfg.hash();
    write_rows(
        &cfg.out_dir.join("sweep.csv"),
        &[
            "cell",
            "eta",
            "batch_size",
            "steps",
            "filter",
            "final_loss",
            "tail_grad_norm",
            "best",
            "status",
            "cell_hash",
            "config_hash",
        ],
        rows.iter().map(|r| {
            vec![
                r.cell.to_string(),
                r.eta.to_string(),
                r.batch_size.to_string(),
                r.steps.to_string(),
                r.filter.clone(),
                r.final_loss.to_string(),
                r.tail_grad_norm.to_string(),
                r.best.to_string(),
                // no quoting: keep the message free of separators
                r.status.replace([',', '\n', '"'], ";"),
                r.config_hash.clone(),
                hash.clone(),
            ]
        }),
    )?;
    Ok(rows)
}
