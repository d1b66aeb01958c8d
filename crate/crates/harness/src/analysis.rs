use std::path::{Path, PathBuf};

use doppler::filter::{
    estimate_autocorrelation, frequency_response, optimal_fir, validate_spec, FilterSpec,
    DEFAULT_ESTIMATOR_FLOOR,
};
use doppler::optim::hash_value;
use doppler::spectral::{estimate, expected_noise_psd, filtered_noise_psd, SpectralEstimate};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{ensure_dir, write_json, write_rows};
use crate::run::TraceFile;

/// Number of frequencies in the filter-design response table.
pub const DESIGN_GRID_POINTS: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub config_hash: String,
    pub raw: SpectralEstimate,
    pub filtered: SpectralEstimate,
    /// White-noise PSD level `d sigma_dp^2 + sigma_SGD^2 / B`.
    pub noise_level: f64,
    /// `|H(nu)|^2` times the noise level on the raw grid.
    pub filtered_reference: Vec<f64>,
    pub outputs: Vec<PathBuf>,
}

fn spectral_err(e: doppler::spectral::SpectralError) -> HarnessError {
    HarnessError::Config(e.to_string())
}

/// `spectrum`: autocorrelation and PSD of the raw and filtered snapshots.
///
/// Refuses traces whose stored hash does not match their embedded optimizer
/// config, or the supplied experiment config.
pub fn cmd_spectrum(
    trace_path: &Path,
    max_lag: usize,
    config: Option<&ExperimentConfig>,
    out_dir: &Path,
) -> Result<SpectrumReport> {
    let file = TraceFile::read(trace_path)?;
    if !file.trace.hash_matches() {
        return Err(HarnessError::Config(format!(
            "{}: optimizer config hash does not match its contents",
            trace_path.display()
        )));
    }
    if let Some(cfg) = config {
        if cfg.hash() != file.config_hash {
            return Err(HarnessError::Config(format!(
                "trace was produced by config {} but {} was supplied",
                file.config_hash,
                cfg.hash()
            )));
        }
    }
    let trace = &file.trace;
    if trace.snapshots.is_empty() {
        return Err(HarnessError::Config(
            "trace has no gradient snapshots; rerun with output.snapshot_stride > 0".into(),
        ));
    }
    let raw_series: Vec<Vec<f64>> = trace.snapshots.iter().map(|s| s.raw.clone()).collect();
    let filtered_series: Vec<Vec<f64>> =
        trace.snapshots.iter().map(|s| s.filtered.clone()).collect();
    let raw = estimate(&raw_series, max_lag).map_err(spectral_err)?;
    let filtered = estimate(&filtered_series, max_lag).map_err(spectral_err)?;

    let cfg = &trace.config;
    let noise_level = expected_noise_psd(
        cfg.sigma_dp,
        trace.dim,
        trace.sgd_std.unwrap_or(0.0),
        cfg.batch_size,
    );
    let filtered_reference =
        filtered_noise_psd(&cfg.filter, noise_level, &raw.nu).map_err(spectral_err)?;

    ensure_dir(out_dir)?;
    let hash = file.config_hash.clone();
    let mut outputs = Vec::new();
    for (label, est, reference) in [
        ("raw", &raw, vec![noise_level; raw.nu.len()]),
        ("filtered", &filtered, filtered_reference.clone()),
    ] {
        outputs.push(write_rows(
            &out_dir.join(format!("spectrum_{label}_acf.csv")),
            &["tau", "phi", "config_hash"],
            est.phi
                .iter()
                .enumerate()
                .map(|(tau, phi)| vec![tau.to_string(), phi.to_string(), hash.clone()]),
        )?);
        outputs.push(write_rows(
            &out_dir.join(format!("spectrum_{label}_psd.csv")),
            &["nu", "power", "expected_noise", "config_hash"],
            est.nu
                .iter()
                .zip(&est.power)
                .zip(&reference)
                .map(|((nu, p), e)| {
                    vec![nu.to_string(), p.to_string(), e.to_string(), hash.clone()]
                }),
        )?);
    }
    Ok(SpectrumReport {
        config_hash: hash,
        raw,
        filtered,
        noise_level,
        filtered_reference,
        outputs,
    })
}

/// Where the correlation profile for a design comes from.
#[derive(Debug, Clone)]
pub enum DesignSource {
    /// Explicit coefficients `c_0, c_1, ...`.
    Profile(Vec<f64>),
    /// Estimated from the last `window` raw snapshots of a trace.
    Trace {
        path: PathBuf,
        max_lag: usize,
        window: Option<usize>,
    },
}

/// Reads a profile file: either a JSON array or an object with key `c`.
pub fn read_profile(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let array = value.get("c").unwrap_or(&value);
    serde_json::from_value(array.clone()).map_err(|e| {
        HarnessError::Config(format!(
            "{}: expected an array of numbers: {e}",
            path.display()
        ))
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ResponsePoint {
    pub nu: f64,
    pub magnitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignReport {
    pub source_hash: String,
    pub profile: Vec<f64>,
    pub filter: FilterSpec,
    pub unit_gain_error: f64,
    pub max_pole_magnitude: f64,
    pub response: Vec<ResponsePoint>,
    #[serde(skip)]
    pub outputs: Vec<PathBuf>,
}

/// `filter-design`: optimal FIR for a correlation profile, with its
/// validation and frequency response on `DESIGN_GRID_POINTS` frequencies in
/// `[0, 1/2]`.
pub fn cmd_filter_design(source: &DesignSource, out_dir: &Path) -> Result<DesignReport> {
    let profile = match source {
        DesignSource::Profile(c) => c.clone(),
        DesignSource::Trace {
            path,
            max_lag,
            window,
        } => {
            let file = TraceFile::read(path)?;
            let snaps = &file.trace.snapshots;
            if snaps.is_empty() {
                return Err(HarnessError::Config(
                    "trace has no gradient snapshots".into(),
                ));
            }
            let take = window.unwrap_or(snaps.len()).min(snaps.len());
            let series: Vec<Vec<f64>> = snaps[snaps.len() - take..]
                .iter()
                .map(|s| s.raw.clone())
                .collect();
            estimate_autocorrelation(
                &series,
                file.trace.config.sigma_dp,
                *max_lag,
                DEFAULT_ESTIMATOR_FLOOR,
            )
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .c
        }
    };
    if profile.is_empty() || profile.iter().any(|c| !c.is_finite()) {
        return Err(HarnessError::Config(
            "profile must be a nonempty list of finite numbers".into(),
        ));
    }
    let filter = optimal_fir(&profile).map_err(|e| HarnessError::Numerical(e.to_string()))?;
    let report = validate_spec(&filter).map_err(|e| HarnessError::Numerical(e.to_string()))?;
    let response = (0..DESIGN_GRID_POINTS)
        .map(|k| {
            let nu = 0.5 * k as f64 / (DESIGN_GRID_POINTS - 1) as f64;
            let h = frequency_response(&filter, nu)
                .map_err(|e| HarnessError::Numerical(e.to_string()))?;
            Ok(ResponsePoint {
                nu,
                magnitude: h.norm(),
                phase: h.arg(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let source_hash = format!("{:016x}", hash_value(&profile));

    ensure_dir(out_dir)?;
    let mut design = DesignReport {
        source_hash,
        profile,
        filter,
        unit_gain_error: report.unit_gain_error,
        max_pole_magnitude: report.max_pole_magnitude(),
        response,
        outputs: Vec::new(),
    };
    let json_path = out_dir.join("filter.json");
    write_json(&json_path, &design)?;
    let csv_path = write_rows(
        &out_dir.join("response.csv"),
        &["nu", "magnitude", "phase", "config_hash"],
        design.response.iter().map(|p| {
            vec![
                p.nu.to_string(),
                p.magnitude.to_string(),
                p.phase.to_string(),
                design.source_hash.clone(),
            ]
        }),
    )?;
    design.outputs = vec![json_path, csv_path];
    Ok(design)
}
