//! Flat dotted-key JSON experiment configs.
//!
//! Nested objects are accepted and flattened, so `{"clip": {"threshold": 1}}`
//! and `{"clip.threshold": 1}` are the same config. Unknown keys are errors.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use doppler::dp::{
    ClipConfig, ClipMode, Granularity, NoiseCalibration, DEFAULT_ACCOUNTANT_MULTIPLIER,
};
use doppler::filter::{preset, validate_spec, FilterSpec, PRESET_NAMES};
use doppler::optim::{hash_value, OptimizerConfig, Schedule, Variant};
use doppler::problems::{load_csv, make_logistic, make_quadratic, CsvOptions, Problem};
use serde::Serialize;
use serde_json::Value;

use crate::error::{HarnessError, Result};

/// Tolerance for the unit-gain check on configured filters.
pub const GAIN_TOLERANCE: f64 = 1e-9;

/// Keys excluded from the config hash.
const UNHASHED: [&str; 1] = ["output.dir"];

pub type FlatConfig = BTreeMap<String, Value>;

/// Flattens nested objects into dotted keys.
pub fn flatten(value: &Value) -> Result<FlatConfig> {
    let Value::Object(map) = value else {
        return Err(HarnessError::Config("config must be a JSON object".into()));
    };
    let mut out = FlatConfig::new();
    fn walk(
        prefix: &str,
        map: &serde_json::Map<String, Value>,
        out: &mut FlatConfig,
    ) -> Result<()> {
        for (k, v) in map {
            let key = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match v {
                Value::Object(inner) => walk(&key, inner, out)?,
                other => {
                    if out.insert(key.clone(), other.clone()).is_some() {
                        return Err(HarnessError::Config(format!("duplicate key {key}")));
                    }
                }
            }
        }
        Ok(())
    }
    walk("", map, &mut out)?;
    Ok(out)
}

pub fn read_flat(path: &Path) -> Result<FlatConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    flatten(&value)
}

/// FNV-1a of the canonical JSON of the config, ignoring the output directory.
pub fn flat_hash(flat: &FlatConfig) -> String {
    let hashed: FlatConfig = flat
        .iter()
        .filter(|(k, _)| !UNHASHED.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    format!("{:016x}", hash_value(&hashed))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Quadratic {
        d: usize,
        l: f64,
        mu: f64,
        sigma_sgd: f64,
        n: usize,
        seed: u64,
        /// Constant initial coordinate, zero when absent.
        x0: Option<f64>,
    },
    Logistic {
        d: usize,
        k: usize,
        n: usize,
        seed: u64,
        separation: f64,
    },
    Csv {
        path: PathBuf,
        label: String,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Box<dyn Problem>> {
        let err = |e: doppler::problems::ProblemError| HarnessError::Config(e.to_string());
        Ok(match self {
            ProblemSpec::Quadratic {
                d,
                l,
                mu,
                sigma_sgd,
                n,
                seed,
                x0,
            } => {
                let q = make_quadratic(*d, *l, *mu, *sigma_sgd, *n, *seed).map_err(err)?;
                match x0 {
                    Some(v) => Box::new(q.with_initial_point(vec![*v; *d])),
                    None => Box::new(q),
                }
            }
            ProblemSpec::Logistic {
                d,
                k,
                n,
                seed,
                separation,
            } => Box::new(make_logistic(*d, *k, *n, *seed, *separation).map_err(err)?),
            ProblemSpec::Csv { path, label } => {
                Box::new(load_csv(path, label, &CsvOptions::default()).map_err(err)?)
            }
        })
    }
}

/// Where `sigma_dp` came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivacySpec {
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub v: f64,
    pub sigma_dp: f64,
    /// True when `privacy.sigma_dp` was given directly.
    pub explicit_sigma: bool,
    pub envelope_warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SweepGrid {
    pub eta: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub steps: Vec<usize>,
    pub filter: Vec<String>,
}

/// A parsed experiment. `flat` is the source of truth; everything else is
/// derived from it.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub flat: FlatConfig,
    pub problem: ProblemSpec,
    pub optimizer: OptimizerConfig,
    pub privacy: PrivacySpec,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub tail_window: usize,
    pub grid: SweepGrid,
    pub num_samples: usize,
    pub dim: usize,
}

struct Reader {
    flat: FlatConfig,
    used: BTreeSet<String>,
}

impl Reader {
    fn get(&mut self, key: &str) -> Option<&Value> {
        let v = self.flat.get(key);
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn f64_opt(&mut self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s))
                if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity") =>
            {
                Ok(Some(f64::INFINITY))
            }
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| HarnessError::Config(format!("{key} must be a number, got {v}"))),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    fn f64_req(&mut self, key: &str) -> Result<f64> {
        self.f64_opt(key)?.ok_or_else(|| missing(key))
    }

    fn u64_opt(&mut self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| {
                HarnessError::Config(format!("{key} must be a nonnegative integer, got {v}"))
            }),
        }
    }

    fn usize_opt(&mut self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64_opt(key)?.map(|v| v as usize))
    }

    fn usize_req(&mut self, key: &str) -> Result<usize> {
        self.usize_opt(key)?.ok_or_else(|| missing(key))
    }

    fn str_opt(&mut self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(HarnessError::Config(format!(
                "{key} must be a string, got {v}"
            ))),
        }
    }

    fn array(&mut self, key: &str) -> Result<Vec<Value>> {
        match self.get(key) {
            None | Some(Value::Null) => Ok(Vec::new()),
            Some(Value::Array(items)) => Ok(items.clone()),
            Some(v) => Err(HarnessError::Config(format!(
                "{key} must be an array, got {v}"
            ))),
        }
    }

    fn f64_array(&mut self, key: &str) -> Result<Vec<f64>> {
        self.array(key)?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| HarnessError::Config(format!("{key}: {v} is not a number")))
            })
            .collect()
    }

    fn u64_array(&mut self, key: &str) -> Result<Vec<u64>> {
        self.array(key)?
            .iter()
            .map(|v| {
                v.as_u64().ok_or_else(|| {
                    HarnessError::Config(format!("{key}: {v} is not a nonnegative integer"))
                })
            })
            .collect()
    }
}

fn missing(key: &str) -> HarnessError {
    HarnessError::Config(format!("missing required key {key}"))
}

/// Resolves a preset name, or explicit coefficients when `name` is absent.
pub fn resolve_filter(name: &str) -> Result<FilterSpec> {
    preset(name).ok_or_else(|| {
        HarnessError::Config(format!(
            "unknown filter preset {name:?}; available presets: {}",
            PRESET_NAMES.join(", ")
        ))
    })
}

/// Rejects unstable filters, and non-unit-gain filters unless allowed.
pub fn check_filter(spec: &FilterSpec, allow_nonunit_gain: bool) -> Result<()> {
    let report = validate_spec(spec).map_err(|e| HarnessError::Config(e.to_string()))?;
    if !report.stable {
        return Err(HarnessError::Config(format!(
            "filter is unstable (max pole magnitude {})",
            report.max_pole_magnitude()
        )));
    }
    if !report.is_unit_gain(GAIN_TOLERANCE) && !allow_nonunit_gain {
        return Err(HarnessError::Config(format!(
            "filter gain error {} exceeds {GAIN_TOLERANCE}; pass --allow-nonunit-gain to run it anyway",
            report.unit_gain_error
        )));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_flat(read_flat(path)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Self::from_flat(flatten(&value)?)
    }

    /// Copy with `key` replaced, re-parsed.
    pub fn with_override(&self, key: &str, value: Value) -> Result<Self> {
        let mut flat = self.flat.clone();
        flat.insert(key.to_string(), value);
        Self::from_flat(flat)
    }

    pub fn hash(&self) -> String {
        flat_hash(&self.flat)
    }

    pub fn build_problem(&self) -> Result<Box<dyn Problem>> {
        self.problem.build()
    }

    pub fn from_flat(flat: FlatConfig) -> Result<Self> {
        let mut r = Reader {
            flat: flat.clone(),
            used: BTreeSet::new(),
        };

        let kind = r
            .str_opt("problem.kind")?
            .ok_or_else(|| missing("problem.kind"))?;
        let problem = match kind.as_str() {
            "quadratic" => ProblemSpec::Quadratic {
                d: r.usize_req("problem.d")?,
                l: r.f64_req("problem.L")?,
                mu: r.f64_req("problem.mu")?,
                sigma_sgd: r.f64_or("problem.sigma_sgd", 0.0)?,
                n: r.usize_req("problem.n")?,
                seed: r.u64_opt("problem.seed")?.unwrap_or(0),
                x0: r.f64_opt("problem.x0")?,
            },
            "logistic" => ProblemSpec::Logistic {
                d: r.usize_req("problem.d")?,
                k: r.usize_req("problem.k")?,
                n: r.usize_req("problem.n")?,
                seed: r.u64_opt("problem.seed")?.unwrap_or(0),
                separation: r.f64_or("problem.separation", 1.0)?,
            },
            "csv" => ProblemSpec::Csv {
                path: PathBuf::from(
                    r.str_opt("problem.path")?
                        .ok_or_else(|| missing("problem.path"))?,
                ),
                label: r
                    .str_opt("problem.label")?
                    .ok_or_else(|| missing("problem.label"))?,
            },
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown problem.kind {other:?}; expected quadratic, logistic or csv"
                )))
            }
        };
        let built = problem.build()?;
        let num_samples = built.num_samples();
        let dim = built.dim();

        let variant = match r.str_opt("optimizer.variant")?.as_deref() {
            None | Some("sgd") => Variant::Sgd,
            Some("adam") => Variant::Adam,
            Some("galore") => Variant::Galore,
            Some(other) => {
                return Err(HarnessError::Config(format!(
                    "unknown optimizer.variant {other:?}; expected sgd, adam or galore"
                )))
            }
        };
        let coeff_a = r.f64_array("optimizer.filter_a")?;
        let coeff_b = r.f64_array("optimizer.filter_b")?;
        let filter = match r.str_opt("optimizer.filter")? {
            Some(name) => {
                if !coeff_a.is_empty() || !coeff_b.is_empty() {
                    return Err(HarnessError::Config(
                        "give either optimizer.filter or optimizer.filter_a/_b, not both".into(),
                    ));
                }
                resolve_filter(&name)?
            }
            None if !coeff_b.is_empty() => FilterSpec::new(coeff_a, coeff_b)
                .map_err(|e| HarnessError::Config(e.to_string()))?,
            None => FilterSpec::identity(),
        };

        let eta = r.f64_req("optimizer.eta")?;
        let batch_size = r.usize_req("optimizer.batch_size")?;
        if batch_size == 0 {
            return Err(HarnessError::Config(
                "optimizer.batch_size must be at least 1".into(),
            ));
        }
        let steps = match (
            r.usize_opt("optimizer.steps")?,
            r.usize_opt("optimizer.epochs")?,
        ) {
            (Some(_), Some(_)) => {
                return Err(HarnessError::Config(
                    "give either optimizer.steps or optimizer.epochs, not both".into(),
                ))
            }
            (Some(t), None) => t,
            (None, Some(e)) => e * num_samples.div_ceil(batch_size),
            (None, None) => return Err(missing("optimizer.steps")),
        };

        let mode = match r.str_opt("clip.mode")?.as_deref() {
            None | Some("clip") => ClipMode::Clip,
            Some("normalize") => ClipMode::Normalize,
            Some(other) => {
                return Err(HarnessError::Config(format!("unknown clip.mode {other:?}")))
            }
        };
        let granularity = match r.str_opt("clip.granularity")?.as_deref() {
            None | Some("flat") => Granularity::Flat,
            Some("per_block") => Granularity::PerBlock,
            Some(other) => {
                return Err(HarnessError::Config(format!(
                    "unknown clip.granularity {other:?}"
                )))
            }
        };
        let clip = ClipConfig::new(r.f64_req("clip.threshold")?, mode, granularity)
            .map_err(|e| HarnessError::Config(e.to_string()))?;

        let epsilon = r.f64_opt("privacy.epsilon")?;
        let delta = r.f64_opt("privacy.delta")?;
        let v = r.f64_or("privacy.v", DEFAULT_ACCOUNTANT_MULTIPLIER)?;
        let u = r.f64_opt("privacy.u")?;
        let privacy = match (r.f64_opt("privacy.sigma_dp")?, epsilon) {
            (Some(sigma), _) => PrivacySpec {
                epsilon,
                delta,
                v,
                sigma_dp: sigma,
                explicit_sigma: true,
                envelope_warning: None,
            },
            (None, Some(eps)) => {
                let cal = NoiseCalibration::from_budget(
                    eps,
                    delta,
                    num_samples,
                    batch_size,
                    steps,
                    clip.threshold,
                    v,
                )
                .map_err(|e| HarnessError::Config(format!("privacy calibration: {e}")))?;
                PrivacySpec {
                    epsilon: Some(eps),
                    delta: Some(cal.delta),
                    v,
                    sigma_dp: cal.sigma_dp,
                    explicit_sigma: false,
                    envelope_warning: u.and_then(|u| cal.envelope_warning(u)),
                }
            }
            (None, None) => {
                return Err(HarnessError::Config(
                    "give privacy.epsilon (calibrated noise) or privacy.sigma_dp".into(),
                ))
            }
        };

        let schedule = match r.str_opt("optimizer.schedule")?.as_deref() {
            None | Some("constant") => Schedule::Constant,
            Some("cosine_warmup") => Schedule::CosineWarmup,
            Some(other) => {
                return Err(HarnessError::Config(format!(
                    "unknown optimizer.schedule {other:?}"
                )))
            }
        };
        let defaults = OptimizerConfig::sgd(FilterSpec::identity(), 1.0, clip, 0.0, 1, 0);
        let optimizer = OptimizerConfig {
            variant,
            filter,
            eta,
            clip,
            sigma_dp: privacy.sigma_dp,
            batch_size,
            steps,
            adam_beta: r.f64_or("optimizer.adam_beta", defaults.adam_beta)?,
            adam_eps: r.f64_or("optimizer.adam_eps", defaults.adam_eps)?,
            galore_rank: r
                .usize_opt("optimizer.galore_rank")?
                .unwrap_or(defaults.galore_rank),
            galore_period: r
                .usize_opt("optimizer.galore_period")?
                .unwrap_or(defaults.galore_period),
            schedule,
            snapshot_stride: r.usize_opt("output.snapshot_stride")?.unwrap_or(0),
        };
        optimizer
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;

        let seeds = r.u64_array("seeds")?;
        if seeds.is_empty() {
            return Err(HarnessError::Config(
                "seeds must be a nonempty array".into(),
            ));
        }
        let out_dir = PathBuf::from(r.str_opt("output.dir")?.unwrap_or_else(|| "out".into()));
        let tail_window = r
            .usize_opt("output.tail_window")?
            .unwrap_or((steps / 10).max(1));

        let grid = SweepGrid {
            eta: r.f64_array("sweep.eta")?,
            batch_size: r
                .u64_array("sweep.batch_size")?
                .into_iter()
                .map(|v| v as usize)
                .collect(),
            steps: r
                .u64_array("sweep.steps")?
                .into_iter()
                .map(|v| v as usize)
                .collect(),
            filter: r
                .array("sweep.filter")?
                .iter()
                .map(|v| {
                    v.as_str().map(str::to_string).ok_or_else(|| {
                        HarnessError::Config(format!("sweep.filter: {v} is not a name"))
                    })
                })
                .collect::<Result<_>>()?,
        };
        for name in &grid.filter {
            resolve_filter(name)?;
        }

        let unknown: Vec<&String> = flat.keys().filter(|k| !r.used.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(HarnessError::Config(format!(
                "unknown config keys: {unknown:?}"
            )));
        }

        Ok(Self {
            flat,
            problem,
            optimizer,
            privacy,
            seeds,
            out_dir,
            tail_window,
            grid,
            num_samples,
            dim,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({
            "problem.kind": "quadratic",
            "problem.d": 10,
            "problem.L": 10.0,
            "problem.mu": 0.1,
            "problem.sigma_sgd": 1.0,
            "problem.n": 500,
            "optimizer.filter": "momentum",
            "optimizer.eta": 0.1,
            "optimizer.batch_size": 50,
            "optimizer.steps": 100,
            "clip.threshold": 1.0,
            "privacy.epsilon": 8.0,
            "seeds": [1, 2]
        })
    }

    #[test]
    fn parses_and_calibrates() {
        let cfg = ExperimentConfig::from_json(&base().to_string()).unwrap();
        assert_eq!(cfg.optimizer.filter.name(), Some("momentum"));
        assert_eq!(cfg.seeds, vec![1, 2]);
        let delta = 500f64.powf(-1.1);
        assert_eq!(cfg.privacy.delta, Some(delta));
        let expected = 2f64.sqrt() * (100.0 * (1.0 / delta).ln()).sqrt() / (500.0 * 8.0);
        assert!((cfg.optimizer.sigma_dp - expected).abs() <= 1e-15);
        assert_eq!(cfg.tail_window, 10);
    }

    #[test]
    fn nested_and_flat_configs_hash_alike() {
        let flat = ExperimentConfig::from_json(&base().to_string()).unwrap();
        let mut nested = base();
        let obj = nested.as_object_mut().unwrap();
        obj.remove("clip.threshold");
        obj.insert("clip".into(), json!({"threshold": 1.0}));
        let nested = ExperimentConfig::from_json(&nested.to_string()).unwrap();
        assert_eq!(flat.hash(), nested.hash());
        let moved = flat
            .with_override("output.dir", json!("elsewhere"))
            .unwrap();
        assert_eq!(moved.hash(), flat.hash());
        let changed = flat.with_override("optimizer.eta", json!(0.2)).unwrap();
        assert_ne!(changed.hash(), flat.hash());
    }

    #[test]
    fn epochs_convert_to_steps() {
        let mut v = base();
        let obj = v.as_object_mut().unwrap();
        obj.remove("optimizer.steps");
        obj.insert("optimizer.epochs".into(), json!(3));
        obj.insert("optimizer.batch_size".into(), json!(60));
        let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
        assert_eq!(cfg.optimizer.steps, 3 * 9);
    }

    #[test]
    fn errors_name_the_problem() {
        let cfg = ExperimentConfig::from_json(&base().to_string()).unwrap();
        let err = cfg
            .with_override("optimizer.filter", json!("nope"))
            .unwrap_err();
        assert!(err.to_string().contains("first_v1"));
        assert_eq!(err.exit_code(), 2);
        let err = cfg.with_override("optimizer.typo", json!(1)).unwrap_err();
        assert!(err.to_string().contains("optimizer.typo"));
        assert!(cfg.with_override("seeds", json!([])).is_err());
    }

    #[test]
    fn nonunit_gain_needs_flag() {
        let spec = FilterSpec::new(vec![-0.9], vec![0.3]).unwrap();
        assert!(check_filter(&spec, false).is_err());
        assert!(check_filter(&spec, true).is_ok());
        let unstable = FilterSpec::new(vec![-1.1], vec![-0.1]).unwrap();
        assert!(check_filter(&unstable, true).is_err());
    }
}
