use std::hash::Hasher;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{OptimError, OptimizerConfig};

/// One row of a run trace, recorded at the iterate `x_t` before the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub loss: f64,
    pub true_grad_norm: f64,
    pub priv_grad_norm: f64,
    /// Filter bias factor `c_{a,t}`.
    pub bias: f64,
    pub lr: f64,
}

/// Privatized gradient and filter output at one step.
///
/// For GaLore the filtered direction is back-projected to parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: usize,
    pub raw: Vec<f64>,
    pub filtered: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorEvent {
    pub t: usize,
    pub padded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub seed: u64,
    /// Hex FNV-1a hash of the canonical JSON of `config`.
    pub config_hash: String,
    pub config: OptimizerConfig,
    pub dim: usize,
    pub sgd_std: Option<f64>,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub projector_events: Vec<ProjectorEvent>,
}

impl RunTrace {
    pub fn new(config: &OptimizerConfig, seed: u64, dim: usize, sgd_std: Option<f64>) -> Self {
        Self {
            seed,
            config_hash: config_hash_hex(config),
            config: config.clone(),
            dim,
            sgd_std,
            records: Vec::new(),
            snapshots: Vec::new(),
            projector_events: Vec::new(),
        }
    }

    /// True when the stored hash matches the embedded config.
    pub fn hash_matches(&self) -> bool {
        self.config_hash == config_hash_hex(&self.config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, OptimError> {
        serde_json::from_str(text).map_err(|e| OptimError::Trace(e.to_string()))
    }

    /// One CSV row per step, with the seed and config hash on every row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), OptimError> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| OptimError::Trace(e.to_string());
        w.write_record([
            "t",
            "loss",
            "true_grad_norm",
            "priv_grad_norm",
            "bias",
            "lr",
            "seed",
            "config_hash",
        ])
        .map_err(err)?;
        for r in &self.records {
            w.write_record([
                r.t.to_string(),
                r.loss.to_string(),
                r.true_grad_norm.to_string(),
                r.priv_grad_norm.to_string(),
                r.bias.to_string(),
                r.lr.to_string(),
                self.seed.to_string(),
                self.config_hash.clone(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| OptimError::Trace(e.to_string()))
    }
}

/// JSON text with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => {
            let body: Vec<String> = items.iter().map(canonical_json).collect();
            format!("[{}]", body.join(","))
        }
        other => other.to_string(),
    }
}

/// 64-bit FNV-1a of the canonical JSON of any serializable value.
pub fn hash_value<T: Serialize>(value: &T) -> u64 {
    let json = serde_json::to_value(value).expect("value serializes");
    let mut hasher = fnv::FnvHasher::default();
    hasher.write(canonical_json(&json).as_bytes());
    hasher.finish()
}

pub fn config_hash(config: &OptimizerConfig) -> u64 {
    hash_value(config)
}

pub fn config_hash_hex(config: &OptimizerConfig) -> String {
    format!("{:016x}", config_hash(config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::ClipConfig;
    use crate::filter::FilterSpec;

    fn config() -> OptimizerConfig {
        OptimizerConfig::sgd(
            FilterSpec::identity(),
            0.1,
            ClipConfig::flat(1.0),
            0.5,
            8,
            20,
        )
    }

    #[test]
    fn fnv1a_reference_values() {
        // Offset basis and the published test vector for "a".
        let empty = fnv::FnvHasher::default();
        assert_eq!(empty.finish(), 0xcbf29ce484222325);
        let mut a = fnv::FnvHasher::default();
        a.write(b"a");
        assert_eq!(a.finish(), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn canonical_json_ignores_key_order() {
        let x: Value = serde_json::from_str(r#"{"b": 1, "a": {"d": [1, 2], "c": null}}"#).unwrap();
        let y: Value = serde_json::from_str(r#"{"a": {"c": null, "d": [1, 2]}, "b": 1}"#).unwrap();
        assert_eq!(canonical_json(&x), canonical_json(&y));
        assert_eq!(canonical_json(&x), r#"{"a":{"c":null,"d":[1,2]},"b":1}"#);
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let cfg = config();
        let text = serde_json::to_string(&cfg).unwrap();
        let mut value: Value = serde_json::from_str(&text).unwrap();
        // rebuild the object in reverse key order
        let map = value.as_object_mut().unwrap();
        let mut pairs: Vec<(String, Value)> = map.clone().into_iter().collect();
        pairs.reverse();
        let reversed = format!(
            "{{{}}}",
            pairs
                .iter()
                .map(|(k, v)| format!("{:?}:{}", k, v))
                .collect::<Vec<_>>()
                .join(",")
        );
        let back: OptimizerConfig = serde_json::from_str(&reversed).unwrap();
        assert_eq!(config_hash(&back), config_hash(&cfg));
        let mut other = cfg.clone();
        other.eta = 0.2;
        assert_ne!(config_hash(&other), config_hash(&cfg));
    }

    #[test]
    fn trace_round_trips() {
        let mut trace = RunTrace::new(&config(), 7, 3, Some(1.0));
        trace.records.push(StepRecord {
            t: 0,
            loss: 1.5,
            true_grad_norm: 2.0,
            priv_grad_norm: 2.5,
            bias: 1.0,
            lr: 0.1,
        });
        let back = RunTrace::from_json(&trace.to_json()).unwrap();
        assert_eq!(back, trace);
        assert!(back.hash_matches());
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().ends_with(&trace.config_hash));
    }
}
