//! Named coefficient sets used in the experiments.

use super::FilterSpec;

pub const PRESET_NAMES: [&str; 11] = [
    "sgd", "momentum", "first_v1", "first_v2", "second", "f1", "f2", "f3", "f4", "f5", "f6",
];

/// Looks up a preset by registry key.
pub fn preset(name: &str) -> Option<FilterSpec> {
    let (a, b): (Vec<f64>, Vec<f64>) = match name {
        "sgd" => (vec![], vec![1.0]),
        "momentum" => (vec![-0.9], vec![0.1]),
        "first_v1" => (vec![-9.0 / 11.0], vec![1.0 / 11.0, 1.0 / 11.0]),
        "first_v2" => (vec![-9.0 / 11.0], vec![3.0 / 11.0, -1.0 / 11.0]),
        "second" => (
            vec![-92.0 / 58.0, 38.0 / 58.0],
            vec![1.0 / 58.0, 2.0 / 58.0, 1.0 / 58.0],
        ),
        "f1" => (vec![-0.9], vec![0.075, 0.025]),
        "f2" => (vec![-0.9], vec![0.025, 0.075]),
        "f3" => (vec![-0.8], vec![0.1, 0.1]),
        "f4" => (vec![-0.6], vec![0.2, 0.2]),
        "f5" => (vec![-0.9], vec![0.025, 0.05, 0.025]),
        "f6" => (vec![-1.8, 0.85], vec![0.025, 0.025]),
        _ => return None,
    };
    let spec = FilterSpec::new(a, b).expect("preset coefficients are finite");
    Some(spec.with_name(name))
}
