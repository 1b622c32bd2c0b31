#![allow(dead_code)]

use std::path::PathBuf;

use h2jet::experiment::ScenarioData;
use h2jet::oracle::ScenarioConfig;
use h2jet::scenario::parse_scenario;

pub const SCENARIOS: [&str; 3] = ["subsonic", "under_expanded_vertical", "under_expanded_horizontal"];

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scn"))
}

pub fn scenario(name: &str) -> ScenarioConfig {
    parse_scenario(&scenario_path(name)).expect("shipped scenario parses").config
}

/// Five strided sensors out of twenty uniform evaluation points.
pub fn synthetic(name: &str) -> ScenarioData {
    ScenarioData::synthetic(scenario(name), 5, 20, 0.0, 0).expect("oracle integrates")
}

/// Coefficient of determination of a least-squares line through `(x, y)`.
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}
