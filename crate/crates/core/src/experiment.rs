//! Graph-versus-dense comparison over scenarios, backbones and seeds.
//!
//! Every (scenario, backbone, seed) cell trains independently, so cells run
//! through [`exec::map_indexed`]. Results are merged in cell order, which
//! keeps `report.json` byte-identical for identical inputs. Wall-clock
//! figures go to a separate `timings.json`.

use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::io::{self, CurveRow};
use crate::neural::Backbone;
use crate::oracle::{integrate, sample_positions, sample_sensors, uniform_positions, ScenarioConfig, SensorReading, StepControl, Trajectory};
use crate::physics::mass_fraction_from_density;
use crate::training::{node_predictions, train, MsePair, TrainConfig, TrainOutcome};

/// Quoted wall-clock range of the reference CFD runs, seconds.
pub const CFD_SECONDS: (f64, f64) = (4.0 * 3600.0, 24.0 * 3600.0);

/// A scenario with its oracle trajectory and the readings used to train and
/// score it.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub config: ScenarioConfig,
    pub trajectory: Trajectory,
    pub sensors: Vec<SensorReading>,
    pub eval: Vec<SensorReading>,
    pub oracle_seconds: f64,
}

impl ScenarioData {
    /// Integrates the oracle, places `total` uniform evaluation positions and
    /// keeps `k` of them as sensors.
    pub fn synthetic(config: ScenarioConfig, k: usize, total: usize, noise: f64, seed: u64) -> Result<Self> {
        let start = Instant::now();
        let trajectory = integrate(&config, &StepControl::for_scenario(&config))?;
        let oracle_seconds = start.elapsed().as_secs_f64();
        let positions = uniform_positions(&config, total);
        let eval = sample_positions(&trajectory, &config, &positions)?;
        let sensors = sample_sensors(&trajectory, &config, &positions, k, noise, seed)?;
        Ok(Self { config, trajectory, sensors, eval, oracle_seconds })
    }

    /// Uses the given readings; the oracle still supplies curve references.
    pub fn with_readings(config: ScenarioConfig, sensors: Vec<SensorReading>, eval: Vec<SensorReading>) -> Result<Self> {
        let start = Instant::now();
        let trajectory = integrate(&config, &StepControl::for_scenario(&config))?;
        let oracle_seconds = start.elapsed().as_secs_f64();
        Ok(Self { config, trajectory, sensors, eval, oracle_seconds })
    }
}

/// Command-line style overrides on top of [`TrainConfig::new`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub width: Option<usize>,
    pub depth: Option<usize>,
    pub k_neighbors: Option<usize>,
    pub w_phy: Option<f64>,
    pub w_re: Option<f64>,
    pub lr: Option<f64>,
}

impl TrainOverrides {
    pub fn config(&self, kind: Backbone, seed: u64) -> Result<TrainConfig> {
        let mut tc = TrainConfig::new(kind);
        tc.seed = seed;
        if let Some(v) = self.epochs {
            tc.epochs = v;
        }
        if let Some(v) = self.width {
            tc.arch.width = v;
        }
        if let Some(v) = self.depth {
            tc.arch.depth = v;
        }
        if let Some(v) = self.k_neighbors {
            tc.k_neighbors = v;
        }
        if let Some(v) = self.w_phy {
            tc.weights.phy = v;
        }
        if let Some(v) = self.w_re {
            tc.weights.re = v;
        }
        if let Some(v) = self.lr {
            tc.adam.lr = v;
        }
        tc.validate()?;
        Ok(tc)
    }
}

#[derive(Debug, Clone)]
pub struct CompareSpec {
    pub scenarios: Vec<ScenarioData>,
    pub backbones: Vec<Backbone>,
    pub seeds: Vec<u64>,
    pub overrides: TrainOverrides,
    pub execution: Execution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub scenario: String,
    pub backbone: Backbone,
    pub seed: u64,
    pub status: CellStatus,
    pub error: Option<String>,
    pub mse: Option<MsePair>,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub curve: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scenario: String,
    pub backbone: Backbone,
    pub succeeded: usize,
    pub failed: usize,
    /// Median over the seeds that trained, `None` when none did.
    pub median: Option<MsePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEcho {
    pub name: String,
    pub config: ScenarioConfig,
    pub sensors: Vec<SensorReading>,
    pub eval: Vec<SensorReading>,
}

/// Deterministic part of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub software_version: String,
    pub scenarios: Vec<ScenarioEcho>,
    pub seeds: Vec<u64>,
    pub configs: Vec<TrainConfig>,
    pub cells: Vec<CellReport>,
    pub summaries: Vec<CellSummary>,
    /// Scenarios on which the graph median is below the dense median.
    pub graph_better: Vec<String>,
}

impl ComparisonReport {
    pub fn summary(&self, scenario: &str, backbone: Backbone) -> Option<&CellSummary> {
        self.summaries.iter().find(|s| s.scenario == scenario && s.backbone == backbone)
    }

    /// (scenario, backbone) pairs in which every seed failed.
    pub fn failed_cells(&self) -> Vec<(String, Backbone)> {
        self.summaries.iter().filter(|s| s.succeeded == 0).map(|s| (s.scenario.clone(), s.backbone)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub scenario: String,
    pub backbone: Backbone,
    pub seed: u64,
    pub train_seconds: f64,
    pub inference_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTiming {
    pub scenario: String,
    pub seconds: f64,
}

/// Wall-clock figures, set against the quoted CFD cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub cells: Vec<CellTiming>,
    pub oracle: Vec<OracleTiming>,
    pub cfd_seconds_min: f64,
    pub cfd_seconds_max: f64,
    /// Slowest train-plus-inference cell.
    pub max_learning_seconds: f64,
    pub max_oracle_seconds: f64,
    /// `log10(cfd_seconds_min / max_learning_seconds)`
    pub learning_orders_below_cfd: f64,
    /// `log10(cfd_seconds_min / max_oracle_seconds)`
    pub oracle_orders_below_cfd: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub report: ComparisonReport,
    pub timings: TimingReport,
    /// Curve rows per cell, in cell order; empty for failed cells.
    pub curves: Vec<Vec<CurveRow>>,
}

pub fn curve_file_name(scenario: &str, backbone: Backbone, seed: u64) -> String {
    format!("curve_{}_{}_seed{seed}.csv", sanitize(scenario), backbone.name())
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Predictions at every node against the oracle at the same position.
pub fn curve_rows(data: &ScenarioData, outcome: &TrainOutcome) -> Result<Vec<CurveRow>> {
    let cfg = &data.config;
    let d = data.trajectory.diameter;
    node_predictions(&outcome.problem, &outcome.params)?
        .iter()
        .map(|p| {
            let st = data.trajectory.interpolate(p.s_over_d * d)?;
            Ok(CurveRow {
                s_over_d: p.s_over_d,
                y_pred: p.mass_frac,
                y_oracle: mass_fraction_from_density(st.rho_cl, &cfg.ambient, &cfg.gas)?,
                x_pred_pct: p.mole_frac_pct,
                u_pred: p.u,
                u_oracle: st.u_cl,
                b_pred: p.b,
                rho_pred: p.rho,
                theta_pred: p.theta,
            })
        })
        .collect()
}

struct CellOutput {
    report: CellReport,
    timing: CellTiming,
    curve: Vec<CurveRow>,
}

fn run_cell(data: &ScenarioData, tc: &TrainConfig) -> CellOutput {
    let name = data.config.name.clone();
    let kind = tc.arch.kind;
    let result = train(tc, &data.config, &data.sensors, &data.eval).and_then(|o| {
        let curve = curve_rows(data, &o)?;
        Ok((o, curve))
    });
    let mut report = CellReport {
        scenario: name.clone(),
        backbone: kind,
        seed: tc.seed,
        status: CellStatus::Ok,
        error: None,
        mse: None,
        initial_loss: None,
        final_loss: None,
        curve: None,
    };
    let mut timing = CellTiming { scenario: name, backbone: kind, seed: tc.seed, train_seconds: 0.0, inference_seconds: 0.0 };
    match result {
        Ok((o, curve)) => {
            report.mse = o.report.mse;
            report.initial_loss = Some(o.report.initial.total);
            report.final_loss = Some(o.report.final_breakdown.total);
            report.curve = Some(curve_file_name(&report.scenario, kind, tc.seed));
            timing.train_seconds = o.report.train_seconds;
            timing.inference_seconds = o.report.inference_seconds;
            CellOutput { report, timing, curve }
        }
        Err(e) => {
            warn!("{} / {} / seed {}: {e}", report.scenario, kind.name(), tc.seed);
            report.status = if matches!(e, Error::Diverged { .. }) { CellStatus::Diverged } else { CellStatus::Failed };
            report.error = Some(e.to_string());
            CellOutput { report, timing, curve: Vec::new() }
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median of each MSE component independently.
pub fn median_mse(values: &[MsePair]) -> Option<MsePair> {
    if values.is_empty() {
        return None;
    }
    Some(MsePair {
        mole_pct2: median(values.iter().map(|m| m.mole_pct2).collect()),
        mass_frac2: median(values.iter().map(|m| m.mass_frac2).collect()),
    })
}

pub fn compare(spec: &CompareSpec) -> Result<Comparison> {
    if spec.seeds.is_empty() {
        return Err(Error::InvalidInput("at least one seed required".into()));
    }
    if spec.backbones.is_empty() || spec.scenarios.is_empty() {
        return Err(Error::InvalidInput("at least one scenario and backbone required".into()));
    }
    let mut names: Vec<&str> = spec.scenarios.iter().map(|s| s.config.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("scenario names must be distinct".into()));
    }
    let mut cells = Vec::new();
    for (si, _) in spec.scenarios.iter().enumerate() {
        for &kind in &spec.backbones {
            for &seed in &spec.seeds {
                cells.push((si, spec.overrides.config(kind, seed)?));
            }
        }
    }
    info!("comparison: {} cells", cells.len());
    let outputs = exec::map_indexed(&cells, spec.execution, |(si, tc)| run_cell(&spec.scenarios[*si], tc));

    let mut summaries = Vec::new();
    for data in &spec.scenarios {
        for &kind in &spec.backbones {
            let mine: Vec<&CellReport> = outputs
                .iter()
                .map(|o| &o.report)
                .filter(|r| r.scenario == data.config.name && r.backbone == kind)
                .collect();
            let ok: Vec<MsePair> = mine.iter().filter_map(|r| r.mse).collect();
            summaries.push(CellSummary {
                scenario: data.config.name.clone(),
                backbone: kind,
                succeeded: ok.len(),
                failed: mine.len() - ok.len(),
                median: median_mse(&ok),
            });
        }
    }
    let graph_better = spec
        .scenarios
        .iter()
        .map(|d| d.config.name.clone())
        .filter(|name| {
            let med = |kind| {
                summaries.iter().find(|s| &s.scenario == name && s.backbone == kind).and_then(|s| s.median).map(|m| m.mole_pct2)
            };
            matches!((med(Backbone::Graph), med(Backbone::Dense)), (Some(g), Some(d)) if g < d)
        })
        .collect();

    let mut configs = Vec::new();
    for &kind in &spec.backbones {
        configs.push(spec.overrides.config(kind, spec.seeds[0])?);
    }
    let cell_timings: Vec<CellTiming> = outputs.iter().map(|o| o.timing.clone()).collect();
    let oracle: Vec<OracleTiming> =
        spec.scenarios.iter().map(|d| OracleTiming { scenario: d.config.name.clone(), seconds: d.oracle_seconds }).collect();
    let max_learning = cell_timings.iter().map(|t| t.train_seconds + t.inference_seconds).fold(0.0, f64::max);
    let max_oracle = oracle.iter().map(|t| t.seconds).fold(0.0, f64::max);
    let orders = |secs: f64| (CFD_SECONDS.0 / secs.max(1e-9)).log10();
    let timings = TimingReport {
        cells: cell_timings,
        oracle,
        cfd_seconds_min: CFD_SECONDS.0,
        cfd_seconds_max: CFD_SECONDS.1,
        max_learning_seconds: max_learning,
        max_oracle_seconds: max_oracle,
        learning_orders_below_cfd: orders(max_learning),
        oracle_orders_below_cfd: orders(max_oracle),
    };
    let report = ComparisonReport {
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        scenarios: spec
            .scenarios
            .iter()
            .map(|d| ScenarioEcho {
                name: d.config.name.clone(),
                config: d.config.clone(),
                sensors: d.sensors.clone(),
                eval: d.eval.clone(),
            })
            .collect(),
        seeds: spec.seeds.clone(),
        configs,
        cells: outputs.iter().map(|o| o.report.clone()).collect(),
        summaries,
        graph_better,
    };
    let curves = outputs.into_iter().map(|o| o.curve).collect();
    Ok(Comparison { report, timings, curves })
}

/// Writes `report.json`, `timings.json` and one curve file per trained cell.
pub fn write_comparison(out: &Path, cmp: &Comparison) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    io::write_json(&out.join("report.json"), &cmp.report)?;
    io::write_json(&out.join("timings.json"), &cmp.timings)?;
    for (cell, rows) in cmp.report.cells.iter().zip(&cmp.curves) {
        if let Some(name) = &cell.curve {
            io::write_curve(&out.join(name), rows)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::Orientation;
    use crate::physics::{Ambient, GasConstants, NozzleState, SpreadingModel};

    fn data(name: &str) -> ScenarioData {
        let amb = Ambient::default();
        let src = NozzleState { diameter: 1.905e-3, velocity: 263.1, density: 0.0838, pressure: amb.pressure, temperature: amb.temperature };
        let cfg = ScenarioConfig::subsonic(name, GasConstants::default(), amb, SpreadingModel::default(), src, Orientation::Vertical, 150.0).unwrap();
        ScenarioData::synthetic(cfg, 5, 20, 0.0, 0).unwrap()
    }

    fn spec(scenarios: Vec<ScenarioData>, execution: Execution) -> CompareSpec {
        CompareSpec {
            scenarios,
            backbones: vec![Backbone::Graph, Backbone::Dense],
            seeds: vec![0, 1],
            overrides: TrainOverrides { epochs: Some(5), width: Some(6), depth: Some(1), ..Default::default() },
            execution,
        }
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        let m = median_mse(&[
            MsePair { mole_pct2: 1.0, mass_frac2: 9.0 },
            MsePair { mole_pct2: 5.0, mass_frac2: 1.0 },
            MsePair { mole_pct2: 3.0, mass_frac2: 4.0 },
        ])
        .unwrap();
        assert_eq!((m.mole_pct2, m.mass_frac2), (3.0, 4.0));
        assert!(median_mse(&[]).is_none());
    }

    #[test]
    fn every_cell_is_populated() {
        let cmp = compare(&spec(vec![data("a"), data("b")], Execution::Sequential)).unwrap();
        assert_eq!(cmp.report.cells.len(), 8);
        assert_eq!(cmp.report.summaries.len(), 4);
        assert!(cmp.report.cells.iter().all(|c| c.status == CellStatus::Ok && c.mse.is_some()));
        assert!(cmp.report.summaries.iter().all(|s| s.succeeded == 2 && s.median.is_some()));
        assert_eq!(cmp.curves.len(), 8);
        assert!(cmp.curves.iter().all(|c| !c.is_empty()));
        assert!(cmp.report.failed_cells().is_empty());
    }

    #[test]
    fn parallel_matches_sequential() {
        let seq = compare(&spec(vec![data("a")], Execution::Sequential)).unwrap();
        let par = compare(&spec(vec![data("a")], Execution::Parallel)).unwrap();
        assert_eq!(serde_json::to_string(&seq.report).unwrap(), serde_json::to_string(&par.report).unwrap());
        assert_eq!(seq.curves, par.curves);
    }

    #[test]
    fn divergence_is_recorded_per_cell() {
        let mut s = spec(vec![data("a")], Execution::Sequential);
        s.overrides.lr = Some(1e12);
        s.overrides.epochs = Some(300);
        let cmp = compare(&s).unwrap();
        assert!(cmp.report.cells.iter().all(|c| c.status != CellStatus::Ok && c.error.is_some()));
        assert_eq!(cmp.report.failed_cells().len(), 2);
    }

    #[test]
    fn curves_carry_the_oracle() {
        let d = data("a");
        let cmp = compare(&spec(vec![d.clone()], Execution::Sequential)).unwrap();
        let rows = &cmp.curves[0];
        for r in rows {
            let st = d.trajectory.interpolate(r.s_over_d * d.trajectory.diameter).unwrap();
            assert_eq!(r.u_oracle, st.u_cl);
            assert!(r.y_oracle > 0.0 && r.y_oracle <= 1.0);
        }
        let dir = tempfile::tempdir().unwrap();
        write_comparison(dir.path(), &cmp).unwrap();
        let name = cmp.report.cells[0].curve.as_ref().unwrap();
        assert_eq!(io::read_curve(&dir.path().join(name)).unwrap(), *rows);
        assert!(dir.path().join("report.json").exists() && dir.path().join("timings.json").exists());
    }

    #[test]
    fn rejects_empty_seeds_and_duplicate_names() {
        let mut s = spec(vec![data("a")], Execution::Sequential);
        s.seeds.clear();
        assert!(compare(&s).is_err());
        assert!(compare(&spec(vec![data("a"), data("a")], Execution::Sequential)).is_err());
    }
}
