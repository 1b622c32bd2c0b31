use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use h2jet::exec::Execution;
use h2jet::experiment::{self, CompareSpec, ScenarioData, TrainOverrides};
use h2jet::io;
use h2jet::neural::{Backbone, ModelParams};
use h2jet::nozzle::{choked_state, notional_exit, NotionalExit, StagnationState, ThroatState};
use h2jet::oracle::{integrate, sample_sensors, uniform_positions, Release, ScenarioConfig, StepControl};
use h2jet::physics::{Ambient, GasConstants, Regime};
use h2jet::scenario::parse_scenario;
use h2jet::training::{evaluate_mse, mse, Problem, RunSummary};
use h2jet::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "h2jet", version, about = "Hydrogen jet centerline oracle and physics-informed graph network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the centerline equations and write the trajectory.
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reduce a choked release to its notional exit.
    Nozzle {
        #[arg(long)]
        pressure_bar: f64,
        #[arg(long)]
        diameter_mm: f64,
        #[arg(long, default_value_t = 293.0)]
        temperature_k: f64,
        /// Also write the result as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample synthetic sensor and evaluation readings from the oracle.
    GenSensors {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        total: usize,
        /// Relative standard deviation of multiplicative noise on the mass fraction.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one network.
    Train {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = BackboneArg::Graph)]
        backbone: BackboneArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score a saved network against evaluation readings.
    Eval {
        #[arg(long)]
        scenario: PathBuf,
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both backbones over scenarios and seeds and report medians.
    Compare {
        #[arg(long = "scenario", required = true)]
        scenarios: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "seed", default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        #[arg(long, value_enum, default_value_t = BackboneArg::Both)]
        backbone: BackboneArg,
        #[command(flatten)]
        train: TrainArgs,
        /// Run cells one at a time.
        #[arg(long)]
        sequential: bool,
    },
}

/// Reading files; synthetic oracle readings are generated when omitted.
#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    sensors: Option<PathBuf>,
    #[arg(long)]
    eval: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    k_neighbors: Option<usize>,
    #[arg(long)]
    w_phy: Option<f64>,
    #[arg(long)]
    w_re: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
}

impl TrainArgs {
    fn overrides(&self) -> TrainOverrides {
        TrainOverrides {
            epochs: self.epochs,
            width: self.width,
            depth: self.depth,
            k_neighbors: self.k_neighbors,
            w_phy: self.w_phy,
            w_re: self.w_re,
            lr: self.lr,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackboneArg {
    Graph,
    Dense,
    Both,
}

impl BackboneArg {
    fn kinds(self) -> Vec<Backbone> {
        match self {
            BackboneArg::Graph => vec![Backbone::Graph],
            BackboneArg::Dense => vec![Backbone::Dense],
            BackboneArg::Both => vec![Backbone::Graph, Backbone::Dense],
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Io => 1,
        ErrorKind::Parse => 2,
        ErrorKind::Physics => 3,
        ErrorKind::Divergence => 4,
    }
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::Plume => "plume",
        Regime::BuoyancyDominated => "buoyancy-dominated",
        Regime::MomentumDominated => "momentum-dominated",
    }
}

fn load_scenario(path: &Path) -> h2jet::Result<ScenarioConfig> {
    let parsed = parse_scenario(path)?;
    let c = parsed.config;
    println!(
        "scenario '{}': {:?}, source d = {:.4} mm, u = {:.2} m/s, rho = {:.4} kg/m3, Fr = {:.1} ({})",
        c.name,
        c.orientation,
        c.source.diameter * 1e3,
        c.source.velocity,
        c.source.density,
        c.fr_den,
        regime_name(c.regime)
    );
    if let Release::UnderExpanded { notional, .. } = c.release {
        println!("  notional nozzle: d_v = {:.4} mm, u = {:.2} m/s", notional.d_v * 1e3, notional.u2);
    }
    Ok(c)
}

fn scenario_data(cfg: ScenarioConfig, data: &DataArgs) -> h2jet::Result<ScenarioData> {
    match (&data.sensors, &data.eval) {
        (None, None) => ScenarioData::synthetic(cfg, 5, 20, 0.0, 0),
        (Some(s), Some(e)) => ScenarioData::with_readings(cfg, io::read_readings(s)?, io::read_readings(e)?),
        (Some(s), None) => {
            let synthetic = ScenarioData::synthetic(cfg, 5, 20, 0.0, 0)?;
            Ok(ScenarioData { sensors: io::read_readings(s)?, ..synthetic })
        }
        (None, Some(e)) => {
            let synthetic = ScenarioData::synthetic(cfg, 5, 20, 0.0, 0)?;
            Ok(ScenarioData { eval: io::read_readings(e)?, ..synthetic })
        }
    }
}

fn create_dir(path: &Path) -> h2jet::Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

#[derive(Serialize)]
struct NozzleReport {
    stagnation: StagnationState,
    orifice_diameter: f64,
    throat: ThroatState,
    notional: NotionalExit,
}

#[derive(Serialize)]
struct Timings {
    train_seconds: f64,
    inference_seconds: f64,
}

fn run(cli: Cli) -> h2jet::Result<u8> {
    match cli.command {
        Command::Oracle { scenario, out } => {
            let cfg = load_scenario(&scenario)?;
            let start = std::time::Instant::now();
            let traj = integrate(&cfg, &StepControl::for_scenario(&cfg))?;
            let secs = start.elapsed().as_secs_f64();
            create_dir(&out)?;
            io::write_trajectory(&out.join("trajectory.csv"), &traj)?;
            let last = traj.states.last().expect("non-empty trajectory");
            println!(
                "{} steps of {:.3e} m in {secs:.3} s; at s/d = {:.1}: u = {:.3} m/s, X = {:.3} %",
                traj.states.len() - 1,
                traj.step,
                last.s / traj.diameter,
                last.u_cl,
                100.0 * traj.mole_fraction.last().copied().unwrap_or(0.0)
            );
        }
        Command::Nozzle { pressure_bar, diameter_mm, temperature_k, out } => {
            let gas = GasConstants::default();
            let amb = Ambient::default();
            let stagnation = StagnationState { p0: pressure_bar * 1e5, t0: temperature_k };
            let d = diameter_mm * 1e-3;
            let throat = choked_state(&stagnation, &gas, &amb, d)?;
            let notional = notional_exit(&throat, &amb, &gas, d)?;
            println!("throat: p = {:.0} Pa, T = {:.2} K, rho = {:.4} kg/m3, u = {:.2} m/s", throat.p1, throat.t1, throat.rho1, throat.u1);
            println!("notional exit: d_v = {:.4} mm, u = {:.2} m/s, rho = {:.4} kg/m3", notional.d_v * 1e3, notional.u2, notional.rho2);
            if let Some(out) = out {
                io::write_json(&out, &NozzleReport { stagnation, orifice_diameter: d, throat, notional })?;
            }
        }
        Command::GenSensors { scenario, out, k, total, noise, seed } => {
            let cfg = load_scenario(&scenario)?;
            if k > total {
                return Err(Error::InvalidInput(format!("k = {k} exceeds total = {total}")));
            }
            let traj = integrate(&cfg, &StepControl::for_scenario(&cfg))?;
            let positions = uniform_positions(&cfg, total);
            let eval = h2jet::oracle::sample_positions(&traj, &cfg, &positions)?;
            let sensors = sample_sensors(&traj, &cfg, &positions, k, noise, seed)?;
            create_dir(&out)?;
            io::write_readings(&out.join("sensors.csv"), &sensors)?;
            io::write_readings(&out.join("eval.csv"), &eval)?;
            println!("{} sensors and {} evaluation points written to {}", sensors.len(), eval.len(), out.display());
        }
        Command::Train { scenario, data, out, backbone, seed, train } => {
            let kinds = backbone.kinds();
            if kinds.len() != 1 {
                return Err(Error::Config("train takes a single backbone".into()));
            }
            let cfg = load_scenario(&scenario)?;
            let data = scenario_data(cfg, &data)?;
            let tc = train.overrides().config(kinds[0], seed)?;
            let outcome = h2jet::training::train(&tc, &data.config, &data.sensors, &data.eval)?;
            create_dir(&out)?;
            outcome.params.save(&out.join("model.ckpt"))?;
            io::write_readings(&out.join("sensors.csv"), &data.sensors)?;
            io::write_readings(&out.join("eval.csv"), &data.eval)?;
            io::write_json(&out.join("report.json"), &outcome.report.summary())?;
            io::write_json(
                &out.join("timings.json"),
                &Timings { train_seconds: outcome.report.train_seconds, inference_seconds: outcome.report.inference_seconds },
            )?;
            io::write_curve(&out.join("curve.csv"), &experiment::curve_rows(&data, &outcome)?)?;
            let m = outcome.report.mse.expect("evaluation readings present");
            println!(
                "{} backbone, seed {seed}: loss {:.3e} -> {:.3e}, MSE {:.4e} mole-%^2 ({:.3e} mass), {:.1} s",
                tc.arch.kind.name(),
                outcome.report.initial.total,
                outcome.report.final_breakdown.total,
                m.mole_pct2,
                m.mass_frac2,
                outcome.report.train_seconds
            );
        }
        Command::Eval { scenario, run, data, out } => {
            let cfg = load_scenario(&scenario)?;
            let summary: RunSummary = io::read_json(&run.join("report.json"))?;
            let params = ModelParams::load(&run.join("model.ckpt"))?;
            let sensors = io::read_readings(data.sensors.as_deref().unwrap_or(&run.join("sensors.csv")))?;
            let eval = io::read_readings(data.eval.as_deref().unwrap_or(&run.join("eval.csv")))?;
            if params.arch != summary.config.arch {
                return Err(Error::Config("checkpoint architecture does not match the run report".into()));
            }
            let problem = Problem::new(&cfg, &sensors, &eval, &summary.config)?;
            let (m, points) = evaluate_mse(&problem, &params, &eval)?;
            debug_assert_eq!(m, mse(&points, &eval));
            create_dir(&out)?;
            io::write_json(&out.join("predictions.json"), &points)?;
            io::write_json(&out.join("mse.json"), &m)?;
            println!("MSE {:.4e} mole-%^2 ({:.3e} mass fraction^2) over {} points", m.mole_pct2, m.mass_frac2, eval.len());
        }
        Command::Compare { scenarios, data, out, seeds, backbone, train, sequential } => {
            if scenarios.len() > 1 && (data.sensors.is_some() || data.eval.is_some()) {
                return Err(Error::Config("--sensors/--eval apply to a single scenario".into()));
            }
            let mut inputs = Vec::new();
            for path in &scenarios {
                inputs.push(scenario_data(load_scenario(path)?, &data)?);
            }
            let spec = CompareSpec {
                scenarios: inputs,
                backbones: backbone.kinds(),
                seeds,
                overrides: train.overrides(),
                execution: if sequential { Execution::Sequential } else { Execution::default() },
            };
            let cmp = experiment::compare(&spec)?;
            experiment::write_comparison(&out, &cmp)?;
            println!("{:<28} {:<6} {:>14} {:>6}", "scenario", "model", "median MSE", "ok");
            for s in &cmp.report.summaries {
                let med = s.median.map_or("-".to_string(), |m| format!("{:.4e}", m.mole_pct2));
                println!("{:<28} {:<6} {:>14} {:>3}/{}", s.scenario, s.backbone.name(), med, s.succeeded, s.succeeded + s.failed);
            }
            println!(
                "graph below dense on {} of {} scenarios; slowest run {:.1} s, oracle {:.3} s",
                cmp.report.graph_better.len(),
                spec.scenarios.len(),
                cmp.timings.max_learning_seconds,
                cmp.timings.max_oracle_seconds
            );
            let failed = cmp.report.failed_cells();
            if !failed.is_empty() {
                for (s, b) in &failed {
                    warn!("every seed failed for {s} / {}", b.name());
                }
                let diverged = cmp
                    .report
                    .cells
                    .iter()
                    .any(|c| c.status == experiment::CellStatus::Diverged && failed.iter().any(|(s, b)| *s == c.scenario && *b == c.backbone));
                return Ok(if diverged { 4 } else { 3 });
            }
            info!("report written to {}", out.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
