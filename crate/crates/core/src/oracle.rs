//! Reference solutions of the centerline equations by fixed-step RK4.
//!
//! The oracle supplies ground-truth trajectories, synthetic sensor readings
//! and the velocity benchmark used when evaluating trained networks.

use std::f64::consts::FRAC_PI_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::equations::JetPhysics;
use crate::error::{Error, Result};
use crate::linalg::solve_checked;
use crate::nozzle::{choked_state, notional_exit, NotionalExit, StagnationState, ThroatState};
use crate::physics::{
    classify_regime, density_from_mass_fraction, froude_number, mass_fraction_from_density,
    mole_from_mass, Ambient, GasConstants, JetState, NozzleState, Regime, SpreadingModel,
};

/// Slack on `rho_cl <= rho_inf` before the march reports an invariant violation.
pub const DENSITY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Vertical,
    Horizontal,
}

/// How the release reaches the subsonic source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Release {
    /// The exit state is given directly.
    Subsonic,
    /// A choked release reduced through the notional nozzle.
    UnderExpanded {
        stagnation: StagnationState,
        orifice_diameter: f64,
        throat: ThroatState,
        notional: NotionalExit,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub gas: GasConstants,
    pub ambient: Ambient,
    pub spreading: SpreadingModel,
    /// Physical exit for subsonic releases, notional exit otherwise.
    pub source: NozzleState,
    pub release: Release,
    pub orientation: Orientation,
    /// End of the march, m.
    pub s_end: f64,
    /// Exit densitometric Froude number of `source`; infinite for a
    /// neutrally buoyant source.
    pub fr_den: f64,
    pub regime: Regime,
    /// Evaluation window in units of `s / source.diameter`.
    pub eval_range: (f64, f64),
    /// Base RK4 step in units of the source diameter.
    pub step_over_d: f64,
}

impl ScenarioConfig {
    /// Builds a scenario whose source is the given subsonic exit.
    pub fn subsonic(
        name: impl Into<String>,
        gas: GasConstants,
        ambient: Ambient,
        spreading: SpreadingModel,
        source: NozzleState,
        orientation: Orientation,
        s_end_over_d: f64,
    ) -> Result<Self> {
        Self::assemble(name.into(), gas, ambient, spreading, source, Release::Subsonic, orientation, s_end_over_d)
    }

    /// Builds a scenario from vessel conditions through the notional nozzle.
    #[allow(clippy::too_many_arguments)]
    pub fn under_expanded(
        name: impl Into<String>,
        gas: GasConstants,
        ambient: Ambient,
        spreading: SpreadingModel,
        stagnation: StagnationState,
        orifice_diameter: f64,
        orientation: Orientation,
        s_end_over_d: f64,
    ) -> Result<Self> {
        let throat = choked_state(&stagnation, &gas, &ambient, orifice_diameter)?;
        let notional = notional_exit(&throat, &ambient, &gas, orifice_diameter)?;
        let release = Release::UnderExpanded { stagnation, orifice_diameter, throat, notional };
        let source = notional.as_source(&ambient);
        Self::assemble(name.into(), gas, ambient, spreading, source, release, orientation, s_end_over_d)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        name: String,
        gas: GasConstants,
        ambient: Ambient,
        spreading: SpreadingModel,
        source: NozzleState,
        release: Release,
        orientation: Orientation,
        s_end_over_d: f64,
    ) -> Result<Self> {
        gas.validate()?;
        ambient.validate(&gas)?;
        source.validate()?;
        if !(s_end_over_d > 1.0) {
            return Err(Error::InvalidInput(format!("s_end / d = {s_end_over_d} must exceed 1")));
        }
        if source.density > ambient.density {
            return Err(Error::InvalidInput("source denser than ambient air".into()));
        }
        let fr_den = match froude_number(&source, &ambient) {
            Ok(fr) => fr,
            Err(Error::FroudeUndefined) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let regime = classify_regime(fr_den)?;
        let cfg = Self {
            name,
            gas,
            ambient,
            spreading,
            source,
            release,
            orientation,
            s_end: s_end_over_d * source.diameter,
            fr_den,
            regime,
            eval_range: (10.0_f64.min(s_end_over_d), s_end_over_d),
            step_over_d: 0.25,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_end > self.source.diameter) {
            return Err(Error::InvalidInput("s_end must exceed the source diameter".into()));
        }
        if !(self.step_over_d > 0.0) {
            return Err(Error::InvalidInput("step must be positive".into()));
        }
        let (lo, hi) = self.eval_range;
        if !(lo >= 0.0 && hi > lo && hi <= self.s_end_over_d() * (1.0 + 1e-12)) {
            return Err(Error::InvalidInput(format!(
                "evaluation range [{lo}, {hi}] must lie inside [0, {}]",
                self.s_end_over_d()
            )));
        }
        Ok(())
    }

    pub fn s_end_over_d(&self) -> f64 {
        self.s_end / self.source.diameter
    }

    pub fn physics(&self) -> JetPhysics {
        JetPhysics::new(&self.gas, &self.ambient, &self.spreading, &self.source, self.fr_den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    /// Base step in s, m.
    pub h: f64,
    /// Certify the step by repeated halving.
    pub refine: bool,
    /// Relative tolerance on `Y_cl` between successive halvings.
    pub tol: f64,
}

impl StepControl {
    pub const MAX_HALVINGS: usize = 8;

    pub fn for_scenario(cfg: &ScenarioConfig) -> Self {
        Self { h: cfg.step_over_d * cfg.source.diameter, refine: false, tol: 1e-4 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.tol > 0.0) {
            return Err(Error::InvalidInput("step and tolerance must be positive".into()));
        }
        Ok(())
    }
}

pub fn initial_state(cfg: &ScenarioConfig) -> JetState {
    JetState {
        s: 0.0,
        u_cl: cfg.source.velocity,
        b: cfg.source.diameter / 2.0,
        rho_cl: cfg.source.density,
        theta: match cfg.orientation {
            Orientation::Vertical => FRAC_PI_2,
            Orientation::Horizontal => 0.0,
        },
        x: 0.0,
        z: 0.0,
    }
}

fn vertical_derivs(phys: &JetPhysics, st: &JetState) -> Result<[f64; 3]> {
    let (a, r) = phys.vertical(st.u_cl, st.b, st.rho_cl);
    solve_checked(&a, &r).map_err(|e| degenerate_at(st.s, e))
}

fn horizontal_derivs(phys: &JetPhysics, st: &JetState) -> Result<[f64; 6]> {
    let (a, r) = phys.horizontal(st.u_cl, st.b, st.rho_cl, st.theta);
    let d = solve_checked(&a, &r).map_err(|e| degenerate_at(st.s, e))?;
    Ok([d[0], d[1], d[2], d[3], st.theta.cos(), st.theta.sin()])
}

fn degenerate_at(s: f64, e: Error) -> Error {
    match e {
        Error::DegenerateState(msg) => Error::DegenerateState(format!("{msg} at s = {s:.6e} m")),
        other => other,
    }
}

/// `(du_cl/ds, db/ds, drho_cl/ds)` for the vertical jet.
pub fn vertical_rhs(state: &JetState, cfg: &ScenarioConfig) -> Result<[f64; 3]> {
    vertical_derivs(&cfg.physics(), state)
}

/// `(du_cl/ds, db/ds, drho_cl/ds, dtheta/ds, dx/ds, dz/ds)` for the horizontal jet.
pub fn horizontal_rhs(state: &JetState, cfg: &ScenarioConfig) -> Result<[f64; 6]> {
    horizontal_derivs(&cfg.physics(), state)
}

/// Orientation-independent derivative of the full state vector
/// `(u, b, rho, theta, x, z)`.
fn state_derivs(phys: &JetPhysics, orientation: Orientation, st: &JetState) -> Result<[f64; 6]> {
    match orientation {
        Orientation::Vertical => {
            let d = vertical_derivs(phys, st)?;
            Ok([d[0], d[1], d[2], 0.0, 0.0, 1.0])
        }
        Orientation::Horizontal => horizontal_derivs(phys, st),
    }
}

fn to_vec(st: &JetState) -> [f64; 6] {
    [st.u_cl, st.b, st.rho_cl, st.theta, st.x, st.z]
}

fn from_vec(s: f64, v: &[f64; 6]) -> JetState {
    JetState { s, u_cl: v[0], b: v[1], rho_cl: v[2], theta: v[3], x: v[4], z: v[5] }
}

fn axpy(y: &[f64; 6], a: f64, k: &[f64; 6]) -> [f64; 6] {
    std::array::from_fn(|i| y[i] + a * k[i])
}

fn march(cfg: &ScenarioConfig, phys: &JetPhysics, h_target: f64) -> Result<Vec<JetState>> {
    let steps = (cfg.s_end / h_target).ceil().max(1.0) as usize;
    let h = cfg.s_end / steps as f64;
    let mut st = initial_state(cfg);
    st.check(&cfg.ambient, DENSITY_SLACK)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(st);
    let f = |s: f64, v: &[f64; 6]| state_derivs(phys, cfg.orientation, &from_vec(s, v));
    for i in 0..steps {
        let s = i as f64 * h;
        let y = to_vec(&st);
        let k1 = f(s, &y)?;
        let k2 = f(s + h / 2.0, &axpy(&y, h / 2.0, &k1))?;
        let k3 = f(s + h / 2.0, &axpy(&y, h / 2.0, &k2))?;
        let k4 = f(s + h, &axpy(&y, h, &k3))?;
        let next: [f64; 6] = std::array::from_fn(|j| y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]));
        st = from_vec((i + 1) as f64 * h, &next);
        st.check(&cfg.ambient, DENSITY_SLACK)?;
        out.push(st);
    }
    Ok(out)
}

/// Integrates the scenario from the source to `s_end`.
///
/// With `ctrl.refine`, the step is halved until two successive solutions
/// agree on `Y_cl` within `ctrl.tol` at every shared node; the finer of the
/// two is returned.
pub fn integrate(cfg: &ScenarioConfig, ctrl: &StepControl) -> Result<Trajectory> {
    cfg.validate()?;
    ctrl.validate()?;
    let phys = cfg.physics();
    let mut h = ctrl.h;
    let mut states = march(cfg, &phys, h)?;
    let mut certified = None;
    if ctrl.refine {
        let mut change = f64::INFINITY;
        for _ in 0..StepControl::MAX_HALVINGS {
            let finer = march(cfg, &phys, h / 2.0)?;
            change = max_relative_change(cfg, &states, &finer);
            h /= 2.0;
            states = finer;
            if change <= ctrl.tol {
                certified = Some(change);
                break;
            }
        }
        if certified.is_none() {
            return Err(Error::StepControl { halvings: StepControl::MAX_HALVINGS, change });
        }
    }
    Trajectory::from_states(cfg, states, h, certified)
}

/// Largest relative `Y_cl` difference between a solution and its step-halved
/// counterpart, compared at the coarse nodes.
fn max_relative_change(cfg: &ScenarioConfig, coarse: &[JetState], fine: &[JetState]) -> f64 {
    let phys = cfg.physics();
    coarse
        .iter()
        .zip(fine.iter().step_by(2))
        .map(|(c, f)| {
            let yc = phys.mass_fraction(c.rho_cl);
            let yf = phys.mass_fraction(f.rho_cl);
            ((yc - yf) / yf.abs().max(1e-300)).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<JetState>,
    /// Centerline mass fraction per state.
    pub mass_fraction: Vec<f64>,
    /// Centerline mole fraction per state.
    pub mole_fraction: Vec<f64>,
    /// Source diameter used to form `s / d`.
    pub diameter: f64,
    /// Step actually used.
    pub step: f64,
    /// Relative change of the last step-halving pass, when refinement ran.
    pub certified_change: Option<f64>,
}

impl Trajectory {
    fn from_states(cfg: &ScenarioConfig, states: Vec<JetState>, step: f64, certified_change: Option<f64>) -> Result<Self> {
        let mass_fraction = states
            .iter()
            .map(|st| mass_fraction_from_density(st.rho_cl, &cfg.ambient, &cfg.gas))
            .collect::<Result<Vec<_>>>()?;
        let mole_fraction = mass_fraction
            .iter()
            .map(|&y| mole_from_mass(y, &cfg.gas))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { states, mass_fraction, mole_fraction, diameter: cfg.source.diameter, step, certified_change })
    }

    pub fn s_end(&self) -> f64 {
        self.states.last().map_or(0.0, |s| s.s)
    }

    /// Linear interpolation of the state at arc length `s`.
    pub fn interpolate(&self, s: f64) -> Result<JetState> {
        let end = self.s_end();
        let tol = 1e-9 * end.max(1e-300);
        if !(s >= -tol && s <= end + tol) {
            return Err(Error::OutOfRange {
                position: s / self.diameter,
                min: 0.0,
                max: end / self.diameter,
            });
        }
        let s = s.clamp(0.0, end);
        let idx = self.states.partition_point(|st| st.s <= s);
        if idx == 0 {
            return Ok(self.states[0]);
        }
        if idx >= self.states.len() {
            return Ok(*self.states.last().expect("non-empty trajectory"));
        }
        let (a, b) = (&self.states[idx - 1], &self.states[idx]);
        if a.s == s {
            return Ok(*a);
        }
        let w = (s - a.s) / (b.s - a.s);
        let lerp = |p: f64, q: f64| p + w * (q - p);
        Ok(JetState {
            s,
            u_cl: lerp(a.u_cl, b.u_cl),
            b: lerp(a.b, b.b),
            rho_cl: lerp(a.rho_cl, b.rho_cl),
            theta: lerp(a.theta, b.theta),
            x: lerp(a.x, b.x),
            z: lerp(a.z, b.z),
        })
    }
}

/// One synthetic centerline concentration reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub s_over_d: f64,
    pub mole_frac_pct: f64,
    pub mass_frac: f64,
    pub rho_cl: f64,
}

/// Indices chosen when `k` of `total` evaluation positions become sensors.
pub fn stride_indices(total: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > total {
        return Err(Error::InvalidInput(format!("cannot select {k} of {total} positions")));
    }
    let stride = total / k;
    Ok((0..k).map(|i| i * stride).collect())
}

/// Samples the trajectory at every `positions` entry (in `s / d`), then keeps
/// `k` of them by the stride rule. Optional multiplicative Gaussian noise is
/// applied to the mass fraction with a seeded generator.
pub fn sample_sensors(
    traj: &Trajectory,
    cfg: &ScenarioConfig,
    positions: &[f64],
    k: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<SensorReading>> {
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidInput("noise standard deviation must be non-negative".into()));
    }
    let all = sample_positions(traj, cfg, positions)?;
    let picked = stride_indices(all.len(), k)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    picked
        .into_iter()
        .map(|i| {
            let r = all[i];
            if noise_std == 0.0 {
                return Ok(r);
            }
            let y = (r.mass_frac * (1.0 + noise_std * normal.sample(&mut rng))).clamp(0.0, 1.0);
            reading_from_mass_fraction(r.s_over_d, y, cfg)
        })
        .collect()
}

/// Noise-free readings at each position.
pub fn sample_positions(traj: &Trajectory, cfg: &ScenarioConfig, positions: &[f64]) -> Result<Vec<SensorReading>> {
    let max = traj.s_end() / traj.diameter;
    positions
        .iter()
        .map(|&p| {
            if !(p >= 0.0 && p <= max * (1.0 + 1e-12)) {
                return Err(Error::OutOfRange { position: p, min: 0.0, max });
            }
            let st = traj.interpolate(p * traj.diameter)?;
            let y = mass_fraction_from_density(st.rho_cl, &cfg.ambient, &cfg.gas)?;
            Ok(SensorReading {
                s_over_d: p,
                mole_frac_pct: 100.0 * mole_from_mass(y, &cfg.gas)?,
                mass_frac: y,
                rho_cl: st.rho_cl,
            })
        })
        .collect()
}

fn reading_from_mass_fraction(s_over_d: f64, y: f64, cfg: &ScenarioConfig) -> Result<SensorReading> {
    Ok(SensorReading {
        s_over_d,
        mole_frac_pct: 100.0 * mole_from_mass(y, &cfg.gas)?,
        mass_frac: y,
        rho_cl: density_from_mass_fraction(y, &cfg.ambient, &cfg.gas)?,
    })
}

/// Uniformly spaced positions over the scenario's evaluation window.
pub fn uniform_positions(cfg: &ScenarioConfig, total: usize) -> Vec<f64> {
    let (lo, hi) = cfg.eval_range;
    if total == 1 {
        return vec![lo];
    }
    (0..total).map(|i| lo + (hi - lo) * i as f64 / (total - 1) as f64).collect()
}

/// Integrates several scenarios, in parallel when the `parallel` feature is on.
pub fn integrate_all(cfgs: &[ScenarioConfig]) -> Vec<Result<Trajectory>> {
    crate::exec::map_indexed(cfgs, crate::exec::Execution::default(), |cfg| {
        integrate(cfg, &StepControl::for_scenario(cfg))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subsonic() -> ScenarioConfig {
        let amb = Ambient::default();
        let src = NozzleState { diameter: 1.905e-3, velocity: 263.1, density: 0.0838, pressure: amb.pressure, temperature: amb.temperature };
        ScenarioConfig::subsonic("sub", GasConstants::default(), amb, SpreadingModel::default(), src, Orientation::Vertical, 150.0).unwrap()
    }

    #[test]
    fn initial_state_from_exit() {
        let cfg = subsonic();
        let st = initial_state(&cfg);
        assert_eq!((st.u_cl, st.rho_cl, st.theta), (263.1, 0.0838, FRAC_PI_2));
        assert!((st.b - 0.9525e-3).abs() < 1e-15);
        assert_eq!(cfg.regime, Regime::BuoyancyDominated);
    }

    #[test]
    fn under_expanded_source_from_notional_exit() {
        let cfg = ScenarioConfig::under_expanded(
            "uv",
            GasConstants::default(),
            Ambient::default(),
            SpreadingModel::default(),
            StagnationState { p0: 1e6, t0: 293.0 },
            1e-3,
            Orientation::Vertical,
            200.0,
        )
        .unwrap();
        let st = initial_state(&cfg);
        assert!((st.u_cl - 1872.0).abs() < 2.0);
        assert!((st.rho_cl - 0.0839).abs() < 1e-4);
        assert!((st.b - 0.995e-3).abs() < 0.005e-3);
        // Exit Froude number formed with the notional exit quantities.
        assert!((cfg.fr_den - 3665.02).abs() / 3665.02 < 0.01, "Fr = {}", cfg.fr_den);
    }

    #[test]
    fn neutral_state_has_no_buoyancy_source() {
        let cfg = subsonic();
        let phys = cfg.physics();
        let st = JetState { s: 0.01, u_cl: 20.0, b: 0.005, rho_cl: cfg.ambient.density, theta: FRAC_PI_2, x: 0.0, z: 0.01 };
        let (_, r) = phys.vertical(st.u_cl, st.b, st.rho_cl);
        assert_eq!(r[1], 0.0);
        let d = vertical_rhs(&st, &cfg).unwrap();
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn subsonic_exit_signs() {
        // Hand assembly at the exit: continuity with entrainment grows u b^2,
        // momentum stays nearly constant, so the jet spreads and slows.
        let cfg = subsonic();
        let d = vertical_rhs(&initial_state(&cfg), &cfg).unwrap();
        assert!(d[0] < 0.0 && d[1] > 0.0 && d[2] > 0.0, "{d:?}");
    }

    #[test]
    fn rhs_satisfies_linear_system() {
        let cfg = subsonic();
        let phys = cfg.physics();
        for (u, b, rho) in [(200.0, 1e-3, 0.1), (30.0, 0.01, 0.8), (5.0, 0.04, 1.19)] {
            let st = JetState { s: 0.0, u_cl: u, b, rho_cl: rho, theta: FRAC_PI_2, x: 0.0, z: 0.0 };
            let d = vertical_rhs(&st, &cfg).unwrap();
            let (a, r) = phys.vertical(u, b, rho);
            for i in 0..3 {
                let lhs: f64 = (0..3).map(|j| a[i][j] * d[j]).sum();
                let scale = (0..3).map(|j| (a[i][j] * d[j]).abs()).fold(r[i].abs(), f64::max);
                assert!((lhs - r[i]).abs() <= 1e-12 * scale.max(1e-300));
            }
        }
    }

    #[test]
    fn horizontal_straight_when_neutral_and_bends_up_when_buoyant() {
        let mut cfg = subsonic();
        cfg.orientation = Orientation::Horizontal;
        let neutral = JetState { s: 0.01, u_cl: 20.0, b: 0.005, rho_cl: cfg.ambient.density, theta: 0.0, x: 0.01, z: 0.0 };
        let d = horizontal_rhs(&neutral, &cfg).unwrap();
        assert_eq!(d[3], 0.0);
        let buoyant = JetState { rho_cl: 0.5, ..neutral };
        let d = horizontal_rhs(&buoyant, &cfg).unwrap();
        assert!(d[3] > 0.0);
        let tilted = JetState { theta: 0.7, ..buoyant };
        let d = horizontal_rhs(&tilted, &cfg).unwrap();
        assert!((d[4] * d[4] + d[5] * d[5] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn interpolation_nodes_and_midpoints() {
        let cfg = subsonic();
        let traj = integrate(&cfg, &StepControl::for_scenario(&cfg)).unwrap();
        let node = traj.states[7];
        assert_eq!(traj.interpolate(node.s).unwrap(), node);
        let (a, b) = (traj.states[10], traj.states[11]);
        let mid = traj.interpolate(0.5 * (a.s + b.s)).unwrap();
        assert!((mid.rho_cl - 0.5 * (a.rho_cl + b.rho_cl)).abs() < 1e-15);
        assert!((mid.u_cl - 0.5 * (a.u_cl + b.u_cl)).abs() < 1e-12);
        assert!(traj.interpolate(-1.0).is_err());
        assert!(traj.interpolate(2.0 * traj.s_end()).is_err());
    }

    #[test]
    fn sensor_selection_is_stride_and_deterministic() {
        assert_eq!(stride_indices(20, 5).unwrap(), vec![0, 4, 8, 12, 16]);
        assert_eq!(stride_indices(20, 20).unwrap(), (0..20).collect::<Vec<_>>());
        assert!(stride_indices(20, 21).is_err());
        let cfg = subsonic();
        let traj = integrate(&cfg, &StepControl::for_scenario(&cfg)).unwrap();
        let pos = uniform_positions(&cfg, 20);
        let a = sample_sensors(&traj, &cfg, &pos, 5, 0.0, 7).unwrap();
        let b = sample_sensors(&traj, &cfg, &pos, 5, 0.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert_eq!(a[1].s_over_d, pos[4]);
        let noisy1 = sample_sensors(&traj, &cfg, &pos, 5, 0.05, 7).unwrap();
        let noisy2 = sample_sensors(&traj, &cfg, &pos, 5, 0.05, 7).unwrap();
        assert_eq!(noisy1, noisy2);
        assert_ne!(noisy1, a);
        assert!(sample_sensors(&traj, &cfg, &[1e6], 1, 0.0, 0).is_err());
    }

    #[test]
    fn exact_node_sample() {
        let cfg = subsonic();
        let traj = integrate(&cfg, &StepControl::for_scenario(&cfg)).unwrap();
        let st = traj.states[40];
        let r = sample_positions(&traj, &cfg, &[st.s / traj.diameter]).unwrap();
        assert_eq!(r[0].rho_cl, st.rho_cl);
    }
}
