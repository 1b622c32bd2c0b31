//! Gas and ambient constants, Gaussian self-similar profiles, entrainment
//! closures, Froude classification and concentration conversions.
//!
//! Everything here is a pure function of its arguments.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entrainment-constant limit reached in buoyancy-dominated flow.
pub const ALPHA_CAP: f64 = 0.082;

/// Densitometric Froude number at which the quadratic `alpha2` fit hands over
/// to the constant branch.
pub const ALPHA2_BREAK: f64 = 268.0;

/// Tolerance on mass fractions slightly outside `[0, 1]` before clamping turns
/// into an error.
pub const MASS_FRACTION_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasConstants {
    /// Universal gas constant, J/(mol K).
    pub r: f64,
    /// Molar mass of hydrogen, kg/mol.
    pub m_h2: f64,
    /// Molar mass of air, kg/mol.
    pub m_air: f64,
    /// Specific-heat ratio of hydrogen.
    pub gamma: f64,
}

impl Default for GasConstants {
    fn default() -> Self {
        Self { r: 8.314, m_h2: 2.016e-3, m_air: 28.966e-3, gamma: 1.405 }
    }
}

impl GasConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.m_h2 > 0.0 && self.m_air > 0.0) {
            return Err(Error::InvalidInput("gas constants must be strictly positive".into()));
        }
        if self.m_air <= self.m_h2 {
            return Err(Error::InvalidInput("M_air must exceed M_H2".into()));
        }
        if !(self.gamma > 1.0 && self.gamma < 2.0) {
            return Err(Error::InvalidInput(format!("gamma = {} outside (1, 2)", self.gamma)));
        }
        Ok(())
    }

    /// `M_H2 / (M_air - M_H2)`, the slope linking `rho Y` to the density deficit.
    pub fn species_ratio(&self) -> f64 {
        self.m_h2 / (self.m_air - self.m_h2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ambient {
    /// Pa
    pub pressure: f64,
    /// K
    pub temperature: f64,
    /// kg/m3
    pub density: f64,
    /// m/s2
    pub gravity: f64,
}

impl Default for Ambient {
    fn default() -> Self {
        Self { pressure: 101_325.0, temperature: 293.0, density: 1.205, gravity: 9.81 }
    }
}

impl Ambient {
    pub fn validate(&self, gas: &GasConstants) -> Result<()> {
        if !(self.pressure > 0.0 && self.temperature > 0.0 && self.density > 0.0) {
            return Err(Error::InvalidInput("ambient state must be strictly positive".into()));
        }
        if !(self.gravity > 0.0) {
            return Err(Error::InvalidInput("gravity must be positive".into()));
        }
        let ideal = self.pressure * gas.m_air / (gas.r * self.temperature);
        if ((self.density - ideal) / ideal).abs() > 0.02 {
            return Err(Error::InvalidInput(format!(
                "ambient density {} kg/m3 departs more than 2% from ideal-gas value {ideal:.4}",
                self.density
            )));
        }
        Ok(())
    }
}

/// Gaussian spreading ratio and entrainment coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadingModel {
    pub lambda: f64,
    /// `lambda^2 / (1 + lambda^2)`
    pub lambda1: f64,
    /// `2 lambda^2 / (1 + 2 lambda^2)`
    pub lambda2: f64,
    /// Momentum-entrainment coefficient.
    pub beta_a: f64,
    pub alpha_cap: f64,
}

impl SpreadingModel {
    pub fn new(lambda: f64, beta_a: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("spreading ratio {lambda} must be positive")));
        }
        if !(beta_a >= 0.0 && beta_a.is_finite()) {
            return Err(Error::InvalidInput(format!("beta_A {beta_a} must be non-negative")));
        }
        let l2 = lambda * lambda;
        Ok(Self {
            lambda,
            lambda1: l2 / (1.0 + l2),
            lambda2: 2.0 * l2 / (1.0 + 2.0 * l2),
            beta_a,
            alpha_cap: ALPHA_CAP,
        })
    }
}

impl Default for SpreadingModel {
    fn default() -> Self {
        Self::new(1.16, 0.282).expect("default spreading constants are valid")
    }
}

/// Conditions at a (physical or notional) nozzle exit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NozzleState {
    /// Diameter, m.
    pub diameter: f64,
    /// Exit velocity, m/s.
    pub velocity: f64,
    /// Exit density, kg/m3.
    pub density: f64,
    /// Static pressure, Pa.
    pub pressure: f64,
    /// Temperature, K.
    pub temperature: f64,
}

impl NozzleState {
    pub fn validate(&self) -> Result<()> {
        if !(self.diameter > 0.0) {
            return Err(Error::InvalidInput("nozzle diameter must be positive".into()));
        }
        if !(self.velocity >= 0.0) {
            return Err(Error::InvalidInput("exit velocity must be non-negative".into()));
        }
        if !(self.density > 0.0) {
            return Err(Error::InvalidInput("exit density must be positive".into()));
        }
        Ok(())
    }
}

/// Centerline state at arc length `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JetState {
    pub s: f64,
    pub u_cl: f64,
    /// Gaussian velocity half-width.
    pub b: f64,
    pub rho_cl: f64,
    /// Inclination from horizontal, rad.
    pub theta: f64,
    pub x: f64,
    pub z: f64,
}

impl JetState {
    /// Checks the state invariants; `slack` absorbs round-off on the density
    /// bound.
    pub fn check(&self, amb: &Ambient, slack: f64) -> Result<()> {
        let fail = |what: String| Err(Error::Invariant { s: self.s, what });
        if !(self.b > 0.0 && self.b.is_finite()) {
            return fail(format!("half-width b = {}", self.b));
        }
        if !(self.u_cl > 0.0 && self.u_cl.is_finite()) {
            return fail(format!("centerline velocity u_cl = {}", self.u_cl));
        }
        if !(self.rho_cl > 0.0) || self.rho_cl > amb.density + slack {
            return fail(format!(
                "centerline density {} outside (0, {}]",
                self.rho_cl, amb.density
            ));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if !(self.theta >= -1e-12 && self.theta <= half_pi + 1e-12) {
            return fail(format!("inclination {} outside [0, pi/2]", self.theta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Plume,
    BuoyancyDominated,
    MomentumDominated,
}

/// Exit densitometric Froude number `u / sqrt(g d |rho_exit - rho_inf| / rho_exit)`.
pub fn froude_number(nozzle: &NozzleState, amb: &Ambient) -> Result<f64> {
    nozzle.validate()?;
    let deficit = (nozzle.density - amb.density).abs();
    if deficit == 0.0 {
        return Err(Error::FroudeUndefined);
    }
    let scale = (amb.gravity * nozzle.diameter * deficit / nozzle.density).sqrt();
    Ok(nozzle.velocity / scale)
}

pub fn classify_regime(fr: f64) -> Result<Regime> {
    if !(fr >= 0.0) {
        return Err(Error::InvalidInput(format!("Froude number {fr} must be non-negative")));
    }
    Ok(if fr < 10.0 {
        Regime::Plume
    } else if fr <= 1000.0 {
        Regime::BuoyancyDominated
    } else {
        Regime::MomentumDominated
    })
}

/// Centerline hydrogen mass fraction from the mixture density.
///
/// Values within [`MASS_FRACTION_SLACK`] outside `[0, 1]` are clamped with a
/// warning; anything further out is rejected.
pub fn mass_fraction_from_density(rho_cl: f64, amb: &Ambient, gas: &GasConstants) -> Result<f64> {
    if !(rho_cl > 0.0) {
        return Err(Error::InvalidInput(format!("density {rho_cl} must be positive")));
    }
    let y = gas.species_ratio() * (amb.density / rho_cl - 1.0);
    if !(-MASS_FRACTION_SLACK..=1.0 + MASS_FRACTION_SLACK).contains(&y) {
        return Err(Error::InconsistentDensity { rho: rho_cl, mass_fraction: y });
    }
    if !(0.0..=1.0).contains(&y) {
        warn!("mass fraction {y:.6} clamped to [0, 1] (rho_cl = {rho_cl})");
    }
    Ok(y.clamp(0.0, 1.0))
}

pub fn density_from_mass_fraction(y: f64, amb: &Ambient, gas: &GasConstants) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::InvalidInput(format!("mass fraction {y} outside [0, 1]")));
    }
    Ok(amb.density / (1.0 + y / gas.species_ratio()))
}

pub fn mole_from_mass(y: f64, gas: &GasConstants) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::InvalidInput(format!("mass fraction {y} outside [0, 1]")));
    }
    let h2 = y / gas.m_h2;
    Ok(h2 / (h2 + (1.0 - y) / gas.m_air))
}

/// Mole fraction of an ideal hydrogen/air mixture at ambient pressure and
/// temperature, read directly from its density. Unclamped, so it stays
/// defined for unphysical network predictions; agrees with
/// `mole_from_mass(mass_fraction_from_density(rho))` inside the physical range.
pub fn mole_fraction_from_density(rho_cl: f64, amb: &Ambient, gas: &GasConstants) -> f64 {
    (1.0 - rho_cl / amb.density) / (1.0 - gas.m_h2 / gas.m_air)
}

/// Unclamped counterpart of [`mass_fraction_from_density`].
pub fn mass_fraction_unchecked(rho_cl: f64, amb: &Ambient, gas: &GasConstants) -> f64 {
    gas.species_ratio() * (amb.density / rho_cl - 1.0)
}

/// Local values of the self-similar profiles at radius `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub u: f64,
    pub rho: f64,
    /// Hydrogen partial density `rho * Y`.
    pub rho_y: f64,
}

/// Evaluates the Gaussian velocity, density-deficit and species profiles.
/// The species profile shares the spreading ratio of the density deficit.
pub fn gaussian_profiles(
    state: &JetState,
    r: f64,
    spreading: &SpreadingModel,
    amb: &Ambient,
    gas: &GasConstants,
) -> Result<ProfilePoint> {
    if !(r >= 0.0) {
        return Err(Error::InvalidInput(format!("radius {r} must be non-negative")));
    }
    let y_cl = mass_fraction_from_density(state.rho_cl, amb, gas)?;
    let xi = r * r / (state.b * state.b);
    let scalar_decay = (-xi / (spreading.lambda * spreading.lambda)).exp();
    Ok(ProfilePoint {
        u: state.u_cl * (-xi).exp(),
        rho: amb.density - (amb.density - state.rho_cl) * scalar_decay,
        rho_y: state.rho_cl * y_cl * scalar_decay,
    })
}

/// Buoyancy-entrainment constant as a function of the exit Froude number.
pub fn alpha2(fr_den: f64) -> f64 {
    if fr_den < ALPHA2_BREAK {
        17.313 - 0.11665 * fr_den + 2.0771e-4 * fr_den * fr_den
    } else {
        0.97
    }
}

/// Momentum-driven entrainment, `beta_A * sqrt(pi d^2 u0^2 / 4)`. The source
/// density cancels in the printed closure.
pub fn momentum_entrainment(source: &NozzleState, spreading: &SpreadingModel) -> f64 {
    let d = source.diameter;
    let u0 = source.velocity;
    spreading.beta_a * (std::f64::consts::PI * d * d * u0 * u0 / 4.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entrainment {
    /// Total entrainment after the cap procedure, m2/s.
    pub e: f64,
    pub e_mom: f64,
    pub e_buoy: f64,
    /// `alpha` implied by the uncapped sum.
    pub alpha_raw: f64,
    pub alpha_eff: f64,
}

/// Momentum plus buoyancy entrainment with the `alpha <= alpha_cap` limit.
pub fn entrainment(
    state: &JetState,
    source: &NozzleState,
    spreading: &SpreadingModel,
    amb: &Ambient,
    fr_den: f64,
) -> Result<Entrainment> {
    if !(state.u_cl > 0.0) {
        return Err(Error::InvalidInput(format!("centerline velocity {} must be positive", state.u_cl)));
    }
    if !(state.b > 0.0) {
        return Err(Error::InvalidInput(format!("half-width {} must be positive", state.b)));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let e_mom = momentum_entrainment(source, spreading);
    let deficit = amb.density - state.rho_cl;
    // alpha2 / Fr_1 * 2 pi u b with Fr_1 = u^2 / (g b deficit / rho_0)
    let e_buoy = if deficit == 0.0 {
        0.0
    } else {
        let fr_local = state.u_cl * state.u_cl / (amb.gravity * state.b * deficit / source.density);
        alpha2(fr_den) / fr_local * two_pi * state.u_cl * state.b
    };
    let raw = e_mom + e_buoy;
    let alpha_raw = raw / (two_pi * state.b * state.u_cl);
    let (e, alpha_eff) = if alpha_raw > spreading.alpha_cap {
        (two_pi * state.b * spreading.alpha_cap * state.u_cl, spreading.alpha_cap)
    } else {
        (raw, alpha_raw)
    };
    Ok(Entrainment { e, e_mom, e_buoy, alpha_raw, alpha_eff })
}
