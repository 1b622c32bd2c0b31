//! Notional-nozzle reduction of an under-expanded release.
//!
//! Level 0 is the vessel (stagnation) state, level 1 the sonic orifice and
//! level 2 the fictitious subsonic exit at ambient pressure. Level 0 to 1 is
//! isentropic; level 1 to 2 conserves mass and momentum with no entrainment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{Ambient, GasConstants, NozzleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagnationState {
    /// Absolute vessel pressure, Pa.
    pub p0: f64,
    /// Vessel temperature, K.
    pub t0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroatState {
    pub p1: f64,
    pub t1: f64,
    pub rho1: f64,
    pub u1: f64,
    pub a1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotionalExit {
    /// Pseudo-diameter, m.
    pub d_v: f64,
    pub u2: f64,
    pub rho2: f64,
    pub a2: f64,
    /// Always the ambient pressure.
    pub p2: f64,
}

impl NotionalExit {
    /// The notional exit as a subsonic source at ambient temperature.
    pub fn as_source(&self, amb: &Ambient) -> NozzleState {
        NozzleState {
            diameter: self.d_v,
            velocity: self.u2,
            density: self.rho2,
            pressure: self.p2,
            temperature: amb.temperature,
        }
    }
}

/// `((gamma + 1) / 2)^(gamma / (gamma - 1))`
pub fn critical_pressure_ratio(gamma: f64) -> f64 {
    ((gamma + 1.0) / 2.0).powf(gamma / (gamma - 1.0))
}

/// Isentropic sonic state at an orifice of diameter `d_e`.
pub fn choked_state(
    stag: &StagnationState,
    gas: &GasConstants,
    amb: &Ambient,
    d_e: f64,
) -> Result<ThroatState> {
    gas.validate()?;
    if !(stag.t0 > 0.0) {
        return Err(Error::InvalidInput(format!("vessel temperature {} must be positive", stag.t0)));
    }
    if !(d_e > 0.0) {
        return Err(Error::InvalidInput("orifice diameter must be positive".into()));
    }
    let g = gas.gamma;
    let critical = critical_pressure_ratio(g);
    let ratio = stag.p0 / amb.pressure;
    if !(ratio > critical) {
        return Err(Error::NotChoked { ratio, critical });
    }
    let contraction = 2.0 / (g + 1.0);
    let p1 = stag.p0 * contraction.powf(g / (g - 1.0));
    let t1 = stag.t0 * contraction;
    let rho1 = stag.p0 * gas.m_h2 / (gas.r * stag.t0) * contraction.powf(1.0 / (g - 1.0));
    let u1 = (g * gas.r * t1 / gas.m_h2).sqrt();
    let a1 = std::f64::consts::PI * d_e * d_e / 4.0;
    Ok(ThroatState { p1, t1, rho1, u1, a1 })
}

/// Expands the sonic orifice state to ambient pressure.
///
/// The level-2 density is hydrogen at ambient pressure and temperature.
pub fn notional_exit(
    throat: &ThroatState,
    amb: &Ambient,
    gas: &GasConstants,
    d_e: f64,
) -> Result<NotionalExit> {
    if !(throat.rho1 > 0.0 && throat.u1 > 0.0) {
        return Err(Error::InvalidInput("throat density and velocity must be positive".into()));
    }
    if throat.p1 < amb.pressure {
        return Err(Error::InvalidInput(format!(
            "throat pressure {} Pa below ambient {} Pa",
            throat.p1, amb.pressure
        )));
    }
    let excess = throat.p1 - amb.pressure;
    let rho2 = amb.pressure * gas.m_h2 / (gas.r * amb.temperature);
    let flux = throat.rho1 * throat.u1;
    let u2 = throat.u1 + excess / flux;
    let a2 = flux * flux * throat.a1 / (rho2 * (excess + flux * throat.u1));
    let d_v = d_e * flux / (rho2 * (excess + flux * throat.u1)).sqrt();
    Ok(NotionalExit { d_v, u2, rho2, a2, p2: amb.pressure })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ten_bar() -> StagnationState {
        StagnationState { p0: 1.0e6, t0: 293.0 }
    }

    #[test]
    fn throat_matches_tabulated_release() {
        let t = choked_state(&ten_bar(), &GasConstants::default(), &Ambient::default(), 1e-3).unwrap();
        assert!((t.rho1 - 0.521).abs() / 0.521 < 0.02, "rho1 = {}", t.rho1);
        assert!((t.u1 - 1196.3).abs() / 1196.3 < 0.02, "u1 = {}", t.u1);
        assert!((t.p1 - 5.28e5).abs() / 5.28e5 < 2e-3, "p1 = {}", t.p1);
        assert!((t.t1 - 243.7).abs() < 0.1, "t1 = {}", t.t1);
        assert_relative_eq!(t.t1, 293.0 * 2.0 / 2.405, max_relative = 1e-9);
    }

    #[test]
    fn subcritical_pressure_rejected() {
        let err = choked_state(
            &StagnationState { p0: 1.5e5, t0: 293.0 },
            &GasConstants::default(),
            &Ambient::default(),
            1e-3,
        );
        assert!(matches!(err, Err(Error::NotChoked { .. })));
    }

    #[test]
    fn notional_exit_ten_bar_one_mm() {
        let gas = GasConstants::default();
        let amb = Ambient::default();
        let t = choked_state(&ten_bar(), &gas, &amb, 1e-3).unwrap();
        let n = notional_exit(&t, &amb, &gas, 1e-3).unwrap();
        assert!((n.d_v - 1.99e-3).abs() < 0.01e-3, "d_v = {}", n.d_v);
        assert!((n.u2 - 1872.0).abs() < 2.0, "u2 = {}", n.u2);
        assert_eq!(n.p2, amb.pressure);
        let m1 = t.rho1 * t.u1 * t.a1;
        let m2 = n.rho2 * n.u2 * n.a2;
        assert!(((m1 - m2) / m1).abs() < 1e-10);
        let dv_from_area = (4.0 * n.a2 / std::f64::consts::PI).sqrt();
        assert_relative_eq!(dv_from_area, n.d_v, max_relative = 1e-12);
    }

    #[test]
    fn limiting_case_without_pressure_excess() {
        let gas = GasConstants::default();
        let amb = Ambient::default();
        let t = ThroatState { p1: amb.pressure, t1: 250.0, rho1: 0.1, u1: 1100.0, a1: 1e-6 };
        let n = notional_exit(&t, &amb, &gas, 1.128e-3).unwrap();
        assert_eq!(n.u2, t.u1);
        assert_relative_eq!(n.d_v / 1.128e-3, (t.rho1 / n.rho2).sqrt(), max_relative = 1e-12);
        let low = ThroatState { p1: amb.pressure - 1.0, ..t };
        assert!(notional_exit(&low, &amb, &gas, 1e-3).is_err());
    }

    proptest! {
        #[test]
        fn conservation_across_expansion(bar in 3.0f64..100.0, d_mm in 0.2f64..10.0) {
            let gas = GasConstants::default();
            let amb = Ambient::default();
            let d = d_mm * 1e-3;
            let t = choked_state(&StagnationState { p0: bar * 1e5, t0: 293.0 }, &gas, &amb, d).unwrap();
            let n = notional_exit(&t, &amb, &gas, d).unwrap();
            let m1 = t.rho1 * t.u1 * t.a1;
            prop_assert!(((m1 - n.rho2 * n.u2 * n.a2) / m1).abs() < 1e-10);
            let j1 = t.rho1 * t.u1 * t.u1 * t.a1 + (t.p1 - amb.pressure) * t.a1;
            let j2 = n.rho2 * n.u2 * n.u2 * n.a2;
            prop_assert!(((j1 - j2) / j1).abs() < 1e-10);
            prop_assert!(n.d_v >= d);
            prop_assert!(n.u2 > t.u1);
        }
    }
}
