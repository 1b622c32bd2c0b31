//! Coefficient assembly for the integral centerline equations.
//!
//! Each system has the form `A(y) y' = r(y)`. The vertical system solves for
//! `(u', b', rho')`; the horizontal system adds `theta'`. Assembly is generic
//! over [`Real`] so the `f64` integrator and the training loss on the autodiff
//! tape share exactly the same rows.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::physics::{alpha2, momentum_entrainment, Ambient, GasConstants, NozzleState, SpreadingModel};
use crate::real::Real;

/// Scenario constants entering the centerline equations.
///
/// All fields are dimensional by default; [`JetPhysics::nondimensional`]
/// rescales them so the same assembly produces the nondimensional rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JetPhysics {
    pub rho_inf: f64,
    pub gravity: f64,
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha_cap: f64,
    pub alpha2: f64,
    /// Momentum entrainment, constant along the jet.
    pub e_mom: f64,
    /// Source density used in the local Froude number.
    pub rho_source: f64,
    /// `M_H2 / (M_air - M_H2)`
    pub species_ratio: f64,
    /// `P M_air / (R T)` of the ambient; equals `rho_inf` for an ideal gas.
    pub ambient_molar_density: f64,
}

impl JetPhysics {
    pub fn new(
        gas: &GasConstants,
        amb: &Ambient,
        spreading: &SpreadingModel,
        source: &NozzleState,
        fr_den: f64,
    ) -> Self {
        Self {
            rho_inf: amb.density,
            gravity: amb.gravity,
            lambda: spreading.lambda,
            lambda1: spreading.lambda1,
            lambda2: spreading.lambda2,
            alpha_cap: spreading.alpha_cap,
            alpha2: alpha2(fr_den),
            e_mom: momentum_entrainment(source, spreading),
            rho_source: source.density,
            species_ratio: gas.species_ratio(),
            // The species row carries p M_air / (R T); using rho_inf keeps it
            // consistent with the mass fraction computed from rho_inf.
            ambient_molar_density: amb.density,
        }
    }

    /// Rescales to velocity `u_ref`, length `l_ref` and density `rho_ref`.
    pub fn nondimensional(&self, u_ref: f64, l_ref: f64, rho_ref: f64) -> Self {
        Self {
            rho_inf: self.rho_inf / rho_ref,
            gravity: self.gravity * l_ref / (u_ref * u_ref),
            e_mom: self.e_mom / (u_ref * l_ref),
            rho_source: self.rho_source / rho_ref,
            ambient_molar_density: self.ambient_molar_density / rho_ref,
            ..*self
        }
    }

    /// Total entrainment with the `alpha <= alpha_cap` limit applied.
    pub fn entrainment<T: Real>(&self, u: T, b: T, rho: T) -> T {
        let deficit = rho.rsub(self.rho_inf);
        // alpha2 / Fr_1 * 2 pi u b, Fr_1 = u^2 rho_0 / (g b deficit)
        let e_buoy = deficit * b * b / u * (2.0 * PI * self.alpha2 * self.gravity / self.rho_source);
        let raw = e_buoy + self.e_mom;
        let cap = u * b * (2.0 * PI * self.alpha_cap);
        raw.min(&cap)
    }

    /// Mass fraction on the centerline from the density.
    pub fn mass_fraction<T: Real>(&self, rho: T) -> T {
        (rho.splat(self.rho_inf) / rho - 1.0) * self.species_ratio
    }

    fn continuity_row<T: Real>(&self, u: T, b: T, rho: T) -> ([T; 3], T) {
        let deficit = rho.rsub(self.rho_inf);
        let mixed = (deficit * -self.lambda1) + self.rho_inf;
        let e = self.entrainment(u, b, rho);
        (
            [b * b * mixed, u * b * mixed * 2.0, u * b * b * self.lambda1],
            e * (self.rho_inf / PI),
        )
    }

    fn species_row<T: Real>(&self, u: T, b: T, rho: T) -> [T; 3] {
        let y = self.mass_fraction(rho);
        let rho_y = rho * y;
        let drho = y - rho.splat(self.species_ratio * self.ambient_molar_density) / rho;
        [rho_y * b * b, u * rho_y * b * 2.0, u * b * b * drho]
    }

    /// Rows for the vertical jet; unknowns `(u', b', rho')`.
    pub fn vertical<T: Real>(&self, u: T, b: T, rho: T) -> ([[T; 3]; 3], [T; 3]) {
        let (mass, mass_rhs) = self.continuity_row(u, b, rho);
        let deficit_ratio = rho.rsub(self.rho_inf) / self.rho_inf;
        let k = (deficit_ratio * -self.lambda2) + 1.0;
        let momentum = [
            k * u * b * b,
            k * u * u * b,
            u * u * b * b * (0.5 * self.lambda2 / self.rho_inf),
        ];
        let momentum_rhs = deficit_ratio * b * b * (self.gravity * self.lambda * self.lambda);
        let species = self.species_row(u, b, rho);
        let zero = u.splat(0.0);
        ([mass, momentum, species], [mass_rhs, momentum_rhs, zero])
    }

    /// Rows for the horizontal jet; unknowns `(u', b', rho', theta')`.
    pub fn horizontal<T: Real>(&self, u: T, b: T, rho: T, theta: T) -> ([[T; 4]; 4], [T; 4]) {
        let zero = u.splat(0.0);
        let (mass, mass_rhs) = self.continuity_row(u, b, rho);
        let deficit_ratio = rho.rsub(self.rho_inf) / self.rho_inf;
        let k = (deficit_ratio * -self.lambda2) + 1.0;
        let (s, c) = (theta.sin(), theta.cos());
        let half_ub2 = u * u * b * b * 0.5;
        let drho_coef = half_ub2 * (self.lambda2 / self.rho_inf);
        let x_momentum = [
            k * u * c * b * b,
            k * u * u * c * b,
            drho_coef * c,
            -(k * half_ub2 * s),
        ];
        let z_momentum = [
            k * u * s * b * b,
            k * u * u * s * b,
            drho_coef * s,
            k * half_ub2 * c,
        ];
        let z_rhs = deficit_ratio * b * b * (self.gravity * self.lambda * self.lambda);
        let sp = self.species_row(u, b, rho);
        (
            [
                [mass[0], mass[1], mass[2], zero],
                x_momentum,
                z_momentum,
                [sp[0], sp[1], sp[2], zero],
            ],
            [mass_rhs, zero, z_rhs, zero],
        )
    }
}

/// `A y' - r` row by row.
pub fn residual<T: Real, const N: usize>(a: &[[T; N]; N], rhs: &[T; N], dy: &[T; N]) -> [T; N] {
    std::array::from_fn(|i| {
        let mut acc = a[i][0] * dy[0];
        for j in 1..N {
            acc = acc + a[i][j] * dy[j];
        }
        acc - rhs[i]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{entrainment, froude_number, JetState};
    use proptest::prelude::*;

    fn subsonic_physics() -> (JetPhysics, NozzleState, f64) {
        let amb = Ambient::default();
        let src = NozzleState {
            diameter: 1.905e-3,
            velocity: 263.1,
            density: 0.0838,
            pressure: amb.pressure,
            temperature: amb.temperature,
        };
        let fr = froude_number(&src, &amb).unwrap();
        (
            JetPhysics::new(&GasConstants::default(), &amb, &SpreadingModel::default(), &src, fr),
            src,
            fr,
        )
    }

    proptest! {
        #[test]
        fn generic_entrainment_matches_closure(u in 0.5f64..300.0, b in 1e-4f64..0.2, rho in 0.084f64..1.205) {
            let (phys, src, fr) = subsonic_physics();
            let st = JetState { s: 0.0, u_cl: u, b, rho_cl: rho, theta: 1.0, x: 0.0, z: 0.0 };
            let reference = entrainment(&st, &src, &SpreadingModel::default(), &Ambient::default(), fr).unwrap().e;
            let e = phys.entrainment(u, b, rho);
            prop_assert!((e - reference).abs() <= 1e-12 * reference);
        }

        #[test]
        fn horizontal_reduces_to_vertical(u in 0.5f64..300.0, b in 1e-4f64..0.2, rho in 0.084f64..1.205) {
            let (phys, _, _) = subsonic_physics();
            let (av, rv) = phys.vertical(u, b, rho);
            let (ah, rh) = phys.horizontal(u, b, rho, std::f64::consts::FRAC_PI_2);
            for j in 0..3 {
                prop_assert_eq!(av[0][j], ah[0][j]);
                prop_assert!((av[1][j] - ah[2][j]).abs() <= 1e-12 * av[1][j].abs().max(1e-300));
                prop_assert_eq!(av[2][j], ah[3][j]);
            }
            prop_assert!((rv[1] - rh[2]).abs() <= 1e-12 * rv[1].abs().max(1e-300));
        }
    }

    #[test]
    fn species_row_collapses_to_constant_slope() {
        let (phys, _, _) = subsonic_physics();
        let (u, b, rho) = (40.0, 0.01, 0.7);
        let (a, _) = phys.vertical(u, b, rho);
        let expected = -u * b * b * phys.species_ratio;
        assert!((a[2][2] - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn nondimensional_rows_are_scaled_copies() {
        let (phys, src, _) = subsonic_physics();
        let (u0, d, r0) = (src.velocity, src.diameter, 1.205);
        let nd = phys.nondimensional(u0, d, r0);
        let (u, b, rho) = (30.0, 0.02, 0.9);
        let (a, r) = phys.vertical(u, b, rho);
        let (an, rn) = nd.vertical(u / u0, b / d, rho / r0);
        // Row scale factors: continuity rho u d, momentum u^2 d, species rho u d.
        let row_scale = [r0 * u0 * d, u0 * u0 * d, r0 * u0 * d];
        // Column scales convert d/ds of each unknown: u0/d, 1, r0/d.
        let col_scale = [u0 / d, 1.0, r0 / d];
        for i in 0..3 {
            for j in 0..3 {
                let want = a[i][j] * col_scale[j] / row_scale[i];
                assert!((an[i][j] - want).abs() <= 1e-12 * want.abs(), "({i},{j})");
            }
            let want = r[i] / row_scale[i];
            assert!((rn[i] - want).abs() <= 1e-12 * want.abs().max(1e-300), "rhs {i}");
        }
    }
}
