mod common;

use h2jet::neural::{init_params, predict, Backbone, DerivativeMode};
use h2jet::oracle::Orientation;
use h2jet::physics::mole_fraction_from_density;
use h2jet::training::{physics_residuals, train, Problem, TrainConfig};
use h2jet::neural::{FieldDerivatives, FieldPrediction};

fn mean_square(rows: &[Vec<f64>]) -> f64 {
    let n: usize = rows.iter().map(Vec::len).sum();
    rows.iter().flatten().map(|r| r * r).sum::<f64>() / n as f64
}

#[test]
fn regression_only_fit_reaches_abundant_sensors() {
    let cfg = common::scenario("subsonic");
    let data = h2jet::experiment::ScenarioData::synthetic(cfg, 20, 20, 0.0, 0).unwrap();
    assert_eq!(data.sensors, data.eval);
    let mut tc = TrainConfig::new(Backbone::Graph);
    tc.weights.phy = 0.0;
    tc.epochs = 2000;
    let out = train(&tc, &data.config, &data.sensors, &data.eval).unwrap();
    let misfit = out.report.final_breakdown.re.sensor;
    assert!(misfit < 1e-4, "sensor misfit {misfit}");
    assert!(out.report.final_breakdown.total <= out.report.initial.total);
}

#[test]
fn oracle_fields_have_far_smaller_physics_loss_than_a_fresh_model() {
    for name in common::SCENARIOS {
        let data = common::synthetic(name);
        let tc = TrainConfig::new(Backbone::Graph);
        let problem = Problem::new(&data.config, &data.sensors, &data.eval, &tc).unwrap();
        let sc = problem.scales;
        let end = *problem.positions.last().unwrap();
        let at = |q: f64| sc.to_nondimensional(&data.trajectory.interpolate(q.clamp(0.0, end) * sc.l_ref).unwrap());
        let h = 1e-3;
        let mut pred = FieldPrediction { u: vec![], b: vec![], rho: vec![], theta: vec![] };
        let mut der = FieldDerivatives { du: vec![], db: vec![], drho: vec![], dtheta: vec![] };
        for &p in &problem.positions {
            let (lo, hi) = ((p - h).max(0.0), (p + h).min(end));
            let (m, a, b) = (at(p), at(lo), at(hi));
            let w = hi - lo;
            pred.u.push(m.u_cl);
            pred.b.push(m.b);
            pred.rho.push(m.rho_cl);
            pred.theta.push(m.theta);
            der.du.push((b.u_cl - a.u_cl) / w);
            der.db.push((b.b - a.b) / w);
            der.drho.push((b.rho_cl - a.rho_cl) / w);
            der.dtheta.push((b.theta - a.theta) / w);
        }
        let orient = data.config.orientation;
        let oracle = mean_square(&physics_residuals(&pred, &der, &problem.physics, orient).unwrap());

        let params = init_params(0, &tc.arch).unwrap();
        let plan = problem.plan(&params, DerivativeMode::Partial).unwrap();
        let (p, d) = predict(&plan, &params);
        let fresh = mean_square(&physics_residuals(&p, &d, &problem.physics, orient).unwrap());
        assert!(fresh > 100.0 * oracle, "{name}: oracle {oracle:.3e}, fresh model {fresh:.3e}");
        let eqs = if orient == Orientation::Vertical { 3 } else { 4 };
        assert_eq!(d.du.len(), problem.n());
        assert!(physics_residuals(&pred, &der, &problem.physics, orient).unwrap().iter().all(|r| r.len() == eqs));
        println!("{name}: oracle {oracle:.3e}, fresh model {fresh:.3e}");
    }
}

#[test]
fn mse_is_the_same_in_either_unit_system() {
    let data = common::synthetic("under_expanded_vertical");
    let mut tc = TrainConfig::new(Backbone::Dense);
    tc.epochs = 200;
    let out = train(&tc, &data.config, &data.sensors, &data.eval).unwrap();
    let amb = &data.config.ambient;
    let gas = &data.config.gas;
    let physical: f64 = out
        .predictions
        .iter()
        .zip(&data.eval)
        .map(|(p, r)| (100.0 * mole_fraction_from_density(p.rho, amb, gas) - r.mole_frac_pct).powi(2))
        .sum::<f64>()
        / data.eval.len() as f64;
    let reported = out.report.mse.unwrap().mole_pct2;
    assert!((physical - reported).abs() <= 1e-10 * reported.max(1e-12), "{physical} vs {reported}");
}
