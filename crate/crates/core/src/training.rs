//! Losses, optimizer and training loop for the physics-informed networks.
//!
//! Everything runs in nondimensional units: velocities over the source exit
//! velocity, lengths over the source diameter, densities over the ambient
//! density.

use std::rc::Rc;
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, SparseMatrix, Tape, Var};
use crate::equations::{residual, JetPhysics};
use crate::error::{Error, Result};
use crate::neural::{
    build_chain_graph, init_params, predict, Architecture, Backbone, CoordinateMap, DerivativeMode, FeatureMode,
    FieldPrediction, ForwardPlan, Graph, ModelParams, NodeFeatures, OutputTransform, ParamVars,
};
use crate::oracle::{integrate, Orientation, ScenarioConfig, SensorReading, StepControl};
use crate::physics::JetState;
use crate::real::Real;

/// Reference scales of the nondimensionalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub u_ref: f64,
    pub l_ref: f64,
    pub rho_ref: f64,
}

/// Source exit velocity, source diameter and ambient density.
pub fn nondimensionalize(cfg: &ScenarioConfig) -> Scales {
    Scales { u_ref: cfg.source.velocity, l_ref: cfg.source.diameter, rho_ref: cfg.ambient.density }
}

impl Scales {
    pub fn validate(&self) -> Result<()> {
        if !(self.u_ref > 0.0 && self.l_ref > 0.0 && self.rho_ref > 0.0) {
            return Err(Error::InvalidInput(format!("scales must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn to_nondimensional(&self, st: &JetState) -> JetState {
        JetState {
            s: st.s / self.l_ref,
            u_cl: st.u_cl / self.u_ref,
            b: st.b / self.l_ref,
            rho_cl: st.rho_cl / self.rho_ref,
            theta: st.theta,
            x: st.x / self.l_ref,
            z: st.z / self.l_ref,
        }
    }

    pub fn to_physical(&self, st: &JetState) -> JetState {
        JetState {
            s: st.s * self.l_ref,
            u_cl: st.u_cl * self.u_ref,
            b: st.b * self.l_ref,
            rho_cl: st.rho_cl * self.rho_ref,
            theta: st.theta,
            x: st.x * self.l_ref,
            z: st.z * self.l_ref,
        }
    }

    pub fn physics(&self, cfg: &ScenarioConfig) -> JetPhysics {
        cfg.physics().nondimensional(self.u_ref, self.l_ref, self.rho_ref)
    }
}

/// Equation rows and right-hand sides as plain vectors, for either
/// orientation.
pub fn assemble<T: Real>(phys: &JetPhysics, orientation: Orientation, y: [T; 4]) -> (Vec<Vec<T>>, Vec<T>) {
    let [u, b, rho, theta] = y;
    match orientation {
        Orientation::Vertical => {
            let (a, r) = phys.vertical(u, b, rho);
            (a.iter().map(|row| row.to_vec()).collect(), r.to_vec())
        }
        Orientation::Horizontal => {
            let (a, r) = phys.horizontal(u, b, rho, theta);
            (a.iter().map(|row| row.to_vec()).collect(), r.to_vec())
        }
    }
}

pub fn equation_count(orientation: Orientation) -> usize {
    match orientation {
        Orientation::Vertical => 3,
        Orientation::Horizontal => 4,
    }
}

pub fn equation_names(orientation: Orientation) -> &'static [&'static str] {
    match orientation {
        Orientation::Vertical => &["continuity", "momentum", "species"],
        Orientation::Horizontal => &["continuity", "x_momentum", "z_momentum", "species"],
    }
}

/// `A(y) y' - r(y)` at one node.
pub fn node_residual<T: Real>(phys: &JetPhysics, orientation: Orientation, y: [T; 4], dy: [T; 4]) -> Vec<T> {
    let (a, r) = assemble(phys, orientation, y);
    match orientation {
        Orientation::Vertical => {
            let a: [[T; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| a[i][j]));
            residual(&a, &[r[0], r[1], r[2]], &[dy[0], dy[1], dy[2]]).to_vec()
        }
        Orientation::Horizontal => {
            let a: [[T; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| a[i][j]));
            residual(&a, &[r[0], r[1], r[2], r[3]], &dy).to_vec()
        }
    }
}

/// Residual matrix (nodes x equations) of a prediction in nondimensional
/// units.
pub fn physics_residuals(
    pred: &FieldPrediction,
    derivs: &crate::neural::FieldDerivatives,
    phys: &JetPhysics,
    orientation: Orientation,
) -> Result<Vec<Vec<f64>>> {
    let n = pred.n();
    if derivs.du.len() != n {
        return Err(Error::Shape(format!("{} derivative rows for {n} nodes", derivs.du.len())));
    }
    (0..n)
        .map(|i| {
            let y = [pred.u[i], pred.b[i], pred.rho[i], pred.theta[i]];
            let r = node_residual(phys, orientation, y, derivs.at(i)?);
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("physics residual at node {i}")));
            }
            Ok(r)
        })
        .collect()
}

/// Row weights applied to the residual before squaring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualScaling {
    None,
    /// Each row divided by its flux scale (`rho_inf u b^2` for mass,
    /// `u^2 b^2` for momentum, `rho_inf c u b^2` for species) and multiplied
    /// by `1 + s/d`, which turns the rows into logarithmic derivatives of
    /// comparable size along the whole jet.
    Local,
}

/// Divisors of the residual rows under [`ResidualScaling::Local`], before
/// the `1 + s/d` factor.
pub fn row_normalizers<T: Real>(phys: &JetPhysics, orientation: Orientation, u: T, b: T) -> Vec<T> {
    let flux = u * b * b;
    let mass = flux * phys.rho_inf;
    let momentum = flux * u;
    let species = flux * (phys.rho_inf * phys.species_ratio);
    match orientation {
        Orientation::Vertical => vec![mass, momentum, species],
        Orientation::Horizontal => vec![mass, momentum, momentum, species],
    }
}

/// Residual rows at one node after [`ResidualScaling::Local`].
pub fn scaled_node_residual<T: Real>(
    phys: &JetPhysics,
    orientation: Orientation,
    y: [T; 4],
    dy: [T; 4],
    s_over_d: f64,
) -> Vec<T> {
    let r = node_residual(phys, orientation, y, dy);
    let norms = row_normalizers(phys, orientation, y[0], y[1]);
    r.into_iter().zip(norms).map(|(r, n)| r / n * (1.0 + s_over_d)).collect()
}

/// Observation and anchor values for the regression loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    /// `(node index, rho / rho_inf)`
    pub sensors: Vec<(usize, f64)>,
    /// Source velocity anchor at the first node.
    pub u0: Option<f64>,
    /// Boundary velocity anchor at the last node.
    pub u_b: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionTerms {
    pub sensor: f64,
    pub u0: f64,
    pub u_b: f64,
}

impl RegressionTerms {
    pub fn sum(&self) -> f64 {
        self.sensor + self.u0 + self.u_b
    }
}

/// Mean sensor density misfit plus the two velocity anchors.
pub fn regression_loss(pred: &FieldPrediction, obs: &Observations) -> Result<RegressionTerms> {
    if obs.sensors.is_empty() {
        return Err(Error::NoSensors);
    }
    let n = pred.n();
    let mut sensor = 0.0;
    for &(i, rho) in &obs.sensors {
        if i >= n {
            return Err(Error::InvalidInput(format!("sensor index {i} out of range for {n} nodes")));
        }
        sensor += (pred.rho[i] - rho).powi(2);
    }
    sensor /= obs.sensors.len() as f64;
    let u0 = obs.u0.map_or(0.0, |v| (pred.u[0] - v).powi(2));
    let u_b = obs.u_b.map_or(0.0, |v| (pred.u[n - 1] - v).powi(2));
    Ok(RegressionTerms { sensor, u0, u_b })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub phy: f64,
    pub re: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { phy: 1.0, re: 1.0 }
    }
}

/// Weighted loss terms; `total = phy_total + re_total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Weighted physics loss per equation.
    pub phy: Vec<f64>,
    pub phy_total: f64,
    /// Unweighted regression terms.
    pub re: RegressionTerms,
    pub re_total: f64,
    pub total: f64,
}

/// Combines a residual matrix and regression terms.
pub fn total_loss(residuals: &[Vec<f64>], re: RegressionTerms, weights: LossWeights) -> LossBreakdown {
    let n = residuals.len().max(1) as f64;
    let eqs = residuals.first().map_or(0, Vec::len);
    let phy: Vec<f64> =
        (0..eqs).map(|j| weights.phy * residuals.iter().map(|r| r[j] * r[j]).sum::<f64>() / n).collect();
    let phy_total = phy.iter().sum();
    let re_total = weights.re * re.sum();
    LossBreakdown { phy, phy_total, re, re_total, total: phy_total + re_total }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl AdamState {
    pub fn new(shapes: &[&Matrix]) -> Self {
        let zeros: Vec<Matrix> = shapes.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut Matrix], grads: &[Matrix], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!("{} parameters, {} gradients", params.len(), grads.len())));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of parameter tensor {i}")));
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t);
    let c2 = 1.0 - cfg.beta2.powi(state.t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("gradient shape {:?} for parameter {:?}", g.shape(), p.shape())));
        }
        for (((pv, &gv), mv), vv) in
            p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
        {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            *pv -= cfg.lr * (*mv / c1) / ((*vv / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Source of the boundary velocity anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryAnchor {
    /// The oracle trajectory's last node.
    Oracle,
    /// A user-supplied value, m/s.
    Value(f64),
    Omit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub arch: Architecture,
    pub k_neighbors: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub seed: u64,
    pub collocation: usize,
    pub coordinates: CoordinateMap,
    pub derivatives: DerivativeMode,
    pub scaling: ResidualScaling,
    pub boundary: BoundaryAnchor,
}

impl TrainConfig {
    pub fn new(kind: Backbone) -> Self {
        Self {
            epochs: 10_000,
            arch: Architecture::new(kind),
            k_neighbors: 1,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            seed: 0,
            collocation: 100,
            coordinates: CoordinateMap::Log,
            derivatives: DerivativeMode::Partial,
            scaling: ResidualScaling::Local,
            boundary: BoundaryAnchor::Oracle,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.weights.phy >= 0.0 && self.weights.re >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.collocation < 2 {
            return Err(Error::Config("at least two collocation nodes are required".into()));
        }
        Ok(())
    }
}

/// Node layout, features and observations for one scenario.
pub struct Problem {
    pub scenario: ScenarioConfig,
    pub scales: Scales,
    pub physics: JetPhysics,
    /// Node positions in `s/d`.
    pub positions: Vec<f64>,
    pub graph: Graph,
    pub features: NodeFeatures,
    pub observations: Observations,
    /// Node index of each evaluation reading, in input order.
    pub eval_nodes: Vec<usize>,
    pub transform: OutputTransform,
}

/// Index of `p` in sorted `nodes`, matched within a relative tolerance.
fn locate(nodes: &[f64], p: f64, tol: f64) -> Option<usize> {
    let i = nodes.partition_point(|&x| x < p - tol);
    (i < nodes.len() && (nodes[i] - p).abs() <= tol).then_some(i)
}

impl Problem {
    pub fn new(
        scenario: &ScenarioConfig,
        sensors: &[SensorReading],
        eval: &[SensorReading],
        tc: &TrainConfig,
    ) -> Result<Self> {
        scenario.validate()?;
        tc.validate()?;
        if sensors.is_empty() {
            return Err(Error::NoSensors);
        }
        let scales = nondimensionalize(scenario);
        scales.validate()?;
        let span = scenario.s_end_over_d();
        let tol = 1e-9 * span;
        for r in sensors.iter().chain(eval) {
            if !(r.s_over_d >= -tol && r.s_over_d <= span + tol) {
                return Err(Error::OutOfRange { position: r.s_over_d, min: 0.0, max: span });
            }
        }
        let mut positions: Vec<f64> =
            (0..tc.collocation).map(|i| span * i as f64 / (tc.collocation - 1) as f64).collect();
        positions.extend(sensors.iter().chain(eval).map(|r| r.s_over_d.clamp(0.0, span)));
        positions.sort_by(f64::total_cmp);
        positions.dedup_by(|a, b| (*a - *b).abs() <= tol);
        let find = |p: f64| locate(&positions, p.clamp(0.0, span), tol).expect("position inserted above");
        let sensor_obs: Vec<(usize, f64)> =
            sensors.iter().map(|r| (find(r.s_over_d), r.rho_cl / scales.rho_ref)).collect();
        let eval_nodes = eval.iter().map(|r| find(r.s_over_d)).collect();
        let mut graph = build_chain_graph(&positions, tc.k_neighbors)?;
        graph.mark_sensors(&sensor_obs.iter().map(|o| o.0).collect::<Vec<_>>())?;
        let features = NodeFeatures::build(&positions, &sensor_obs, tc.coordinates, span, tc.arch.features)?;
        let u_b = match tc.boundary {
            BoundaryAnchor::Oracle => {
                let traj = integrate(scenario, &StepControl::for_scenario(scenario))?;
                Some(traj.states.last().expect("non-empty trajectory").u_cl / scales.u_ref)
            }
            BoundaryAnchor::Value(v) => Some(v / scales.u_ref),
            BoundaryAnchor::Omit => None,
        };
        let physics = scales.physics(scenario);
        let transform = OutputTransform {
            u_scale: 1.0,
            // Gaussian jets spread at roughly 0.1 b per unit length.
            b_scale: (0.1 * span).max(0.5),
            rho_source: scenario.source.density / scales.rho_ref,
            theta: match scenario.orientation {
                Orientation::Vertical => Some(std::f64::consts::FRAC_PI_2),
                Orientation::Horizontal => None,
            },
        };
        Ok(Self {
            scenario: scenario.clone(),
            scales,
            physics,
            positions,
            graph,
            features,
            observations: Observations { sensors: sensor_obs, u0: Some(1.0), u_b },
            eval_nodes,
            transform,
        })
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn plan(&self, params: &ModelParams, mode: DerivativeMode) -> Result<ForwardPlan> {
        let graph = (params.arch.kind == Backbone::Graph).then_some(&self.graph);
        ForwardPlan::new(params, graph, &self.features, self.transform, mode)
    }
}

/// Scalar loss terms recorded on the tape.
struct TapeLoss<'t> {
    phy: Vec<Var<'t>>,
    sensor: Var<'t>,
    u0: Var<'t>,
    u_b: Var<'t>,
    total: Var<'t>,
}

fn column_constant(tape: &Tape, v: Vec<f64>) -> Var<'_> {
    tape.constant(Matrix::column(v))
}

fn loss_on_tape<'t>(
    tape: &'t Tape,
    problem: &Problem,
    plan: &ForwardPlan,
    vars: &ParamVars<'t>,
    tc: &TrainConfig,
    selectors: &Selectors,
) -> TapeLoss<'t> {
    let h = plan.heads(vars);
    let orient = problem.scenario.orientation;
    let (a, rhs) = assemble(&problem.physics, orient, [h.u, h.b, h.rho, h.theta]);
    let dy = [h.du, h.db, h.drho, h.dtheta];
    let eqs = a.len();
    let row_factors = match tc.scaling {
        ResidualScaling::None => None,
        ResidualScaling::Local => Some((
            row_normalizers(&problem.physics, orient, h.u, h.b),
            column_constant(tape, problem.positions.iter().map(|s| 1.0 + s).collect()),
        )),
    };
    let phy: Vec<Var<'t>> = (0..eqs)
        .map(|i| {
            let mut r = a[i][0] * dy[0];
            for j in 1..eqs {
                r = r + a[i][j] * dy[j];
            }
            r = r - rhs[i];
            if let Some((norms, stretch)) = &row_factors {
                r = r / norms[i] * *stretch;
            }
            r.square().mean() * tc.weights.phy
        })
        .collect();
    let obs = &problem.observations;
    let targets = column_constant(tape, obs.sensors.iter().map(|o| o.1).collect());
    let sensor = (h.rho.sparse(&selectors.sensors) - targets).square().mean();
    let anchor = |sel: &Rc<SparseMatrix>, v: Option<f64>| match v {
        Some(v) => (h.u.sparse(sel) - v).square().sum(),
        None => tape.constant(Matrix::scalar(0.0)),
    };
    let u0 = anchor(&selectors.first, obs.u0);
    let u_b = anchor(&selectors.last, obs.u_b);
    let mut total = (sensor + u0 + u_b) * tc.weights.re;
    for p in &phy {
        total = total + *p;
    }
    TapeLoss { phy, sensor, u0, u_b, total }
}

struct Selectors {
    sensors: Rc<SparseMatrix>,
    first: Rc<SparseMatrix>,
    last: Rc<SparseMatrix>,
}

impl Selectors {
    fn new(problem: &Problem) -> Self {
        let n = problem.n();
        let idx: Vec<usize> = problem.observations.sensors.iter().map(|o| o.0).collect();
        Self {
            sensors: Rc::new(SparseMatrix::selection(n, &idx)),
            first: Rc::new(SparseMatrix::selection(n, &[0])),
            last: Rc::new(SparseMatrix::selection(n, &[n - 1])),
        }
    }
}

fn breakdown(loss: &TapeLoss<'_>, weights: LossWeights) -> LossBreakdown {
    let phy: Vec<f64> = loss.phy.iter().map(|v| v.scalar()).collect();
    let phy_total = phy.iter().sum();
    let re = RegressionTerms { sensor: loss.sensor.scalar(), u0: loss.u0.scalar(), u_b: loss.u_b.scalar() };
    let re_total = weights.re * re.sum();
    LossBreakdown { phy, phy_total, re, re_total, total: loss.total.scalar() }
}

/// Loss and parameter gradients at the given parameters.
pub fn loss_and_gradients(
    problem: &Problem,
    plan: &ForwardPlan,
    params: &ModelParams,
    tc: &TrainConfig,
) -> Result<(LossBreakdown, Vec<Matrix>)> {
    let tape = Tape::new();
    let vars = ParamVars::trainable(&tape, params);
    let loss = loss_on_tape(&tape, problem, plan, &vars, tc, &Selectors::new(problem));
    let grads = tape.backward(loss.total)?;
    Ok((breakdown(&loss, tc.weights), grads.into_params()))
}

/// Loss at the given parameters without gradients.
pub fn evaluate_loss(problem: &Problem, params: &ModelParams, tc: &TrainConfig) -> Result<LossBreakdown> {
    let plan = problem.plan(params, tc.derivatives)?;
    let tape = Tape::new();
    let vars = ParamVars::fixed(&tape, params);
    let loss = loss_on_tape(&tape, problem, &plan, &vars, tc, &Selectors::new(problem));
    Ok(breakdown(&loss, tc.weights))
}

/// Mean squared concentration error in two unit systems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsePair {
    /// Mole fraction in percent, squared.
    pub mole_pct2: f64,
    pub mass_frac2: f64,
}

/// Predicted concentration at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPrediction {
    pub s_over_d: f64,
    pub mole_frac_pct: f64,
    pub mass_frac: f64,
    pub u: f64,
    pub b: f64,
    pub rho: f64,
    pub theta: f64,
}

fn point_at(problem: &Problem, pred: &FieldPrediction, i: usize) -> PointPrediction {
    let gas = &problem.scenario.gas;
    let rho_hat = pred.rho[i];
    PointPrediction {
        s_over_d: problem.positions[i],
        mole_frac_pct: 100.0 * (1.0 - rho_hat) / (1.0 - gas.m_h2 / gas.m_air),
        mass_frac: problem.physics.mass_fraction(rho_hat),
        u: pred.u[i] * problem.scales.u_ref,
        b: pred.b[i] * problem.scales.l_ref,
        rho: rho_hat * problem.scales.rho_ref,
        theta: pred.theta[i],
    }
}

/// Physical-unit predictions at every node.
pub fn node_predictions(problem: &Problem, params: &ModelParams) -> Result<Vec<PointPrediction>> {
    let plan = problem.plan(params, DerivativeMode::Total)?;
    let (pred, _) = predict(&plan, params);
    Ok((0..problem.n()).map(|i| point_at(problem, &pred, i)).collect())
}

/// MSE of the predictions at the evaluation nodes against reference
/// readings given in the same order as when the problem was built.
pub fn evaluate_mse(problem: &Problem, params: &ModelParams, eval: &[SensorReading]) -> Result<(MsePair, Vec<PointPrediction>)> {
    if eval.len() != problem.eval_nodes.len() {
        return Err(Error::Shape(format!(
            "{} evaluation readings, problem built with {}",
            eval.len(),
            problem.eval_nodes.len()
        )));
    }
    if eval.is_empty() {
        return Err(Error::InvalidInput("no evaluation points".into()));
    }
    let all = node_predictions(problem, params)?;
    let points: Vec<PointPrediction> = problem.eval_nodes.iter().map(|&i| all[i]).collect();
    Ok((mse(&points, eval), points))
}

pub fn mse(points: &[PointPrediction], reference: &[SensorReading]) -> MsePair {
    let n = reference.len() as f64;
    let (mut a, mut b) = (0.0, 0.0);
    for (p, r) in points.iter().zip(reference) {
        a += (p.mole_frac_pct - r.mole_frac_pct).powi(2);
        b += (p.mass_frac - r.mass_frac).powi(2);
    }
    MsePair { mole_pct2: a / n, mass_frac2: b / n }
}

pub const HISTORY_STRIDE: usize = 10;
const DIVERGENCE_FACTOR: f64 = 1e6;
const DIVERGENCE_PATIENCE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub scenario: String,
    pub backbone: Backbone,
    pub seed: u64,
    pub config: TrainConfig,
    pub nodes: usize,
    pub parameters: usize,
    /// Total loss at every epoch, before that epoch's update.
    pub loss_history: Vec<f64>,
    pub initial: LossBreakdown,
    /// Loss at the returned parameters.
    pub final_breakdown: LossBreakdown,
    pub mse: Option<MsePair>,
    pub train_seconds: f64,
    pub inference_seconds: f64,
}

/// The reproducible part of a [`TrainReport`]: no wall-clock fields, loss
/// history thinned to every [`HISTORY_STRIDE`]-th epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub software_version: String,
    pub scenario: String,
    pub backbone: Backbone,
    pub seed: u64,
    pub config: TrainConfig,
    pub nodes: usize,
    pub parameters: usize,
    pub loss_history: Vec<(usize, f64)>,
    pub initial: LossBreakdown,
    pub final_breakdown: LossBreakdown,
    pub mse: Option<MsePair>,
}

impl TrainReport {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            scenario: self.scenario.clone(),
            backbone: self.backbone,
            seed: self.seed,
            config: self.config,
            nodes: self.nodes,
            parameters: self.parameters,
            loss_history: self.history_downsampled(),
            initial: self.initial.clone(),
            final_breakdown: self.final_breakdown.clone(),
            mse: self.mse,
        }
    }

    /// Every [`HISTORY_STRIDE`]-th epoch plus the last.
    pub fn history_downsampled(&self) -> Vec<(usize, f64)> {
        let n = self.loss_history.len();
        let mut out: Vec<(usize, f64)> =
            (0..n).step_by(HISTORY_STRIDE).map(|e| (e, self.loss_history[e])).collect();
        if n > 0 && (n - 1) % HISTORY_STRIDE != 0 {
            out.push((n - 1, self.loss_history[n - 1]));
        }
        out
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub report: TrainReport,
    pub problem: Problem,
    pub predictions: Vec<PointPrediction>,
}

/// Full-batch training followed by evaluation at `eval`.
pub fn train(
    tc: &TrainConfig,
    scenario: &ScenarioConfig,
    sensors: &[SensorReading],
    eval: &[SensorReading],
) -> Result<TrainOutcome> {
    train_observed(tc, scenario, sensors, eval, |_, _| {})
}

/// [`train`] with a callback receiving every epoch's loss breakdown before
/// the update.
pub fn train_observed(
    tc: &TrainConfig,
    scenario: &ScenarioConfig,
    sensors: &[SensorReading],
    eval: &[SensorReading],
    mut observe: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let problem = Problem::new(scenario, sensors, eval, tc)?;
    let mut params = init_params(tc.seed, &tc.arch)?;
    let plan = problem.plan(&params, tc.derivatives)?;
    let selectors = Selectors::new(&problem);
    let mut state = AdamState::new(&params.tensors().iter().map(|(_, m)| *m).collect::<Vec<_>>());
    let mut history = Vec::with_capacity(tc.epochs);
    let mut initial: Option<LossBreakdown> = None;
    let mut above = 0usize;
    info!(
        "training {} backbone on '{}' ({} nodes, {} parameters, seed {})",
        tc.arch.kind.name(),
        scenario.name,
        problem.n(),
        params.num_params(),
        tc.seed
    );
    for epoch in 0..tc.epochs {
        let tape = Tape::new();
        let vars = ParamVars::trainable(&tape, &params);
        let loss = loss_on_tape(&tape, &problem, &plan, &vars, tc, &selectors);
        let current = breakdown(&loss, tc.weights);
        observe(epoch, &current);
        let total = current.total;
        let first = initial.get_or_insert(current).total;
        history.push(total);
        let diverged = |loss: f64| Error::Diverged { epoch, loss, initial: first };
        if !total.is_finite() {
            return Err(diverged(total));
        }
        if total > DIVERGENCE_FACTOR * first {
            above += 1;
            if above >= DIVERGENCE_PATIENCE {
                return Err(diverged(total));
            }
        } else {
            above = 0;
        }
        let grads = match tape.backward(loss.total) {
            Ok(g) => g.into_params(),
            Err(_) => return Err(diverged(total)),
        };
        drop(vars);
        if epoch % 1000 == 0 {
            debug!("epoch {epoch}: loss {total:.6e}");
        }
        if adam_step(&mut params.tensors_mut(), &grads, &mut state, &tc.adam).is_err() {
            return Err(diverged(total));
        }
    }
    let final_breakdown = evaluate_loss(&problem, &params, tc)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let t_inf = Instant::now();
    let (mse, predictions) = if eval.is_empty() {
        (None, node_predictions(&problem, &params)?)
    } else {
        let (m, p) = evaluate_mse(&problem, &params, eval)?;
        (Some(m), p)
    };
    let inference_seconds = t_inf.elapsed().as_secs_f64();
    let report = TrainReport {
        scenario: scenario.name.clone(),
        backbone: tc.arch.kind,
        seed: tc.seed,
        config: *tc,
        nodes: problem.n(),
        parameters: params.num_params(),
        loss_history: history,
        initial: initial.expect("at least one epoch"),
        final_breakdown,
        mse,
        train_seconds,
        inference_seconds,
    };
    Ok(TrainOutcome { params, report, problem, predictions })
}

impl TrainConfig {
    /// Uses `features` for the graph backbone; the dense backbone always
    /// sees the coordinate alone.
    pub fn with_features(mut self, features: FeatureMode) -> Self {
        self.arch.features = features;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{sample_positions, sample_sensors, uniform_positions, Trajectory};
    use crate::physics::{Ambient, GasConstants, NozzleState, SpreadingModel};

    fn subsonic() -> ScenarioConfig {
        let amb = Ambient::default();
        let src = NozzleState {
            diameter: 1.905e-3,
            velocity: 263.1,
            density: 0.0838,
            pressure: amb.pressure,
            temperature: amb.temperature,
        };
        ScenarioConfig::subsonic(
            "subsonic",
            GasConstants::default(),
            amb,
            SpreadingModel::default(),
            src,
            Orientation::Vertical,
            150.0,
        )
        .unwrap()
    }

    fn data(cfg: &ScenarioConfig) -> (Trajectory, Vec<SensorReading>, Vec<SensorReading>) {
        let traj = integrate(cfg, &StepControl::for_scenario(cfg)).unwrap();
        let pos = uniform_positions(cfg, 20);
        let eval = sample_positions(&traj, cfg, &pos).unwrap();
        let sensors = sample_sensors(&traj, cfg, &pos, 5, 0.0, 0).unwrap();
        (traj, sensors, eval)
    }

    #[test]
    fn scales_round_trip() {
        let cfg = subsonic();
        let s = nondimensionalize(&cfg);
        assert_eq!((s.u_ref, s.l_ref, s.rho_ref), (263.1, 1.905e-3, 1.205));
        let st = JetState { s: 0.1, u_cl: 30.0, b: 0.004, rho_cl: 0.9, theta: 1.2, x: 0.01, z: 0.09 };
        let back = s.to_physical(&s.to_nondimensional(&st));
        for (a, b) in [(st.s, back.s), (st.u_cl, back.u_cl), (st.b, back.b), (st.rho_cl, back.rho_cl), (st.z, back.z)] {
            assert!((a - b).abs() <= 1e-14 * a.abs());
        }
    }

    #[test]
    fn exact_derivatives_give_zero_residual() {
        let cfg = subsonic();
        let phys = nondimensionalize(&cfg).physics(&cfg);
        let y = [0.3, 4.0, 0.8, std::f64::consts::FRAC_PI_2];
        let (a, r) = phys.vertical(y[0], y[1], y[2]);
        let dy = crate::linalg::solve(&a, &r).unwrap();
        let res = node_residual(&phys, Orientation::Vertical, y, [dy[0], dy[1], dy[2], 0.0]);
        assert!(res.iter().all(|v| v.abs() < 1e-12), "{res:?}");
    }

    #[test]
    fn regression_loss_examples() {
        let pred = FieldPrediction { u: vec![1.0, 0.5, 0.2], b: vec![1.0; 3], rho: vec![0.1, 0.5, 0.9], theta: vec![0.0; 3] };
        let exact = Observations { sensors: vec![(1, 0.5), (2, 0.9)], u0: Some(1.0), u_b: Some(0.2) };
        assert_eq!(regression_loss(&pred, &exact).unwrap().sum(), 0.0);
        let shifted = Observations { sensors: vec![(1, 0.5 - 0.01), (2, 0.9 - 0.01)], ..exact.clone() };
        assert!((regression_loss(&pred, &shifted).unwrap().sum() - 1e-4).abs() < 1e-15);
        let none = Observations { sensors: vec![], ..exact };
        assert!(matches!(regression_loss(&pred, &none), Err(Error::NoSensors)));
    }

    #[test]
    fn total_loss_is_additive_and_linear() {
        let res = vec![vec![0.1, -0.2, 0.3], vec![0.0, 0.4, -0.1]];
        let re = RegressionTerms { sensor: 0.01, u0: 0.02, u_b: 0.03 };
        let a = total_loss(&res, re, LossWeights::default());
        assert!((a.total - (a.phy_total + a.re_total)).abs() < 1e-15);
        assert!((a.re_total - 0.06).abs() < 1e-15);
        let b = total_loss(&res, re, LossWeights { phy: 2.0, re: 1.0 });
        assert!((b.phy_total - 2.0 * a.phy_total).abs() < 1e-15 && b.re_total == a.re_total);
        let zero = total_loss(&[vec![0.0; 3]], RegressionTerms { sensor: 0.0, u0: 0.0, u_b: 0.0 }, LossWeights::default());
        assert_eq!(zero.total, 0.0);
    }

    #[test]
    fn adam_examples() {
        let mut w = Matrix::scalar(1.0);
        let mut st = AdamState::new(&[&w]);
        adam_step(&mut [&mut w], &[Matrix::scalar(0.0)], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(w.data()[0], 1.0);
        // f(w) = w^2 from w = 1 at lr 0.1: compare with a direct scalar
        // recurrence. Adam overshoots the minimum, so the decrease is net
        // rather than monotone.
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut w = Matrix::scalar(1.0);
        let mut st = AdamState::new(&[&w]);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=50 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            x -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            let grad = Matrix::scalar(2.0 * w.data()[0]);
            adam_step(&mut [&mut w], &[grad], &mut st, &cfg).unwrap();
            assert!((w.data()[0] - x).abs() <= 1e-15, "step {t}");
            if t <= 10 {
                assert!(x * x < 1.0 - 0.01 * t as f64);
            }
        }
        assert!(w.data()[0].powi(2) < 1e-3);
        let bad = adam_step(&mut [&mut w], &[Matrix::scalar(f64::NAN)], &mut st, &cfg);
        assert!(bad.is_err());
    }

    #[test]
    fn oracle_fields_satisfy_the_residual() {
        let cfg = subsonic();
        let (traj, sensors, eval) = data(&cfg);
        let tc = TrainConfig::new(Backbone::Dense);
        let problem = Problem::new(&cfg, &sensors, &eval, &tc).unwrap();
        let sc = problem.scales;
        let d = sc.l_ref;
        // Interior nodes beyond the first few diameters, central differences.
        let h = 1e-3;
        let mut worst = 0.0f64;
        for &p in problem.positions.iter().filter(|&&p| p > 5.0 && p < 145.0) {
            let at = |q: f64| sc.to_nondimensional(&traj.interpolate(q * d).unwrap());
            let (m, lo, hi) = (at(p), at(p - h), at(p + h));
            let dy = [(hi.u_cl - lo.u_cl) / (2.0 * h), (hi.b - lo.b) / (2.0 * h), (hi.rho_cl - lo.rho_cl) / (2.0 * h), 0.0];
            let r = node_residual(&problem.physics, Orientation::Vertical, [m.u_cl, m.b, m.rho_cl, m.theta], dy);
            worst = r.iter().fold(worst, |w, v| w.max(v.abs()));
        }
        assert!(worst < 1e-3, "max residual {worst}");
    }

    #[test]
    fn perturbing_velocity_increases_residual() {
        let cfg = subsonic();
        let phys = nondimensionalize(&cfg).physics(&cfg);
        let y = [0.2, 6.0, 0.95, std::f64::consts::FRAC_PI_2];
        let (a, r) = phys.vertical(y[0], y[1], y[2]);
        let dy = crate::linalg::solve(&a, &r).unwrap();
        let dy = [dy[0], dy[1], dy[2], 0.0];
        let base: f64 = node_residual(&phys, Orientation::Vertical, y, dy).iter().map(|v| v * v).sum();
        let bumped: f64 = node_residual(&phys, Orientation::Vertical, [y[0] * 1.1, y[1], y[2], y[3]], dy)
            .iter()
            .map(|v| v * v)
            .sum();
        assert!(bumped > base);
    }

    #[test]
    fn problem_layout_includes_every_position_once() {
        let cfg = subsonic();
        let (_, sensors, eval) = data(&cfg);
        let p = Problem::new(&cfg, &sensors, &eval, &TrainConfig::new(Backbone::Graph)).unwrap();
        assert!(p.positions.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(p.graph.k(), 5);
        assert_eq!(p.eval_nodes.len(), 20);
        for (r, &i) in eval.iter().zip(&p.eval_nodes) {
            assert!((p.positions[i] - r.s_over_d).abs() < 1e-9);
        }
        assert_eq!(p.positions[0], 0.0);
        assert_eq!(*p.positions.last().unwrap(), 150.0);
        let mut outside = eval.clone();
        outside[0].s_over_d = 151.0;
        assert!(matches!(
            Problem::new(&cfg, &sensors, &outside, &TrainConfig::new(Backbone::Graph)),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn mse_examples() {
        let refs: Vec<SensorReading> = (0..4)
            .map(|i| SensorReading { s_over_d: i as f64, mole_frac_pct: 10.0 + i as f64, mass_frac: 0.01, rho_cl: 1.0 })
            .collect();
        let same: Vec<PointPrediction> = refs
            .iter()
            .map(|r| PointPrediction {
                s_over_d: r.s_over_d,
                mole_frac_pct: r.mole_frac_pct,
                mass_frac: r.mass_frac,
                u: 0.0,
                b: 0.0,
                rho: 0.0,
                theta: 0.0,
            })
            .collect();
        assert_eq!(mse(&same, &refs).mole_pct2, 0.0);
        let off: Vec<PointPrediction> =
            same.iter().map(|p| PointPrediction { mole_frac_pct: p.mole_frac_pct + 1.0, ..*p }).collect();
        assert_eq!(mse(&off, &refs).mole_pct2, 1.0);
    }

    fn small_config(kind: Backbone) -> TrainConfig {
        let mut tc = TrainConfig::new(kind);
        tc.arch.width = 4;
        tc.arch.depth = 2;
        tc.collocation = 12;
        tc.epochs = 3;
        tc
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let cfg = subsonic();
        let (_, sensors, eval) = data(&cfg);
        for kind in [Backbone::Graph, Backbone::Dense] {
            let tc = small_config(kind);
            let problem = Problem::new(&cfg, &sensors, &eval[..4], &tc).unwrap();
            let params = init_params(3, &tc.arch).unwrap();
            let plan = problem.plan(&params, tc.derivatives).unwrap();
            let (_, grads) = loss_and_gradients(&problem, &plan, &params, &tc).unwrap();
            let mut worst = 0.0f64;
            for (t, g) in grads.iter().enumerate() {
                for k in 0..g.data().len() {
                    let eps = 1e-6;
                    let mut plus = params.clone();
                    plus.tensors_mut()[t].data_mut()[k] += eps;
                    let mut minus = params.clone();
                    minus.tensors_mut()[t].data_mut()[k] -= eps;
                    let fd = (evaluate_loss(&problem, &plus, &tc).unwrap().total
                        - evaluate_loss(&problem, &minus, &tc).unwrap().total)
                        / (2.0 * eps);
                    let ad = g.data()[k];
                    worst = worst.max((ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6));
                }
            }
            assert!(worst < 1e-4, "{kind:?}: worst relative error {worst}");
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let cfg = subsonic();
        let (_, sensors, eval) = data(&cfg);
        let mut tc = small_config(Backbone::Graph);
        tc.epochs = 40;
        tc.adam.lr = 1e-2;
        let a = train(&tc, &cfg, &sensors, &eval).unwrap();
        let b = train(&tc, &cfg, &sensors, &eval).unwrap();
        assert_eq!(a.report.loss_history, b.report.loss_history);
        assert_eq!(a.params, b.params);
        assert_eq!(a.report.loss_history.len(), 40);
        assert!(a.report.final_breakdown.total <= a.report.initial.total);
        let down = a.report.history_downsampled();
        assert_eq!(down.first().unwrap().0, 0);
        assert_eq!(down.last().unwrap().0, 39);
    }

    #[test]
    fn absurd_learning_rate_is_reported_as_divergence() {
        let cfg = subsonic();
        let (_, sensors, eval) = data(&cfg);
        let mut tc = small_config(Backbone::Dense);
        tc.epochs = 400;
        tc.adam.lr = 1e12;
        match train(&tc, &cfg, &sensors, &eval) {
            Err(e @ Error::Diverged { .. }) => assert!(e.to_string().contains("training diverged")),
            Err(other) => panic!("unexpected error {other}"),
            Ok(o) => panic!("no divergence, final loss {}", o.report.final_breakdown.total),
        }
    }
}
