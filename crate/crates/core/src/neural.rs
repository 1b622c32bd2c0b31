//! Centerline graphs and the two network backbones.
//!
//! Both backbones map per-node features to four heads `(u, b, rho, theta)`
//! in nondimensional units. The graph backbone mixes each node with its
//! chain neighbors at every hidden layer; the dense backbone applies the same
//! layer stack to each node on its own.
//!
//! Coordinate derivatives are propagated as forward tangents on the same tape
//! as the values, so parameter gradients of the physics loss flow through
//! them.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, SparseMatrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Graph,
    Dense,
}

impl Backbone {
    pub fn name(self) -> &'static str {
        match self {
            Backbone::Graph => "graph",
            Backbone::Dense => "dense",
        }
    }
}

impl std::str::FromStr for Backbone {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph" => Ok(Backbone::Graph),
            "dense" => Ok(Backbone::Dense),
            other => Err(Error::Config(format!("unknown backbone '{other}'"))),
        }
    }
}

/// Which per-node inputs the graph backbone sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// `(s_hat, rho_hat, sensor flag)`
    Full,
    /// `(s_hat, rho_hat)`
    Interpolated,
    CoordinateOnly,
}

impl FeatureMode {
    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Full => "full",
            FeatureMode::Interpolated => "interpolated",
            FeatureMode::CoordinateOnly => "coordinate-only",
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(FeatureMode::Full),
            "interpolated" => Ok(FeatureMode::Interpolated),
            "coordinate-only" => Ok(FeatureMode::CoordinateOnly),
            other => Err(Error::Config(format!("unknown feature mode '{other}'"))),
        }
    }
}

/// How a graph layer combines a node with its neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    /// Sum divided by the number of terms, so chain ends see inputs of the
    /// same size as interior nodes.
    Mean,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::Config(format!("unknown aggregation '{other}'"))),
        }
    }
}

/// How `d(output_i)/ds` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    /// Own coordinate only, every other node input held fixed.
    Partial,
    /// All node inputs moved together along the centerline, including the
    /// interpolated density feature.
    Total,
    /// Central differences of the outputs across neighboring nodes.
    NeighborDifference,
}

/// Map from `s / d` to the network coordinate in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateMap {
    Linear,
    /// `ln(1 + s/d) / ln(1 + s_end/d)`, resolves the near field.
    Log,
}

impl CoordinateMap {
    /// Returns `(s_hat, d s_hat / d(s/d))`.
    pub fn apply(self, s: f64, span: f64) -> (f64, f64) {
        match self {
            CoordinateMap::Linear => (s / span, 1.0 / span),
            CoordinateMap::Log => {
                let norm = span.ln_1p();
                (s.ln_1p() / norm, 1.0 / ((1.0 + s) * norm))
            }
        }
    }
}

/// Undirected graph over centerline nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    positions: Vec<f64>,
    adjacency: Vec<Vec<usize>>,
    sensor_mask: Vec<bool>,
}

impl Graph {
    /// Builds a graph from explicit adjacency lists, checking symmetry.
    pub fn new(positions: Vec<f64>, adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let n = positions.len();
        if adjacency.len() != n {
            return Err(Error::Shape(format!("{} adjacency lists for {n} nodes", adjacency.len())));
        }
        for (i, nbrs) in adjacency.iter().enumerate() {
            for &j in nbrs {
                if j >= n || j == i {
                    return Err(Error::InvalidInput(format!("bad neighbor {j} of node {i}")));
                }
                if !adjacency[j].contains(&i) {
                    return Err(Error::InvalidInput(format!("adjacency not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { positions, adjacency, sensor_mask: vec![false; n] })
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    /// Number of sensor nodes.
    pub fn k(&self) -> usize {
        self.sensor_mask.iter().filter(|&&m| m).count()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn sensor_mask(&self) -> &[bool] {
        &self.sensor_mask
    }

    pub fn sensor_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.sensor_mask[i]).collect()
    }

    pub fn mark_sensors(&mut self, indices: &[usize]) -> Result<()> {
        for &i in indices {
            if i >= self.n() {
                return Err(Error::InvalidInput(format!("sensor index {i} out of range for {} nodes", self.n())));
            }
            self.sensor_mask[i] = true;
        }
        Ok(())
    }

    /// `A + I` (or `A` alone) as a sparse operator.
    fn aggregation(&self, include_self: bool, rule: Aggregation) -> SparseMatrix {
        let n = self.n();
        let mut t = Vec::with_capacity(n + 2 * self.edge_count());
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            let count = nbrs.len() + usize::from(include_self);
            let w = match rule {
                Aggregation::Sum => 1.0,
                Aggregation::Mean => 1.0 / count.max(1) as f64,
            };
            if include_self {
                t.push((i, i, w));
            }
            t.extend(nbrs.iter().map(|&j| (i, j, w)));
        }
        SparseMatrix::from_triplets(n, n, t)
    }

    /// Greedy coloring in which nodes sharing a color are more than `hops`
    /// edges apart.
    fn distance_coloring(&self, hops: usize) -> Vec<usize> {
        let n = self.n();
        let mut color = vec![usize::MAX; n];
        let mut dist = vec![usize::MAX; n];
        for i in 0..n {
            let mut taken = Vec::new();
            let mut queue = VecDeque::from([i]);
            let mut seen = vec![i];
            dist[i] = 0;
            while let Some(v) = queue.pop_front() {
                if color[v] != usize::MAX {
                    taken.push(color[v]);
                }
                if dist[v] == hops {
                    continue;
                }
                for &w in &self.adjacency[v] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        seen.push(w);
                        queue.push_back(w);
                    }
                }
            }
            for v in seen {
                dist[v] = usize::MAX;
            }
            color[i] = (0..).find(|c| !taken.contains(c)).expect("unbounded colors");
        }
        color
    }
}

/// Chain graph: node `i` is adjacent to `i +- 1 ..= i +- k_neighbors`.
pub fn build_chain_graph(positions: &[f64], k_neighbors: usize) -> Result<Graph> {
    if positions.len() < 2 {
        return Err(Error::InvalidInput("a graph needs at least two nodes".into()));
    }
    if positions.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("node positions must be finite".into()));
    }
    for w in positions.windows(2) {
        if w[1] == w[0] {
            return Err(Error::InvalidInput(format!("duplicate node position {}", w[0])));
        }
        if w[1] < w[0] {
            return Err(Error::InvalidInput("node positions must be increasing".into()));
        }
    }
    let n = positions.len();
    let adjacency = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(k_neighbors);
            let hi = (i + k_neighbors).min(n - 1);
            (lo..=hi).filter(|&j| j != i).collect()
        })
        .collect();
    Graph::new(positions.to_vec(), adjacency)
}

/// Per-node network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub s_hat: Vec<f64>,
    /// Observed `rho / rho_inf`, linearly interpolated between sensors.
    pub rho_hat: Vec<f64>,
    pub sensor: Vec<f64>,
    /// `d s_hat / d(s/d)`
    pub ds_hat: Vec<f64>,
    /// Slope of the interpolated density with respect to `s/d`.
    pub drho_hat: Vec<f64>,
    pub mode: FeatureMode,
}

impl NodeFeatures {
    /// Features at `positions` (in `s/d`, covering `[0, span]`) from
    /// `(node index, rho_hat)` sensor observations.
    pub fn build(
        positions: &[f64],
        observations: &[(usize, f64)],
        map: CoordinateMap,
        span: f64,
        mode: FeatureMode,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::NoSensors);
        }
        if !(span > 0.0) {
            return Err(Error::InvalidInput(format!("coordinate span {span} must be positive")));
        }
        let n = positions.len();
        let mut obs: Vec<(f64, f64)> = Vec::with_capacity(observations.len());
        let mut sensor = vec![0.0; n];
        for &(i, rho) in observations {
            if i >= n {
                return Err(Error::InvalidInput(format!("sensor index {i} out of range for {n} nodes")));
            }
            if !(rho > 0.0 && rho <= 1.05) {
                return Err(Error::InvalidInput(format!("normalized density {rho} outside (0, 1.05]")));
            }
            sensor[i] = 1.0;
            obs.push((positions[i], rho));
        }
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut rho_hat, mut drho_hat) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for &s in positions {
            let (r, dr) = interpolate(&obs, s);
            rho_hat.push(r);
            drho_hat.push(dr);
        }
        let (s_hat, ds_hat) = positions.iter().map(|&s| map.apply(s, span)).unzip();
        Ok(Self { s_hat, rho_hat, sensor, ds_hat, drho_hat, mode })
    }

    pub fn n(&self) -> usize {
        self.s_hat.len()
    }

    pub fn in_dim(mode: FeatureMode, kind: Backbone) -> usize {
        match (kind, mode) {
            (Backbone::Graph, FeatureMode::Full) => 3,
            (Backbone::Graph, FeatureMode::Interpolated) => 2,
            _ => 1,
        }
    }

    fn matrix(&self, kind: Backbone) -> Matrix {
        let cols = Self::in_dim(self.mode, kind);
        let mut m = Matrix::zeros(self.n(), cols);
        for i in 0..self.n() {
            m.set(i, 0, self.s_hat[i]);
            if cols >= 2 {
                m.set(i, 1, self.rho_hat[i]);
            }
            if cols == 3 {
                m.set(i, 2, self.sensor[i]);
            }
        }
        m
    }

    /// Input tangent per unit `s/d` at every node.
    fn tangent(&self, kind: Backbone, with_feature_slope: bool) -> Matrix {
        let cols = Self::in_dim(self.mode, kind);
        let mut m = Matrix::zeros(self.n(), cols);
        for i in 0..self.n() {
            m.set(i, 0, self.ds_hat[i]);
            if cols >= 2 && with_feature_slope {
                m.set(i, 1, self.drho_hat[i]);
            }
        }
        m
    }
}

/// Piecewise-linear interpolation with flat extrapolation; returns value and
/// slope.
fn interpolate(points: &[(f64, f64)], s: f64) -> (f64, f64) {
    let idx = points.partition_point(|p| p.0 <= s);
    if idx == 0 {
        return (points[0].1, 0.0);
    }
    if idx == points.len() {
        return (points[idx - 1].1, 0.0);
    }
    let (a, b) = (points[idx - 1], points[idx]);
    let slope = (b.1 - a.1) / (b.0 - a.0);
    (a.1 + slope * (s - a.0), slope)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    /// Shared self and neighbor weight.
    pub weight: Matrix,
    /// Separate neighbor weight of the two-matrix variant.
    pub neighbor_weight: Option<Matrix>,
    pub bias: Matrix,
}

/// Network shape and variant flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: Backbone,
    pub width: usize,
    pub depth: usize,
    pub features: FeatureMode,
    pub neighbor_weight: bool,
    pub aggregation: Aggregation,
}

impl Architecture {
    pub fn new(kind: Backbone) -> Self {
        Self {
            kind,
            width: 30,
            depth: 3,
            features: FeatureMode::CoordinateOnly,
            neighbor_weight: false,
            aggregation: Aggregation::Mean,
        }
    }

    pub fn in_dim(&self) -> usize {
        NodeFeatures::in_dim(self.features, self.kind)
    }
}

pub const OUTPUTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub seed: u64,
    pub input: DenseLayer,
    pub hidden: Vec<HiddenLayer>,
    pub output: DenseLayer,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_vec(fan_in, fan_out, (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect())
}

/// Glorot-uniform weights from a seeded generator. Under sum aggregation the
/// graph hidden weights are shrunk by `1/sqrt(3)`, the self-plus-two-neighbors
/// sum of a chain, so activations keep their size through the layers. The `u` and `b`
/// output biases start at `softplus^-1(1)`, everything else at zero.
pub fn init_params(seed: u64, arch: &Architecture) -> Result<ModelParams> {
    if arch.width == 0 || arch.depth == 0 {
        return Err(Error::InvalidInput("width and depth must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = arch.width;
    let input = DenseLayer { weight: glorot(&mut rng, arch.in_dim(), w), bias: Matrix::zeros(1, w) };
    let hidden = (0..arch.depth)
        .map(|_| {
            let shrink = if arch.kind == Backbone::Graph && arch.aggregation == Aggregation::Sum {
                3f64.sqrt().recip()
            } else {
                1.0
            };
            let mut weight = glorot(&mut rng, w, w);
            weight.data_mut().iter_mut().for_each(|v| *v *= shrink);
            let neighbor_weight = (arch.neighbor_weight && arch.kind == Backbone::Graph).then(|| {
                let mut m = glorot(&mut rng, w, w);
                m.data_mut().iter_mut().for_each(|v| *v *= shrink);
                m
            });
            HiddenLayer { weight, neighbor_weight, bias: Matrix::zeros(1, w) }
        })
        .collect();
    let unit = (std::f64::consts::E - 1.0).ln();
    let output = DenseLayer { weight: glorot(&mut rng, w, OUTPUTS), bias: Matrix::from_vec(1, OUTPUTS, vec![unit, unit, 0.0, 0.0]) };
    Ok(ModelParams { arch: *arch, seed, input, hidden, output })
}

impl ModelParams {
    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("input.weight".to_string(), &self.input.weight), ("input.bias".to_string(), &self.input.bias)];
        for (l, h) in self.hidden.iter().enumerate() {
            out.push((format!("hidden{l}.weight"), &h.weight));
            if let Some(nw) = &h.neighbor_weight {
                out.push((format!("hidden{l}.neighbor_weight"), nw));
            }
            out.push((format!("hidden{l}.bias"), &h.bias));
        }
        out.push(("output.weight".to_string(), &self.output.weight));
        out.push(("output.bias".to_string(), &self.output.bias));
        out
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.input.weight, &mut self.input.bias];
        for h in &mut self.hidden {
            out.push(&mut h.weight);
            if let Some(nw) = &mut h.neighbor_weight {
                out.push(nw);
            }
            out.push(&mut h.bias);
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data().len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, m)| m.data().iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Writes the flat key-value checkpoint.
    pub fn to_checkpoint(&self) -> String {
        let a = &self.arch;
        let mut s = String::new();
        let _ = writeln!(s, "kind = {}", a.kind.name());
        let _ = writeln!(s, "width = {}", a.width);
        let _ = writeln!(s, "depth = {}", a.depth);
        let _ = writeln!(s, "features = {}", a.features.name());
        let _ = writeln!(s, "neighbor_weight = {}", a.neighbor_weight);
        let _ = writeln!(s, "aggregation = {}", a.aggregation.name());
        let _ = writeln!(s, "seed = {}", self.seed);
        for (name, m) in self.tensors() {
            let _ = write!(s, "{name} = {} {}", m.rows(), m.cols());
            for v in m.data() {
                let _ = write!(s, " {v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut meta = std::collections::HashMap::new();
        let mut tensors = std::collections::HashMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Parse { path: "checkpoint".into(), line: no + 1, msg: msg.into() };
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.contains('.') {
                let mut it = v.split_whitespace();
                let mut dim = || -> Result<usize> {
                    it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("missing tensor shape"))
                };
                let (r, c) = (dim()?, dim()?);
                let data = it.map(|t| t.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad number"))?;
                if data.len() != r * c {
                    return Err(bad("tensor length does not match shape"));
                }
                tensors.insert(k.to_string(), Matrix::from_vec(r, c, data));
            } else {
                meta.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| meta.get(k).ok_or_else(|| Error::Config(format!("checkpoint missing '{k}'")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Config(format!("bad '{k}'"))) };
        let arch = Architecture {
            kind: get("kind")?.parse()?,
            width: num("width")?,
            depth: num("depth")?,
            features: get("features")?.parse()?,
            neighbor_weight: get("neighbor_weight")?.parse().map_err(|_| Error::Config("bad 'neighbor_weight'".into()))?,
            aggregation: get("aggregation")?.parse()?,
        };
        let seed = get("seed")?.parse().map_err(|_| Error::Config("bad 'seed'".into()))?;
        let mut params = init_params(seed, &arch)?;
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let m = tensors.remove(name).ok_or_else(|| Error::Config(format!("checkpoint missing tensor '{name}'")))?;
            if m.shape() != slot.shape() {
                return Err(Error::Shape(format!("tensor '{name}' has shape {:?}, expected {:?}", m.shape(), slot.shape())));
            }
            *slot = m;
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Config(format!("unexpected tensor '{extra}'")));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

/// Maps raw head outputs to positive physical-shaped quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputTransform {
    pub u_scale: f64,
    pub b_scale: f64,
    /// Source density over ambient; the density head spans
    /// `(rho_source, 1)`.
    pub rho_source: f64,
    /// Fixed inclination for vertical jets.
    pub theta: Option<f64>,
}

/// Tape variables bound to a [`ModelParams`].
pub struct ParamVars<'t> {
    input: (Var<'t>, Var<'t>),
    hidden: Vec<(Var<'t>, Option<Var<'t>>, Var<'t>)>,
    output: (Var<'t>, Var<'t>),
}

impl<'t> ParamVars<'t> {
    /// Registers every tensor as a trainable parameter, in tensor order.
    pub fn trainable(tape: &'t Tape, p: &ModelParams) -> Self {
        Self::bind(tape, p, true)
    }

    pub fn fixed(tape: &'t Tape, p: &ModelParams) -> Self {
        Self::bind(tape, p, false)
    }

    fn bind(tape: &'t Tape, p: &ModelParams, trainable: bool) -> Self {
        let leaf = |m: &Matrix| if trainable { tape.param(m.clone()) } else { tape.constant(m.clone()) };
        Self {
            input: (leaf(&p.input.weight), leaf(&p.input.bias)),
            hidden: p
                .hidden
                .iter()
                .map(|h| (leaf(&h.weight), h.neighbor_weight.as_ref().map(leaf), leaf(&h.bias)))
                .collect(),
            output: (leaf(&p.output.weight), leaf(&p.output.bias)),
        }
    }
}

/// Heads and their derivatives with respect to `s/d`, as `n x 1` columns.
pub struct Heads<'t> {
    pub u: Var<'t>,
    pub b: Var<'t>,
    pub rho: Var<'t>,
    pub theta: Var<'t>,
    pub du: Var<'t>,
    pub db: Var<'t>,
    pub drho: Var<'t>,
    pub dtheta: Var<'t>,
}

/// Everything about a forward pass that does not depend on the parameters.
pub struct ForwardPlan {
    arch: Architecture,
    inputs: Matrix,
    /// `A + I`, or `A` alone for the two-matrix variant; `None` for dense.
    agg: Option<Rc<SparseMatrix>>,
    deriv: DerivativeMode,
    /// Input tangents and the diagonal masks that pick each color's rows.
    tangent_seeds: Vec<(Matrix, Option<Rc<SparseMatrix>>)>,
    difference: Option<Rc<SparseMatrix>>,
    transform: OutputTransform,
    n: usize,
}

impl ForwardPlan {
    pub fn new(
        params: &ModelParams,
        graph: Option<&Graph>,
        feats: &NodeFeatures,
        transform: OutputTransform,
        deriv: DerivativeMode,
    ) -> Result<Self> {
        let arch = params.arch;
        let n = feats.n();
        if feats.mode != arch.features && arch.kind == Backbone::Graph {
            return Err(Error::Shape("feature mode differs from the model's".into()));
        }
        let inputs = feats.matrix(arch.kind);
        if inputs.cols() != params.input.weight.rows() {
            return Err(Error::Shape(format!(
                "{} input features, model expects {}",
                inputs.cols(),
                params.input.weight.rows()
            )));
        }
        let graph = match (arch.kind, graph) {
            (Backbone::Graph, Some(g)) => {
                if g.n() != n {
                    return Err(Error::Shape(format!("graph has {} nodes, features {n}", g.n())));
                }
                Some(g)
            }
            (Backbone::Graph, None) => return Err(Error::Shape("graph backbone needs a graph".into())),
            (Backbone::Dense, _) => None,
        };
        let agg = graph.map(|g| Rc::new(g.aggregation(!arch.neighbor_weight, arch.aggregation)));
        let mut tangent_seeds = Vec::new();
        let mut difference = None;
        match deriv {
            DerivativeMode::Total => tangent_seeds.push((feats.tangent(arch.kind, true), None)),
            DerivativeMode::Partial => {
                let full = feats.tangent(arch.kind, false);
                let colors = match graph {
                    Some(g) => g.distance_coloring(arch.depth),
                    None => vec![0; n],
                };
                let count = colors.iter().max().map_or(0, |c| c + 1);
                for c in 0..count {
                    let rows: Vec<usize> = (0..n).filter(|&i| colors[i] == c).collect();
                    let mut seed = Matrix::zeros(n, full.cols());
                    for &i in &rows {
                        for j in 0..full.cols() {
                            seed.set(i, j, full.get(i, j));
                        }
                    }
                    let mask = (count > 1)
                        .then(|| Rc::new(SparseMatrix::from_triplets(n, n, rows.iter().map(|&i| (i, i, 1.0)).collect())));
                    tangent_seeds.push((seed, mask));
                }
            }
            DerivativeMode::NeighborDifference => {
                difference = Some(Rc::new(difference_operator(feats)?));
            }
        }
        Ok(Self { arch, inputs, agg, deriv, tangent_seeds, difference, transform, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn derivative_mode(&self) -> DerivativeMode {
        self.deriv
    }

    fn layer<'t>(&self, vars: &ParamVars<'t>, l: usize, h: Var<'t>, bias: bool) -> Var<'t> {
        let (w, wn, b) = vars.hidden[l];
        let mixed = match (&self.agg, wn) {
            (None, _) => h.matmul(w),
            (Some(a), None) => h.sparse(a).matmul(w),
            (Some(a), Some(wn)) => h.matmul(w) + h.sparse(a).matmul(wn),
        };
        if bias {
            mixed.add_row(b)
        } else {
            mixed
        }
    }

    /// Raw head outputs `z` (`n x 4`) and their tangents.
    fn trunk<'t>(&self, vars: &ParamVars<'t>, x: Var<'t>, seeds: &[Var<'t>]) -> (Var<'t>, Vec<Var<'t>>) {
        let (we, be) = vars.input;
        let pre = x.matmul(we).add_row(be);
        let gate = pre.sigmoid();
        let mut h = pre.softplus();
        let mut ts: Vec<Var<'t>> = seeds.iter().map(|t| gate * t.matmul(we)).collect();
        for l in 0..self.arch.depth {
            let pre = self.layer(vars, l, h, true);
            let gate = pre.sigmoid();
            ts = ts.into_iter().map(|t| gate * self.layer(vars, l, t, false)).collect();
            h = pre.softplus();
        }
        let (wo, bo) = vars.output;
        (h.matmul(wo).add_row(bo), ts.into_iter().map(|t| t.matmul(wo)).collect())
    }

    /// Transformed outputs as an `n x 4` matrix, built from an input
    /// variable. Used to cross-check coordinate derivatives.
    pub fn outputs<'t>(&self, vars: &ParamVars<'t>, x: Var<'t>) -> Var<'t> {
        let (z, _) = self.trunk(vars, x, &[]);
        let tape = x.tape();
        let t = &self.transform;
        let u = z.col(0).softplus() * t.u_scale;
        let b = z.col(1).softplus() * t.b_scale;
        let rho = z.col(2).sigmoid() * -(1.0 - t.rho_source) + 1.0;
        let theta = match t.theta {
            Some(th) => tape.constant(Matrix::filled(self.n, 1, th)),
            None => z.col(3),
        };
        let cols: Vec<Var<'t>> = vec![u, b, rho, theta];
        let mut out = tape.constant(Matrix::zeros(self.n, OUTPUTS));
        for (c, v) in cols.into_iter().enumerate() {
            let mut e = Matrix::zeros(1, OUTPUTS);
            e.set(0, c, 1.0);
            out = out + v.matmul(tape.constant(e));
        }
        out
    }

    pub fn input_matrix(&self) -> &Matrix {
        &self.inputs
    }

    pub fn heads<'t>(&self, vars: &ParamVars<'t>) -> Heads<'t> {
        let tape = vars.input.0.tape();
        let x = tape.constant(self.inputs.clone());
        let seeds: Vec<Var<'t>> = self.tangent_seeds.iter().map(|(s, _)| tape.constant(s.clone())).collect();
        let (z, ts) = self.trunk(vars, x, &seeds);
        let dz = match self.deriv {
            DerivativeMode::NeighborDifference => None,
            _ => {
                let mut acc: Option<Var<'t>> = None;
                for ((_, mask), t) in self.tangent_seeds.iter().zip(ts) {
                    let part = match mask {
                        Some(m) => t.sparse(m),
                        None => t,
                    };
                    acc = Some(match acc {
                        Some(a) => a + part,
                        None => part,
                    });
                }
                acc
            }
        };
        let t = self.transform;
        let (z0, z1, z2) = (z.col(0), z.col(1), z.col(2));
        let u = z0.softplus() * t.u_scale;
        let b = z1.softplus() * t.b_scale;
        let sig_rho = z2.sigmoid();
        let rho = sig_rho * -(1.0 - t.rho_source) + 1.0;
        let theta = match t.theta {
            Some(th) => tape.constant(Matrix::filled(self.n, 1, th)),
            None => z.col(3),
        };
        let zero = || tape.constant(Matrix::zeros(self.n, 1));
        let (du, db, drho, dtheta) = match (dz, &self.difference) {
            (Some(dz), _) => {
                let du = z0.sigmoid() * dz.col(0) * t.u_scale;
                let db = z1.sigmoid() * dz.col(1) * t.b_scale;
                let drho = sig_rho * (-sig_rho + 1.0) * dz.col(2) * -(1.0 - t.rho_source);
                let dtheta = if t.theta.is_some() { zero() } else { dz.col(3) };
                (du, db, drho, dtheta)
            }
            (None, Some(d)) => {
                let dtheta = if t.theta.is_some() { zero() } else { theta.sparse(d) };
                (u.sparse(d), b.sparse(d), rho.sparse(d), dtheta)
            }
            (None, None) => unreachable!("difference operator present without tangents"),
        };
        Heads { u, b, rho, theta, du, db, drho, dtheta }
    }
}

/// Central differences in `s/d` across adjacent nodes, one-sided at the ends.
fn difference_operator(feats: &NodeFeatures) -> Result<SparseMatrix> {
    let n = feats.n();
    if n < 2 {
        return Err(Error::InvalidInput("differences need at least two nodes".into()));
    }
    // Differences in s_hat, rescaled by d s_hat / d(s/d).
    let s = &feats.s_hat;
    let mut t = Vec::with_capacity(2 * n);
    for i in 0..n {
        let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
        let h = s[hi] - s[lo];
        if !(h > 0.0) {
            return Err(Error::InvalidInput("node coordinates must increase".into()));
        }
        let w = feats.ds_hat[i] / h;
        t.push((i, hi, w));
        t.push((i, lo, -w));
    }
    Ok(SparseMatrix::from_triplets(n, n, t))
}

/// Per-node outputs in nondimensional units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldPrediction {
    pub u: Vec<f64>,
    pub b: Vec<f64>,
    pub rho: Vec<f64>,
    pub theta: Vec<f64>,
}

impl FieldPrediction {
    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn u_physical(&self, scales: &crate::training::Scales) -> Vec<f64> {
        self.u.iter().map(|v| v * scales.u_ref).collect()
    }

    pub fn b_physical(&self, scales: &crate::training::Scales) -> Vec<f64> {
        self.b.iter().map(|v| v * scales.l_ref).collect()
    }

    pub fn rho_physical(&self, scales: &crate::training::Scales) -> Vec<f64> {
        self.rho.iter().map(|v| v * scales.rho_ref).collect()
    }
}

/// Coordinate derivatives `d/d(s/d)` of the four heads at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDerivatives {
    pub du: Vec<f64>,
    pub db: Vec<f64>,
    pub drho: Vec<f64>,
    pub dtheta: Vec<f64>,
}

impl FieldDerivatives {
    pub fn at(&self, i: usize) -> Result<[f64; 4]> {
        if i >= self.du.len() {
            return Err(Error::OutOfRange { position: i as f64, min: 0.0, max: self.du.len() as f64 - 1.0 });
        }
        Ok([self.du[i], self.db[i], self.drho[i], self.dtheta[i]])
    }
}

fn column(v: Var<'_>) -> Vec<f64> {
    v.value().into_data()
}

/// Evaluates predictions and coordinate derivatives without recording
/// gradients.
pub fn predict(plan: &ForwardPlan, params: &ModelParams) -> (FieldPrediction, FieldDerivatives) {
    let tape = Tape::new();
    let vars = ParamVars::fixed(&tape, params);
    let h = plan.heads(&vars);
    (
        FieldPrediction { u: column(h.u), b: column(h.b), rho: column(h.rho), theta: column(h.theta) },
        FieldDerivatives { du: column(h.du), db: column(h.db), drho: column(h.drho), dtheta: column(h.dtheta) },
    )
}

fn check_kind(params: &ModelParams, kind: Backbone) -> Result<()> {
    if params.arch.kind != kind {
        return Err(Error::Shape(format!("expected {} parameters, got {}", kind.name(), params.arch.kind.name())));
    }
    Ok(())
}

/// Graph-backbone forward pass.
pub fn forward_gnn(
    params: &ModelParams,
    graph: &Graph,
    feats: &NodeFeatures,
    transform: OutputTransform,
) -> Result<FieldPrediction> {
    check_kind(params, Backbone::Graph)?;
    let plan = ForwardPlan::new(params, Some(graph), feats, transform, DerivativeMode::Total)?;
    Ok(predict(&plan, params).0)
}

/// Dense-backbone forward pass; every node is evaluated independently.
pub fn forward_dense(params: &ModelParams, feats: &NodeFeatures, transform: OutputTransform) -> Result<FieldPrediction> {
    check_kind(params, Backbone::Dense)?;
    let plan = ForwardPlan::new(params, None, feats, transform, DerivativeMode::Total)?;
    Ok(predict(&plan, params).0)
}

/// `d(outputs at node)/d(s/d)` with every other node input held fixed.
pub fn node_derivative(
    params: &ModelParams,
    graph: Option<&Graph>,
    feats: &NodeFeatures,
    transform: OutputTransform,
    node: usize,
) -> Result<[f64; 4]> {
    if node >= feats.n() {
        return Err(Error::OutOfRange { position: node as f64, min: 0.0, max: feats.n() as f64 - 1.0 });
    }
    let plan = ForwardPlan::new(params, graph, feats, transform, DerivativeMode::Partial)?;
    predict(&plan, params).1.at(node)
}
