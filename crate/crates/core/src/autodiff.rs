//! Tape-based reverse-mode automatic differentiation over small dense
//! matrices.
//!
//! Values are evaluated eagerly as the expression is recorded; a scalar
//! (`1 x 1`) node is a matrix like any other, so scalar expressions and the
//! per-node network layers share one engine. [`Tape::backward`] sweeps the
//! recorded nodes in reverse and returns the adjoint of every node.
//!
//! ```
//! use h2jet::autodiff::{Matrix, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.param(Matrix::scalar(3.0));
//! let y = x * x;
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(y.scalar(), 9.0);
//! assert_eq!(grads.wrt(x).data()[0], 6.0);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("{op} of non-positive argument at node {node}")]
    Domain { node: usize, op: &'static str },
    #[error("backward requires a scalar root, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("seed shape {seed:?} does not match node shape {node:?}")]
    SeedShape { seed: (usize, usize), node: (usize, usize) },
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("index {index} out of range for {len} entries")]
    Index { index: usize, len: usize },
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}, {:?})", self.rows, self.cols, self.data)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn column(data: Vec<f64>) -> Self {
        let rows = data.len();
        Self { rows, cols: 1, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn zip(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    /// `self * rhs`
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        let p = rhs.cols;
        for i in 0..self.rows {
            let orow = &mut out.data[i * p..(i + 1) * p];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let wrow = &rhs.data[k * p..(k + 1) * p];
                orow.iter_mut().zip(wrow).for_each(|(o, w)| *o += a * w);
            }
        }
        out
    }

    /// `self * rhs^T`
    fn matmul_t(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.cols);
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for k in 0..rhs.rows {
                out.data[i * rhs.rows + k] = a.iter().zip(rhs.row(k)).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    /// `self^T * rhs`
    fn t_matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.rows, rhs.rows);
        let p = rhs.cols;
        let mut out = Matrix::zeros(self.cols, p);
        for i in 0..self.rows {
            let g = rhs.row(i);
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[k * p..(k + 1) * p];
                orow.iter_mut().zip(g).for_each(|(o, x)| *o += a * x);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Constant sparse matrix in compressed-row form, used for neighbor
/// aggregation and row selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl SparseMatrix {
    /// Builds from `(row, col, weight)` triplets; duplicates are summed by
    /// the product.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; rows + 1];
        for &(r, c, _) in &triplets {
            assert!(r < rows && c < cols, "sparse index out of range");
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let entries = triplets.into_iter().map(|(_, c, w)| (c, w)).collect();
        Self { rows, cols, row_ptr, entries }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    /// Selects the listed rows of an `n`-row operand.
    pub fn selection(n: usize, rows: &[usize]) -> Self {
        Self::from_triplets(rows.len(), n, rows.iter().enumerate().map(|(i, &r)| (i, r, 1.0)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn row_entries(&self, r: usize) -> &[(usize, f64)] {
        &self.entries[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        assert_eq!(self.cols, m.rows, "sparse operand rows");
        let p = m.cols;
        let mut out = Matrix::zeros(self.rows, p);
        for r in 0..self.rows {
            let orow = &mut out.data[r * p..(r + 1) * p];
            for &(c, w) in self.row_entries(r) {
                orow.iter_mut().zip(m.row(c)).for_each(|(o, x)| *o += w * x);
            }
        }
        out
    }

    fn apply_t(&self, g: &Matrix) -> Matrix {
        let p = g.cols;
        let mut out = Matrix::zeros(self.cols, p);
        for r in 0..self.rows {
            let grow = g.row(r);
            for &(c, w) in self.row_entries(r) {
                let orow = &mut out.data[c * p..(c + 1) * p];
                orow.iter_mut().zip(grow).for_each(|(o, x)| *o += w * x);
            }
        }
        out
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    AddScalar(usize),
    Scale(usize, f64),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Sin(usize),
    Cos(usize),
    Softplus(usize),
    Sigmoid(usize),
    Powf(usize, f64),
    Min(usize, usize),
    MatMul(usize, usize),
    AddRow(usize, usize),
    Sparse(usize, Rc<SparseMatrix>),
    Column(usize, usize),
    Sum(usize),
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Records operations and their values.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<usize>>,
}

/// Handle to a recorded node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Matrix) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A non-trainable input or constant.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    /// A trainable leaf; its gradient appears in [`GradientSet`].
    pub fn param(&self, value: Matrix) -> Var<'_> {
        let v = self.push(Op::Leaf, value);
        self.params.borrow_mut().push(v.id);
        v
    }

    fn value_of(&self, id: usize) -> std::cell::Ref<'_, Matrix> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn unary(&self, a: Var<'_>, op: Op, f: impl Fn(f64) -> f64) -> Var<'_> {
        let v = self.value_of(a.id).map(f);
        self.push(op, v)
    }

    fn binary(&self, a: Var<'_>, b: Var<'_>, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'_> {
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.zip(&nodes[b.id].value, f)
        };
        self.push(op, v)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<GradientSet, AdError> {
        let shape = self.value_of(root.id).shape();
        if shape != (1, 1) {
            return Err(AdError::NotScalar { rows: shape.0, cols: shape.1 });
        }
        let adj = self.sweep(root.id, Matrix::scalar(1.0))?;
        let params = self.params.borrow();
        let nodes = self.nodes.borrow();
        let entries = params
            .iter()
            .map(|&id| {
                let g = adj[id].clone().unwrap_or_else(|| {
                    let (r, c) = nodes[id].value.shape();
                    Matrix::zeros(r, c)
                });
                (id, g)
            })
            .collect();
        Ok(GradientSet { entries, adjoints: adj })
    }

    /// Reverse sweep from an arbitrary node with an explicit seed adjoint.
    pub fn backward_seeded(&self, root: Var<'_>, seed: Matrix) -> Result<Adjoints, AdError> {
        let shape = self.value_of(root.id).shape();
        if seed.shape() != shape {
            return Err(AdError::SeedShape { seed: seed.shape(), node: shape });
        }
        Ok(Adjoints { adjoints: self.sweep(root.id, seed)? })
    }

    fn sweep(&self, root: usize, seed: Matrix) -> Result<Vec<Option<Matrix>>, AdError> {
        let nodes = self.nodes.borrow();
        if let Some(id) = (0..=root).find(|&i| !nodes[i].value.is_finite()) {
            return Err(AdError::NonFinite { node: id });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; root + 1];
        adj[root] = Some(seed);
        let acc = |adj: &mut Vec<Option<Matrix>>, id: usize, g: Matrix| match &mut adj[id] {
            Some(m) => m.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        for id in (0..=root).rev() {
            let Some(g) = adj[id].take() else { continue };
            let out = &nodes[id].value;
            let val = |i: usize| &nodes[i].value;
            match &nodes[id].op {
                Op::Leaf => {
                    adj[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    acc(&mut adj, *a, g.zip(val(*b), |x, y| x * y));
                    acc(&mut adj, *b, g.zip(val(*a), |x, y| x * y));
                }
                Op::Div(a, b) => {
                    let bv = val(*b);
                    acc(&mut adj, *a, g.zip(bv, |x, y| x / y));
                    let gb = g.zip(out, |x, q| x * q).zip(bv, |x, y| -x / y);
                    acc(&mut adj, *b, gb);
                }
                Op::Neg(a) => acc(&mut adj, *a, g.map(|x| -x)),
                Op::AddScalar(a) => acc(&mut adj, *a, g),
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut adj, *a, g.map(|x| x * c));
                }
                Op::Exp(a) => acc(&mut adj, *a, g.zip(out, |x, e| x * e)),
                Op::Ln(a) => acc(&mut adj, *a, g.zip(val(*a), |x, v| x / v)),
                Op::Sqrt(a) => acc(&mut adj, *a, g.zip(out, |x, r| 0.5 * x / r)),
                Op::Sin(a) => acc(&mut adj, *a, g.zip(val(*a), |x, v| x * v.cos())),
                Op::Cos(a) => acc(&mut adj, *a, g.zip(val(*a), |x, v| -x * v.sin())),
                Op::Softplus(a) => acc(&mut adj, *a, g.zip(val(*a), |x, v| x * sigmoid(v))),
                Op::Sigmoid(a) => acc(&mut adj, *a, g.zip(out, |x, s| x * s * (1.0 - s))),
                Op::Powf(a, p) => {
                    let p = *p;
                    acc(&mut adj, *a, g.zip(val(*a), |x, v| x * p * v.powf(p - 1.0)));
                }
                Op::Min(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let pick_a = av.zip(bv, |x, y| if x <= y { 1.0 } else { 0.0 });
                    acc(&mut adj, *a, g.zip(&pick_a, |x, m| x * m));
                    acc(&mut adj, *b, g.zip(&pick_a, |x, m| x * (1.0 - m)));
                }
                Op::MatMul(a, w) => {
                    acc(&mut adj, *a, g.matmul_t(val(*w)));
                    acc(&mut adj, *w, val(*a).t_matmul(&g));
                }
                Op::AddRow(a, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        gb.data.iter_mut().zip(g.row(r)).for_each(|(o, x)| *o += x);
                    }
                    acc(&mut adj, *bias, gb);
                    acc(&mut adj, *a, g);
                }
                Op::Sparse(a, s) => acc(&mut adj, *a, s.apply_t(&g)),
                Op::Column(a, c) => {
                    let (r, cols) = val(*a).shape();
                    let mut ga = Matrix::zeros(r, cols);
                    for i in 0..r {
                        ga.data[i * cols + c] = g.data[i];
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    acc(&mut adj, *a, Matrix::filled(r, c, g.data[0]));
                }
            }
            // Interior adjoints are consumed; leaves keep theirs (restored above).
        }
        Ok(adj)
    }
}

/// Adjoints of every node from a seeded sweep.
pub struct Adjoints {
    adjoints: Vec<Option<Matrix>>,
}

impl Adjoints {
    /// Adjoint of a leaf; zeros when the root does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Matrix {
        self.adjoints.get(v.id).and_then(|a| a.clone()).unwrap_or_else(|| {
            let (r, c) = v.value().shape();
            Matrix::zeros(r, c)
        })
    }
}

/// Gradients of a scalar loss, one entry per registered parameter in
/// registration order.
pub struct GradientSet {
    entries: Vec<(usize, Matrix)>,
    adjoints: Vec<Option<Matrix>>,
}

impl GradientSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn params(&self) -> impl Iterator<Item = &Matrix> {
        self.entries.iter().map(|(_, m)| m)
    }

    pub fn into_params(self) -> Vec<Matrix> {
        self.entries.into_iter().map(|(_, m)| m).collect()
    }

    /// Gradient with respect to any leaf (parameter or constant input).
    pub fn wrt(&self, v: Var<'_>) -> Matrix {
        self.adjoints.get(v.id).and_then(|a| a.clone()).unwrap_or_else(|| {
            let (r, c) = v.value().shape();
            Matrix::zeros(r, c)
        })
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, m)| m.is_finite())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Matrix {
        self.tape.value_of(self.id).clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.value_of(self.id).shape()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self) -> f64 {
        let v = self.tape.value_of(self.id);
        assert_eq!(v.shape(), (1, 1), "scalar() on non-scalar node");
        v.data[0]
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self, Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Result<Var<'t>, AdError> {
        if self.tape.value_of(self.id).data.iter().any(|&v| !(v > 0.0)) {
            return Err(AdError::Domain { node: self.id, op: "ln" });
        }
        Ok(self.tape.unary(self, Op::Ln(self.id), f64::ln))
    }

    pub fn sqrt(self) -> Result<Var<'t>, AdError> {
        if self.tape.value_of(self.id).data.iter().any(|&v| !(v > 0.0)) {
            return Err(AdError::Domain { node: self.id, op: "sqrt" });
        }
        Ok(self.tape.unary(self, Op::Sqrt(self.id), f64::sqrt))
    }

    pub fn sin(self) -> Var<'t> {
        self.tape.unary(self, Op::Sin(self.id), f64::sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.tape.unary(self, Op::Cos(self.id), f64::cos)
    }

    pub fn softplus(self) -> Var<'t> {
        self.tape.unary(self, Op::Softplus(self.id), softplus)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.unary(self, Op::Sigmoid(self.id), sigmoid)
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.tape.unary(self, Op::Powf(self.id, p), |v| v.powf(p))
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    /// Elementwise minimum; ties route the adjoint to `self`.
    pub fn minimum(self, other: Var<'t>) -> Var<'t> {
        self.tape.binary(self, other, Op::Min(self.id, other.id), f64::min)
    }

    pub fn matmul(self, w: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.matmul(&nodes[w.id].value)
        };
        self.tape.push(Op::MatMul(self.id, w.id), v)
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row(self, bias: Var<'t>) -> Var<'t> {
        let v = {
            let nodes = self.tape.nodes.borrow();
            let (m, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            assert_eq!((1, m.cols), b.shape(), "row bias shape");
            let mut out = m.clone();
            for r in 0..m.rows {
                out.data[r * m.cols..(r + 1) * m.cols].iter_mut().zip(&b.data).for_each(|(o, x)| *o += x);
            }
            out
        };
        self.tape.push(Op::AddRow(self.id, bias.id), v)
    }

    /// `s * self` for a constant sparse `s`.
    pub fn sparse(self, s: &Rc<SparseMatrix>) -> Var<'t> {
        let v = s.apply(&self.tape.value_of(self.id));
        self.tape.push(Op::Sparse(self.id, Rc::clone(s)), v)
    }

    pub fn col(self, c: usize) -> Var<'t> {
        let v = {
            let m = self.tape.value_of(self.id);
            assert!(c < m.cols, "column index");
            Matrix::column((0..m.rows).map(|r| m.get(r, c)).collect())
        };
        self.tape.push(Op::Column(self.id, c), v)
    }

    pub fn sum(self) -> Var<'t> {
        let v = Matrix::scalar(self.tape.value_of(self.id).data.iter().sum());
        self.tape.push(Op::Sum(self.id), v)
    }

    pub fn mean(self) -> Var<'t> {
        let n = {
            let m = self.tape.value_of(self.id);
            (m.rows * m.cols) as f64
        };
        self.sum() * (1.0 / n)
    }
}

macro_rules! binary_op {
    ($trait:ident, $method:ident, $variant:ident, $f:expr) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.tape.binary(self, rhs, Op::$variant(self.id, rhs.id), $f)
            }
        }
    };
}

binary_op!(Add, add, Add, |a, b| a + b);
binary_op!(Sub, sub, Sub, |a, b| a - b);
binary_op!(Mul, mul, Mul, |a, b| a * b);
binary_op!(Div, div, Div, |a, b| a / b);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(self, Op::Neg(self.id), |v| -v)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.tape.unary(self, Op::AddScalar(self.id), |v| v + c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.tape.unary(self, Op::AddScalar(self.id), |v| v - c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.tape.unary(self, Op::Scale(self.id, c), |v| v * c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        let inv = 1.0 / c;
        self.tape.unary(self, Op::Scale(self.id, inv), |v| v * inv)
    }
}

impl<'t> Real for Var<'t> {
    fn splat(&self, value: f64) -> Self {
        let (r, c) = self.shape();
        self.tape.constant(Matrix::filled(r, c, value))
    }

    fn min(&self, other: &Self) -> Self {
        self.minimum(*other)
    }

    fn sin(&self) -> Self {
        Var::sin(*self)
    }

    fn cos(&self) -> Self {
        Var::cos(*self)
    }
}

/// Derivative of every output column of row `node` with respect to input
/// entry `(node, channel)`, holding all other inputs fixed.
///
/// Computed by one reverse sweep per output column through the full
/// expression built by `f`.
pub fn input_derivative<F>(inputs: &Matrix, node: usize, channel: usize, f: F) -> Result<Vec<f64>, AdError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    if node >= inputs.rows() {
        return Err(AdError::Index { index: node, len: inputs.rows() });
    }
    if channel >= inputs.cols() {
        return Err(AdError::Index { index: channel, len: inputs.cols() });
    }
    let tape = Tape::new();
    let x = tape.constant(inputs.clone());
    let y = f(&tape, x);
    let (rows, cols) = y.shape();
    if node >= rows {
        return Err(AdError::Index { index: node, len: rows });
    }
    (0..cols)
        .map(|c| {
            let mut seed = Matrix::zeros(rows, cols);
            seed.set(node, c, 1.0);
            let adj = tape.backward_seeded(y, seed)?;
            Ok(adj.wrt(x).get(node, channel))
        })
        .collect()
}
