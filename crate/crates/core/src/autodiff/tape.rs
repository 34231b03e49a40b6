use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use super::linalg::gemm;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Cheap to copy; only meaningful for the
/// tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulT,
    AddBias,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Relu,
    Sigmoid,
    Tanh,
    Ln,
    Abs,
    Clamp,
    Sum,
    Mean,
    L1Norm,
    L2Norm,
    Dot,
    RowSum,
    ConcatRows,
    ConcatCols,
    SliceRows,
    SliceCols,
    GatherCols,
    RowCosine,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// `a · bᵀ`
    MatMulT(usize, usize),
    /// `a + 1·bias`, bias is a row vector broadcast over rows
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Ln(usize),
    Abs(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    L1Norm(usize),
    L2Norm(usize),
    Dot(usize, usize),
    RowSum(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    GatherCols(usize, Vec<usize>),
    RowCosine(usize, usize, f64),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulT(..) => OpKind::MatMulT,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Relu(..) => OpKind::Relu,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Ln(..) => OpKind::Ln,
            Op::Abs(..) => OpKind::Abs,
            Op::Clamp(..) => OpKind::Clamp,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::L1Norm(..) => OpKind::L1Norm,
            Op::L2Norm(..) => OpKind::L2Norm,
            Op::Dot(..) => OpKind::Dot,
            Op::RowSum(..) => OpKind::RowSum,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::GatherCols(..) => OpKind::GatherCols,
            Op::RowCosine(..) => OpKind::RowCosine,
        }
    }

    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulT(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Dot(a, b)
            | Op::RowCosine(a, b, _) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Ln(a)
            | Op::Abs(a)
            | Op::Clamp(a, ..)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::L1Norm(a)
            | Op::L2Norm(a)
            | Op::RowSum(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::GatherCols(a, _) => vec![*a],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
        }
    }
}

struct Node {
    rows: usize,
    cols: usize,
    value: Arc<Vec<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a computation. Parents always precede children, so
/// the backward pass is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    validate: bool,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// When enabled every op checks its output for NaN/Inf.
    pub fn set_validate(&mut self, on: bool) {
        self.validate = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.id].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(v.len(), 1);
        self.nodes[v.id].value[0]
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.id].op.kind()
    }

    /// Which side of its breakpoint every input to a non-smooth op (relu,
    /// abs, l1_norm, clamp) lies on. Two evaluations with equal patterns are
    /// on the same piecewise-smooth branch.
    pub fn kink_pattern(&self) -> Vec<i8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) => out.extend(self.nodes[a].value.iter().map(|&x| i8::from(x > 0.0))),
                Op::Abs(a) | Op::L1Norm(a) => out.extend(self.nodes[a].value.iter().map(|&x| sign(x) as i8)),
                Op::Clamp(a, lo, hi) => out.extend(
                    self.nodes[a]
                        .value
                        .iter()
                        .map(|&x| if x < lo { -1 } else if x > hi { 1 } else { 0 }),
                ),
                _ => {}
            }
        }
        out
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Result<Var> {
        debug_assert_eq!(value.len(), rows * cols);
        if self.validate && value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("output of {}", op.kind())));
        }
        let needs_grad = op.parents().iter().any(|&p| self.nodes[p].needs_grad);
        let id = self.nodes.len();
        self.nodes.push(Node {
            rows,
            cols,
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Ok(Var { id, rows, cols })
    }

    fn push_leaf(&mut self, rows: usize, cols: usize, value: Arc<Vec<f64>>, trainable: bool) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(Error::Shape {
                op: "leaf",
                lhs: (rows, cols),
                rhs: (value.len(), 1),
            });
        }
        if self.validate && value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("leaf value".into()));
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op: Op::Leaf,
            needs_grad: trainable,
        });
        Ok(Var { id, rows, cols })
    }

    /// A trainable leaf.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        self.push_leaf(rows, cols, Arc::new(data), true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        self.push_leaf(rows, cols, Arc::new(data), false)
    }

    /// A leaf backed by shared storage, avoiding a copy of large weights.
    pub fn shared(&mut self, rows: usize, cols: usize, data: Arc<Vec<f64>>, trainable: bool) -> Result<Var> {
        self.push_leaf(rows, cols, data, trainable)
    }

    fn same_shape(op: &'static str, a: Var, b: Var) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::Shape {
                op,
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        Ok(())
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(a.rows, a.cols, value, op)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(a.rows, a.cols, value, op)
    }

    /// `a · b` for `a: m×k`, `b: k×n`. With `n = 1` this is a matrix-vector product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.cols != b.rows {
            return Err(Error::Shape {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let mut out = vec![0.0; a.rows * b.cols];
        gemm(a.rows, a.cols, b.cols, self.value(a), false, self.value(b), false, 0.0, &mut out);
        self.push(a.rows, b.cols, out, Op::MatMul(a.id, b.id))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`; the layout of a dense layer whose
    /// weight matrix is stored output-major.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.cols != b.cols {
            return Err(Error::Shape {
                op: "matmul_t",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let mut out = vec![0.0; a.rows * b.rows];
        gemm(a.rows, a.cols, b.rows, self.value(a), false, self.value(b), true, 0.0, &mut out);
        self.push(a.rows, b.rows, out, Op::MatMulT(a.id, b.id))
    }

    /// Adds a `1×n` row vector to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        if bias.rows != 1 || bias.cols != a.cols {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: a.shape(),
                rhs: bias.shape(),
            });
        }
        let bv = self.value(bias);
        let value = self
            .value(a)
            .chunks(a.cols.max(1))
            .flat_map(|row| row.iter().zip(bv).map(|(x, b)| x + b))
            .collect();
        self.push(a.rows, a.cols, value, Op::AddBias(a.id, bias.id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        Self::same_shape("add", a, b)?;
        self.zip(a, b, Op::Add(a.id, b.id), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        Self::same_shape("sub", a, b)?;
        self.zip(a, b, Op::Sub(a.id, b.id), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        Self::same_shape("mul", a, b)?;
        self.zip(a, b, Op::Mul(a.id, b.id), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::Scale(a.id, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::AddScalar(a.id), |x| x + c)
    }

    /// `max(x, 0)`; the derivative at 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a.id), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a.id), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a.id), f64::tanh)
    }

    /// Natural log, unguarded.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Ln(a.id), f64::ln)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Abs(a.id), f64::abs)
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map(a, Op::Clamp(a.id, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a.id))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        if a.is_empty() {
            return Err(Error::Shape {
                op: "mean",
                lhs: a.shape(),
                rhs: (1, 1),
            });
        }
        let s: f64 = self.value(a).iter().sum();
        self.push(1, 1, vec![s / a.len() as f64], Op::Mean(a.id))
    }

    pub fn l1_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().map(|x| x.abs()).sum();
        self.push(1, 1, vec![s], Op::L1Norm(a.id))
    }

    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push(1, 1, vec![s], Op::L2Norm(a.id))
    }

    /// Sum of elementwise products of two equally shaped values.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        Self::same_shape("dot", a, b)?;
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        self.push(1, 1, vec![s], Op::Dot(a.id, b.id))
    }

    /// `m×n → m×1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let value = if a.cols == 0 {
            vec![0.0; a.rows]
        } else {
            self.value(a).chunks(a.cols).map(|r| r.iter().sum()).collect()
        };
        self.push(a.rows, 1, value, Op::RowSum(a.id))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if let Some(p) = parts.iter().find(|p| p.cols != cols) {
            return Err(Error::Shape {
                op: "concat_rows",
                lhs: parts[0].shape(),
                rhs: p.shape(),
            });
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut value = Vec::with_capacity(rows * cols);
        for p in parts {
            value.extend_from_slice(self.value(*p));
        }
        self.push(rows, cols, value, Op::ConcatRows(parts.iter().map(|p| p.id).collect()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(p) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: parts[0].shape(),
                rhs: p.shape(),
            });
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut value = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                value.extend_from_slice(&self.value(*p)[r * p.cols..(r + 1) * p.cols]);
            }
        }
        self.push(rows, cols, value, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
    }

    /// Rows `[start, start + len)`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > a.rows {
            return Err(Error::Shape {
                op: "slice_rows",
                lhs: a.shape(),
                rhs: (start, len),
            });
        }
        let value = self.value(a)[start * a.cols..(start + len) * a.cols].to_vec();
        self.push(len, a.cols, value, Op::SliceRows(a.id, start))
    }

    /// Columns `[start, start + len)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > a.cols {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: a.shape(),
                rhs: (start, len),
            });
        }
        let value = if a.cols == 0 {
            Vec::new()
        } else {
            self.value(a)
                .chunks(a.cols)
                .flat_map(|r| r[start..start + len].iter().copied())
                .collect()
        };
        self.push(a.rows, len, value, Op::SliceCols(a.id, start))
    }

    /// Picks the listed columns, in the given order.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        if let Some(&bad) = idx.iter().find(|&&j| j >= a.cols) {
            return Err(Error::Shape {
                op: "gather_cols",
                lhs: a.shape(),
                rhs: (0, bad),
            });
        }
        let value = if a.cols == 0 {
            Vec::new()
        } else {
            self.value(a)
                .chunks(a.cols)
                .flat_map(|r| idx.iter().map(move |&j| r[j]))
                .collect()
        };
        self.push(a.rows, idx.len(), value, Op::GatherCols(a.id, idx.to_vec()))
    }

    /// Cosine similarity of corresponding rows, as an `m×1` column. Rows in
    /// which either vector has norm below `eps` yield 0 and carry no
    /// gradient; their count is returned alongside. Bitwise equal rows give
    /// exactly 1 with an exactly zero gradient.
    pub fn row_cosine(&mut self, a: Var, b: Var, eps: f64) -> Result<(Var, usize)> {
        Self::same_shape("row_cosine", a, b)?;
        let n = a.cols;
        let mut degenerate = 0;
        let mut value = Vec::with_capacity(a.rows);
        for r in 0..a.rows {
            let x = &self.value(a)[r * n..(r + 1) * n];
            let y = &self.value(b)[r * n..(r + 1) * n];
            match cosine_parts(x, y, eps) {
                // identical rows sit exactly at the maximum
                Some(_) if x == y => value.push(1.0),
                Some((d, na, nb)) => value.push(d / (na * nb)),
                None => {
                    degenerate += 1;
                    value.push(0.0);
                }
            }
        }
        let v = self.push(a.rows, 1, value, Op::RowCosine(a.id, b.id, eps))?;
        Ok((v, degenerate))
    }

    /// Reverse sweep from a scalar root. Only trainable leaves keep their
    /// gradients in the result; forward values are left untouched.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if root.len() != 1 {
            return Err(Error::NotScalar {
                op: "backward",
                shape: root.shape(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        // Weight gradients of `a · bᵀ` with a leaf `b` are stacked and
        // computed with one GEMM when the leaf is reached.
        let mut pending: HashMap<usize, Vec<(Vec<f64>, usize)>> = HashMap::new();
        if !self.nodes[root.id].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if let Some(list) = pending.remove(&id) {
                    self.flush_pending(id, list, &mut grads);
                }
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(id, g, &mut grads, &mut pending);
        }
        Ok(Gradients { grads })
    }

    fn flush_pending(&self, leaf: usize, list: Vec<(Vec<f64>, usize)>, grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[leaf];
        let (n, k) = (node.rows, node.cols);
        let total_rows: usize = list.iter().map(|(_, a)| self.nodes[*a].rows).sum();
        let acc = grads[leaf].get_or_insert_with(|| vec![0.0; n * k]);
        if list.len() == 1 {
            let (g, a) = &list[0];
            gemm(n, total_rows, k, g, true, &self.nodes[*a].value, false, 1.0, acc);
            return;
        }
        let mut gs = Vec::with_capacity(total_rows * n);
        let mut xs = Vec::with_capacity(total_rows * k);
        for (g, a) in &list {
            gs.extend_from_slice(g);
            xs.extend_from_slice(&self.nodes[*a].value);
        }
        gemm(n, total_rows, k, &gs, true, &xs, false, 1.0, acc);
    }

    fn propagate(
        &self,
        id: usize,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        pending: &mut HashMap<usize, Vec<(Vec<f64>, usize)>>,
    ) {
        let node = &self.nodes[id];
        let nodes = &self.nodes;
        let wants = |p: usize| nodes[p].needs_grad;
        let val = |p: usize| -> &[f64] { &nodes[p].value };
        let shape = |p: usize| (nodes[p].rows, nodes[p].cols);

        fn slot(grads: &mut [Option<Vec<f64>>], p: usize, len: usize) -> &mut Vec<f64> {
            grads[p].get_or_insert_with(|| vec![0.0; len])
        }
        fn acc(grads: &mut [Option<Vec<f64>>], p: usize, g: &[f64], f: impl Fn(usize, f64) -> f64) {
            let buf = slot(grads, p, g.len());
            for (i, (b, &gi)) in buf.iter_mut().zip(g).enumerate() {
                *b += f(i, gi);
            }
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = shape(*a);
                let n = nodes[*b].cols;
                if wants(*a) {
                    let buf = slot(grads, *a, m * k);
                    gemm(m, n, k, &g, false, val(*b), true, 1.0, buf);
                }
                if wants(*b) {
                    let buf = slot(grads, *b, k * n);
                    gemm(k, m, n, val(*a), true, &g, false, 1.0, buf);
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = shape(*a);
                let n = nodes[*b].rows;
                if wants(*a) {
                    let buf = slot(grads, *a, m * k);
                    gemm(m, n, k, &g, false, val(*b), false, 1.0, buf);
                }
                if wants(*b) {
                    if matches!(nodes[*b].op, Op::Leaf) {
                        pending.entry(*b).or_default().push((g, *a));
                    } else {
                        let buf = slot(grads, *b, n * k);
                        gemm(n, m, k, &g, true, val(*a), false, 1.0, buf);
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if wants(*a) {
                    acc(grads, *a, &g, |_, gi| gi);
                }
                if wants(*bias) {
                    let cols = nodes[*bias].cols;
                    let buf = slot(grads, *bias, cols);
                    if cols > 0 {
                        for row in g.chunks(cols) {
                            for (b, gi) in buf.iter_mut().zip(row) {
                                *b += gi;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(grads, *a, &g, |_, gi| gi);
                }
                if wants(*b) {
                    acc(grads, *b, &g, |_, gi| gi);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    acc(grads, *a, &g, |_, gi| gi);
                }
                if wants(*b) {
                    acc(grads, *b, &g, |_, gi| -gi);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    acc(grads, *a, &g, |i, gi| gi * bv[i]);
                }
                if wants(*b) {
                    acc(grads, *b, &g, |i, gi| gi * av[i]);
                }
            }
            Op::Scale(a, c) => acc(grads, *a, &g, |_, gi| c * gi),
            Op::AddScalar(a) => acc(grads, *a, &g, |_, gi| gi),
            Op::Relu(a) => {
                let x = val(*a);
                acc(grads, *a, &g, |i, gi| if x[i] > 0.0 { gi } else { 0.0 });
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(grads, *a, &g, |i, gi| gi * y[i] * (1.0 - y[i]));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(grads, *a, &g, |i, gi| gi * (1.0 - y[i] * y[i]));
            }
            Op::Ln(a) => {
                let x = val(*a);
                acc(grads, *a, &g, |i, gi| gi / x[i]);
            }
            Op::Abs(a) => {
                let x = val(*a);
                acc(grads, *a, &g, |i, gi| gi * sign(x[i]));
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                acc(grads, *a, &g, |i, gi| if x[i] >= *lo && x[i] <= *hi { gi } else { 0.0 });
            }
            Op::Sum(a) | Op::Mean(a) | Op::L1Norm(a) | Op::L2Norm(a) => {
                let x = val(*a);
                let g0 = g[0];
                let buf = slot(grads, *a, x.len());
                match &node.op {
                    Op::Sum(_) => buf.iter_mut().for_each(|b| *b += g0),
                    Op::Mean(_) => {
                        let s = g0 / x.len() as f64;
                        buf.iter_mut().for_each(|b| *b += s);
                    }
                    Op::L1Norm(_) => {
                        for (b, &xi) in buf.iter_mut().zip(x) {
                            *b += g0 * sign(xi);
                        }
                    }
                    _ => {
                        let norm = node.value[0];
                        if norm > 0.0 {
                            for (b, &xi) in buf.iter_mut().zip(x) {
                                *b += g0 * xi / norm;
                            }
                        }
                    }
                }
            }
            Op::Dot(a, b) => {
                let g0 = g[0];
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    let buf = slot(grads, *a, av.len());
                    for (x, &y) in buf.iter_mut().zip(bv) {
                        *x += g0 * y;
                    }
                }
                if wants(*b) {
                    let buf = slot(grads, *b, bv.len());
                    for (y, &x) in buf.iter_mut().zip(av) {
                        *y += g0 * x;
                    }
                }
            }
            Op::RowSum(a) => {
                let (rows, cols) = shape(*a);
                let buf = slot(grads, *a, rows * cols);
                for r in 0..rows {
                    for b in &mut buf[r * cols..(r + 1) * cols] {
                        *b += g[r];
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p].value.len();
                    if wants(p) {
                        let buf = slot(grads, p, len);
                        for (b, gi) in buf.iter_mut().zip(&g[offset..offset + len]) {
                            *b += gi;
                        }
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.cols;
                let mut col = 0;
                for &p in parts {
                    let (rows, cols) = shape(p);
                    if wants(p) {
                        let buf = slot(grads, p, rows * cols);
                        for r in 0..rows {
                            let src = &g[r * total + col..r * total + col + cols];
                            for (b, gi) in buf[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                                *b += gi;
                            }
                        }
                    }
                    col += cols;
                }
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = shape(*a);
                let buf = slot(grads, *a, rows * cols);
                for (b, gi) in buf[start * cols..].iter_mut().zip(&g) {
                    *b += gi;
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = shape(*a);
                let len = node.cols;
                let buf = slot(grads, *a, rows * cols);
                for r in 0..rows {
                    let dst = &mut buf[r * cols + start..r * cols + start + len];
                    for (b, gi) in dst.iter_mut().zip(&g[r * len..(r + 1) * len]) {
                        *b += gi;
                    }
                }
            }
            Op::GatherCols(a, idx) => {
                let (rows, cols) = shape(*a);
                let buf = slot(grads, *a, rows * cols);
                for r in 0..rows {
                    for (j, &c) in idx.iter().enumerate() {
                        buf[r * cols + c] += g[r * idx.len() + j];
                    }
                }
            }
            Op::RowCosine(a, b, eps) => {
                let (rows, n) = shape(*a);
                let (av, bv) = (val(*a), val(*b));
                let mut da = vec![0.0; rows * n];
                let mut db = vec![0.0; rows * n];
                for r in 0..rows {
                    let x = &av[r * n..(r + 1) * n];
                    let y = &bv[r * n..(r + 1) * n];
                    let Some((d, na, nb)) = cosine_parts(x, y, *eps) else {
                        continue;
                    };
                    if x == y {
                        continue;
                    }
                    let cos = d / (na * nb);
                    let inv = 1.0 / (na * nb);
                    for j in 0..n {
                        da[r * n + j] = g[r] * (y[j] * inv - cos * x[j] / (na * na));
                        db[r * n + j] = g[r] * (x[j] * inv - cos * y[j] / (nb * nb));
                    }
                }
                for (p, d) in [(*a, da), (*b, db)] {
                    if wants(p) {
                        let buf = slot(grads, p, rows * n);
                        for (x, y) in buf.iter_mut().zip(&d) {
                            *x += y;
                        }
                    }
                }
            }
        }
    }
}

/// Dot product and both norms, or `None` when either norm is below `eps`.
fn cosine_parts(x: &[f64], y: &[f64], eps: f64) -> Option<(f64, f64, f64)> {
    let na = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < eps || nb < eps {
        return None;
    }
    let d = x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    Some((d, na, nb))
}

/// Gradients of trainable leaves, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `v` is not a trainable leaf or does not influence the root.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`] but yields zeros for unreached leaves.
    pub fn get_or_zeros(&self, v: Var) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; v.len()], <[f64]>::to_vec)
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.id).and_then(Option::take)
    }
}
