use std::rc::Rc;

use super::tensor::{as_matrix, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, keeping the last axis: `[r, c] -> [1, c]`.
    Rows,
    /// Reduce over the last axis: `[r, c] -> [r, 1]`.
    Last,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Neg(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    ClampMin(Var, f64),
    Minimum(Var, Var),
    Sum(Var),
    SumAxis(Var, Axis),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Softmax(Var),
    ScatterAdd(Var, Rc<[usize]>),
    Stack(Vec<Var>),
    GatherRow(Var, usize),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of primitive operations.
///
/// Nodes are appended in execution order; [`Graph::backward`] walks them in
/// reverse. An op whose inputs do not require gradients is stored as a
/// constant, so inference graphs carry no adjoint bookkeeping.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

macro_rules! shape_err {
    ($op:expr, $a:expr, $b:expr) => {
        Error::Shape {
            op: $op,
            lhs: $a.to_vec(),
            rhs: $b.to_vec(),
        }
    };
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created after `len`. Handles to dropped nodes become
    /// invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.grads.clear();
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adjoint of `v` after [`Graph::backward`]; `None` if nothing flowed in.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf holding a copy of `t`; tracks gradients iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad)
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != value.len() {
            return Err(shape_err!("constant", shape, [value.len()]));
        }
        Ok(self.push(shape, value, Op::Leaf, false))
    }

    pub fn row(&mut self, value: Vec<f64>) -> Var {
        self.push(vec![1, value.len()], value, Op::Leaf, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.push(vec![1, 1], vec![v], Op::Leaf, false)
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        let n = shape.iter().product();
        self.push(shape, vec![0.0; n], Op::Leaf, false)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.node(a).shape.as_slice(), self.node(b).shape.as_slice());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err!("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// Checks that `b` is either the same shape as `a` or a bias broadcast
    /// over the last axis of `a`. Returns true for the broadcast case.
    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (&self.node(a).shape, &self.node(b).shape);
        if sa == sb {
            return Ok(false);
        }
        let (_, cols) = as_matrix(sa);
        let (br, bc) = as_matrix(sb);
        if br == 1 && bc == cols {
            Ok(true)
        } else {
            Err(shape_err!(op, sa, sb))
        }
    }

    /// Elementwise sum; `b` may be a bias broadcast over the last axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast_kind("add", a, b)?;
        let out = self.zip_broadcast(a, b, bc, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.node(a).shape.clone(), out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast_kind("sub", a, b)?;
        let out = self.zip_broadcast(a, b, bc, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.node(a).shape.clone(), out, Op::Sub(a, b), rg))
    }

    /// Elementwise product; `b` may be a scalar or broadcast over the last axis.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = if self.node(b).value.len() == 1 && self.node(a).value.len() != 1 {
            let s = self.node(b).value[0];
            self.node(a).value.iter().map(|x| x * s).collect()
        } else {
            let bc = self.broadcast_kind("mul", a, b)?;
            self.zip_broadcast(a, b, bc, |x, y| x * y)
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.node(a).shape.clone(), out, Op::Mul(a, b), rg))
    }

    fn zip_broadcast(&self, a: Var, b: Var, broadcast: bool, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        if broadcast {
            let cols = bv.len();
            av.iter()
                .enumerate()
                .map(|(i, &x)| f(x, bv[i % cols]))
                .collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        }
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.node(a).value.iter().map(|&x| f(x)).collect();
        let rg = self.rg(&[a]);
        self.push(self.node(a).shape.clone(), out, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    /// Natural log. Fails on any non-positive entry; clamp first.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.node(a).value.iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::LogDomain(bad));
        }
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    /// `max(a, lo)`; the adjoint passes through where `a >= lo`.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        self.unary(a, Op::ClampMin(a, lo), |x| x.max(lo))
    }

    /// `log(max(a, 1e-12))`, the clamped log used for every probability.
    pub fn log_clamped(&mut self, a: Var) -> Result<Var> {
        let c = self.clamp_min(a, super::LOG_FLOOR);
        self.log(c)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.node(a).shape != self.node(b).shape {
            return Err(shape_err!("minimum", self.node(a).shape, self.node(b).shape));
        }
        let out = self.zip_broadcast(a, b, false, f64::min);
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.node(a).shape.clone(), out, Op::Minimum(a, b), rg))
    }

    /// Full reduction to a `[1, 1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.node(a).value.iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1, 1], vec![s], Op::Sum(a), rg)
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Var {
        let (r, c) = as_matrix(&self.node(a).shape);
        let v = &self.node(a).value;
        let (shape, out) = match axis {
            Axis::Rows => {
                let mut out = vec![0.0; c];
                for row in v.chunks(c) {
                    for (o, x) in out.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                (vec![1, c], out)
            }
            Axis::Last => (vec![r, 1], v.chunks(c).map(|row| row.iter().sum()).collect()),
        };
        let rg = self.rg(&[a]);
        self.push(shape, out, Op::SumAxis(a, axis), rg)
    }

    /// Concatenate along the last axis; all inputs must agree on row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let rows = as_matrix(&self.node(first).shape).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = as_matrix(&self.node(p).shape);
            if r != rows {
                return Err(shape_err!("concat", self.node(first).shape, self.node(p).shape));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = as_matrix(&self.node(p).shape).1;
                out.extend_from_slice(&self.node(p).value[r * c..(r + 1) * c]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![rows, total], out, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = as_matrix(&self.node(a).shape);
        if start + len > c || len == 0 {
            return Err(shape_err!("slice", self.node(a).shape, [start, len]));
        }
        let v = &self.node(a).value;
        let mut out = Vec::with_capacity(r * len);
        for row in v.chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![r, len], out, Op::Slice(a, start), rg))
    }

    /// Row-wise softmax over the last axis. Positions where `mask` is false
    /// get exactly zero probability. The row max is subtracted first.
    pub fn masked_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (_, c) = as_matrix(&self.node(a).shape);
        if let Some(m) = mask {
            if m.len() != c {
                return Err(shape_err!("masked_softmax", self.node(a).shape, [m.len()]));
            }
            if !m.iter().any(|&x| x) {
                return Err(Error::invalid("masked_softmax: every position is masked"));
            }
        }
        let keep = |j: usize| mask.map_or(true, |m| m[j]);
        let v = &self.node(a).value;
        let mut out = vec![0.0; v.len()];
        for (row, orow) in v.chunks(c).zip(out.chunks_mut(c)) {
            let max = (0..c)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                if keep(j) {
                    orow[j] = (row[j] - max).exp();
                    z += orow[j];
                }
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(self.node(a).shape.clone(), out, Op::Softmax(a), rg))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.masked_softmax(a, None)
    }

    /// Adds entry `i` of the single-row `a` into position `index[i]` of a
    /// zero row of length `len`.
    pub fn scatter_add(&mut self, a: Var, index: Rc<[usize]>, len: usize) -> Result<Var> {
        let v = &self.node(a).value;
        if v.len() != index.len() {
            return Err(shape_err!("scatter_add", self.node(a).shape, [index.len()]));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= len) {
            return Err(shape_err!("scatter_add", [bad], [len]));
        }
        let mut out = vec![0.0; len];
        for (&i, &x) in index.iter().zip(v) {
            out[i] += x;
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![1, len], out, Op::ScatterAdd(a, index), rg))
    }

    /// Stacks equal-length rows into a `[T, n]` matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or_else(|| Error::invalid("stack of nothing"))?;
        let n = self.node(first).value.len();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if self.node(r).value.len() != n {
                return Err(shape_err!("stack", self.node(first).shape, self.node(r).shape));
            }
            out.extend_from_slice(&self.node(r).value);
        }
        let rg = self.rg(rows);
        Ok(self.push(vec![rows.len(), n], out, Op::Stack(rows.to_vec()), rg))
    }

    /// Same value, no adjoint flows back into `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let n = self.node(a);
        self.push(n.shape.clone(), n.value.clone(), Op::Leaf, false)
    }

    /// Row `row` of a matrix as a `[1, c]` row (embedding lookup).
    pub fn gather_row(&mut self, a: Var, row: usize) -> Result<Var> {
        let (r, c) = as_matrix(&self.node(a).shape);
        if row >= r {
            return Err(shape_err!("gather_row", self.node(a).shape, [row]));
        }
        let out = self.node(a).value[row * c..(row + 1) * c].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![1, c], out, Op::GatherRow(a, row), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.node(a).value.len() {
            return Err(shape_err!("reshape", self.node(a).shape, shape));
        }
        let out = self.node(a).value.clone();
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::Reshape(a), rg))
    }

    /// Reverse sweep from a scalar `loss`. Adjoints accumulate additively and
    /// can be read with [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::NonScalarLoss(self.node(loss).shape.clone()));
        }
        self.grads.clear();
        self.grads.resize_with(self.nodes.len(), || None);
        if !self.node(loss).requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &dy);
            self.grads[i] = Some(dy);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].shape.iter().product();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&mut self, i: usize, dy: &[f64]) {
        // Ops are cheap to clone (Rc / small Vec); this frees `self` for `acc`.
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                if self.nodes[a.0].requires_grad {
                    let bv = std::mem::take(&mut self.nodes[b.0].value);
                    let ga = self.acc(a).unwrap();
                    for r in 0..m {
                        let dyr = &dy[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[r * k + p] += dot(dyr, brow);
                        }
                    }
                    self.nodes[b.0].value = bv;
                }
                if self.nodes[b.0].requires_grad {
                    let av = std::mem::take(&mut self.nodes[a.0].value);
                    let gb = self.acc(b).unwrap();
                    for r in 0..m {
                        let dyr = &dy[r * n..(r + 1) * n];
                        for p in 0..k {
                            let x = av[r * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (g, d) in gb[p * n..(p + 1) * n].iter_mut().zip(dyr) {
                                *g += x * d;
                            }
                        }
                    }
                    self.nodes[a.0].value = av;
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(ga) = self.acc(a) {
                    add_into(ga, dy, 1.0);
                }
                if let Some(gb) = self.acc(b) {
                    let cols = gb.len();
                    for (j, d) in dy.iter().enumerate() {
                        gb[j % cols] += sign * d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let scalar_b = self.nodes[b.0].value.len() == 1 && self.nodes[a.0].value.len() != 1;
                if self.nodes[a.0].requires_grad {
                    let bv = std::mem::take(&mut self.nodes[b.0].value);
                    let ga = self.acc(a).unwrap();
                    let cols = bv.len();
                    for (j, d) in dy.iter().enumerate() {
                        ga[j] += d * bv[if scalar_b { 0 } else { j % cols }];
                    }
                    self.nodes[b.0].value = bv;
                }
                if self.nodes[b.0].requires_grad {
                    let av = std::mem::take(&mut self.nodes[a.0].value);
                    let gb = self.acc(b).unwrap();
                    let cols = gb.len();
                    for (j, d) in dy.iter().enumerate() {
                        gb[if scalar_b { 0 } else { j % cols }] += d * av[j];
                    }
                    self.nodes[a.0].value = av;
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(a) {
                    add_into(ga, dy, c);
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = self.acc(a) {
                    add_into(ga, dy, 1.0);
                }
            }
            Op::Neg(a) => {
                if let Some(ga) = self.acc(a) {
                    add_into(ga, dy, -1.0);
                }
            }
            Op::Tanh(a) => self.unary_back(i, a, dy, |_, y| 1.0 - y * y),
            Op::Sigmoid(a) => self.unary_back(i, a, dy, |_, y| y * (1.0 - y)),
            Op::Exp(a) => self.unary_back(i, a, dy, |_, y| y),
            Op::Log(a) => self.unary_back(i, a, dy, |x, _| 1.0 / x),
            Op::ClampMin(a, lo) => self.unary_back(i, a, dy, |x, _| if x >= lo { 1.0 } else { 0.0 }),
            Op::Minimum(a, b) => {
                let take_a: Vec<bool> = self.nodes[a.0]
                    .value
                    .iter()
                    .zip(&self.nodes[b.0].value)
                    .map(|(x, y)| x <= y)
                    .collect();
                if let Some(ga) = self.acc(a) {
                    for ((g, d), &t) in ga.iter_mut().zip(dy).zip(&take_a) {
                        if t {
                            *g += d;
                        }
                    }
                }
                if let Some(gb) = self.acc(b) {
                    for ((g, d), &t) in gb.iter_mut().zip(dy).zip(&take_a) {
                        if !t {
                            *g += d;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.acc(a) {
                    ga.iter_mut().for_each(|g| *g += dy[0]);
                }
            }
            Op::SumAxis(a, axis) => {
                let (_, c) = as_matrix(&self.nodes[a.0].shape);
                if let Some(ga) = self.acc(a) {
                    for (j, g) in ga.iter_mut().enumerate() {
                        *g += match axis {
                            Axis::Rows => dy[j % c],
                            Axis::Last => dy[j / c],
                        };
                    }
                }
            }
            Op::Concat(parts) => {
                let total = *self.nodes[i].shape.last().unwrap();
                let rows = dy.len() / total;
                let mut offset = 0;
                for p in parts {
                    let c = as_matrix(&self.nodes[p.0].shape).1;
                    if let Some(gp) = self.acc(p) {
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * c..(r + 1) * c],
                                &dy[r * total + offset..r * total + offset + c],
                                1.0,
                            );
                        }
                    }
                    offset += c;
                }
            }
            Op::Slice(a, start) => {
                let c = as_matrix(&self.nodes[a.0].shape).1;
                let len = *self.nodes[i].shape.last().unwrap();
                if let Some(ga) = self.acc(a) {
                    for (r, d) in dy.chunks(len).enumerate() {
                        add_into(&mut ga[r * c + start..r * c + start + len], d, 1.0);
                    }
                }
            }
            Op::Softmax(a) => {
                let c = as_matrix(&self.nodes[i].shape).1;
                let y = std::mem::take(&mut self.nodes[i].value);
                if let Some(ga) = self.acc(a) {
                    for ((yr, dr), gr) in y.chunks(c).zip(dy.chunks(c)).zip(ga.chunks_mut(c)) {
                        let s = dot(yr, dr);
                        for j in 0..c {
                            gr[j] += yr[j] * (dr[j] - s);
                        }
                    }
                }
                self.nodes[i].value = y;
            }
            Op::ScatterAdd(a, index) => {
                if let Some(ga) = self.acc(a) {
                    for (g, &k) in ga.iter_mut().zip(index.iter()) {
                        *g += dy[k];
                    }
                }
            }
            Op::Stack(rows) => {
                let n = dy.len() / rows.len();
                for (r, v) in rows.into_iter().enumerate() {
                    if let Some(gv) = self.acc(v) {
                        add_into(gv, &dy[r * n..(r + 1) * n], 1.0);
                    }
                }
            }
            Op::GatherRow(a, row) => {
                let c = dy.len();
                if let Some(ga) = self.acc(a) {
                    add_into(&mut ga[row * c..(row + 1) * c], dy, 1.0);
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.acc(a) {
                    add_into(ga, dy, 1.0);
                }
            }
        }
    }

    /// `dx += dy * f(x, y)` for elementwise ops.
    fn unary_back(&mut self, i: usize, a: Var, dy: &[f64], f: impl Fn(f64, f64) -> f64) {
        if !self.nodes[a.0].requires_grad {
            return;
        }
        let x = std::mem::take(&mut self.nodes[a.0].value);
        let y = std::mem::take(&mut self.nodes[i].value);
        let ga = self.acc(a).unwrap();
        for j in 0..ga.len() {
            ga[j] += dy[j] * f(x[j], y[j]);
        }
        self.nodes[a.0].value = x;
        self.nodes[i].value = y;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}
