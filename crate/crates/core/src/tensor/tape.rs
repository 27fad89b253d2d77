//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so walking the node list backwards is a valid reverse
//! topological order and every node is visited once.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{EggError, Result};
use crate::svd::{self, SvdAdjoints, SvdFactors};
use crate::tensor::{CsrMatrix, Matrix, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Entrywise operations exposed through [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Hadamard,
    Relu,
    Sigmoid,
    Exp,
    Log,
    Scale(f64),
}

impl ElementwiseKind {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Hadamard)
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    ColSum(Var),
    ColMean(Var),
    ColMax(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Propagate(Arc<CsrMatrix>, Var),
    Clamp(Var, f64, f64),
    SoftmaxCrossEntropy(Var, Arc<[usize]>),
    BceWithLogits(Var, Arc<[f64]>, f64),
    PairDot(Var, Arc<[(usize, usize)]>),
    FlattenSym(Var),
    SvdU(Var, Arc<SvdFactors>),
    SvdS(Var, Arc<SvdFactors>),
    SvdV(Var, Arc<SvdFactors>),
}

struct Node {
    value: Arc<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Outputs of [`Tape::svd`]: the leading `p` factors as separate nodes.
#[derive(Debug, Clone)]
pub struct SvdVars {
    pub u: Var,
    /// Singular values as a `1×p` row.
    pub s: Var,
    pub v: Var,
    pub p: usize,
    pub factors: Arc<SvdFactors>,
}

/// Recorded computation graph.
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    svd_epsilon: f64,
    degenerate_pairs: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient accumulators indexed by node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_svd_epsilon(svd::DEFAULT_EPSILON)
    }

    pub fn with_svd_epsilon(eps: f64) -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            svd_epsilon: eps,
            degenerate_pairs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Near-tied singular value pairs met during the last backward pass.
    pub fn degenerate_pairs(&self) -> usize {
        self.degenerate_pairs
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn constant_shared(&mut self, value: Arc<Matrix>) -> Result<Var> {
        value.ensure_finite("constant")?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that receives gradients but is not tied to a parameter.
    pub fn input(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf, true, "input")
    }

    /// The leaf for a stored parameter. Repeated calls return the same node,
    /// so fan-out accumulates into a single gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, true, "param")?;
        self.param_vars.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg, "matmul")
    }

    /// Entrywise operation; `b` is required exactly for the binary kinds.
    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind.is_binary(), b) {
            (true, None) => {
                return Err(EggError::InvalidArgument(format!("{kind:?} needs two operands")));
            }
            (false, Some(_)) => {
                return Err(EggError::InvalidArgument(format!("{kind:?} takes one operand")));
            }
            _ => {}
        }
        let x = self.value(a);
        let rg_a = self.rg(a);
        match kind {
            ElementwiseKind::Add | ElementwiseKind::Sub | ElementwiseKind::Hadamard => {
                let b = b.expect("checked above");
                let y = self.value(b);
                let rg = rg_a || self.rg(b);
                match kind {
                    ElementwiseKind::Add => {
                        let out = x.add(y)?;
                        self.push(out, Op::Add(a, b), rg, "add")
                    }
                    ElementwiseKind::Sub => {
                        let out = x.sub(y)?;
                        self.push(out, Op::Sub(a, b), rg, "sub")
                    }
                    _ => {
                        let out = x.hadamard(y)?;
                        self.push(out, Op::Hadamard(a, b), rg, "hadamard")
                    }
                }
            }
            ElementwiseKind::Relu => {
                let out = x.map(|v| v.max(0.0));
                self.push(out, Op::Relu(a), rg_a, "relu")
            }
            ElementwiseKind::Sigmoid => {
                let out = x.map(sigmoid);
                self.push(out, Op::Sigmoid(a), rg_a, "sigmoid")
            }
            ElementwiseKind::Exp => {
                let out = x.map(f64::exp);
                self.push(out, Op::Exp(a), rg_a, "exp")
            }
            ElementwiseKind::Log => {
                if x.as_slice().iter().any(|&v| v <= 0.0) {
                    return Err(EggError::Domain {
                        op: "log",
                        msg: "non-positive entry".into(),
                    });
                }
                let out = x.map(f64::ln);
                self.push(out, Op::Log(a), rg_a, "log")
            }
            ElementwiseKind::Scale(c) => {
                let out = x.scale(c);
                self.push(out, Op::Scale(a, c), rg_a, "scale")
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Sub, a, Some(b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Hadamard, a, Some(b))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Relu, a, None)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Sigmoid, a, None)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Exp, a, None)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.elementwise(ElementwiseKind::Log, a, None)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.elementwise(ElementwiseKind::Scale(c), a, None)
    }

    /// `x + 1·b` where `b` is a `1×d` row broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(EggError::shape("add_row", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, &bb) in out.row_mut(i).iter_mut().zip(bv.as_slice()) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        self.push(out, Op::AddRow(x, b), rg, "add_row")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg, "transpose")
    }

    /// Sum of all entries as a `1×1` node.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(EggError::InvalidArgument("mean of empty matrix".into()));
        }
        let out = Matrix::scalar(x.sum() / x.len() as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg, "mean")
    }

    fn column_reduce(&self, a: Var, op: &'static str) -> Result<&Matrix> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(EggError::InvalidArgument(format!("{op} over zero rows")));
        }
        Ok(x)
    }

    /// Column sums as a `1×d` row.
    pub fn col_sum(&mut self, a: Var) -> Result<Var> {
        let x = self.column_reduce(a, "col_sum")?;
        let mut out = Matrix::zeros(1, x.cols());
        for i in 0..x.rows() {
            for (o, &v) in out.as_mut_slice().iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::ColSum(a), rg, "col_sum")
    }

    pub fn col_mean(&mut self, a: Var) -> Result<Var> {
        let x = self.column_reduce(a, "col_mean")?;
        let n = x.rows() as f64;
        let mut out = Matrix::zeros(1, x.cols());
        for i in 0..x.rows() {
            for (o, &v) in out.as_mut_slice().iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        let out = out.scale(1.0 / n);
        let rg = self.rg(a);
        self.push(out, Op::ColMean(a), rg, "col_mean")
    }

    /// Column maxima; gradient flows to the first row attaining each max.
    pub fn col_max(&mut self, a: Var) -> Result<Var> {
        let x = self.column_reduce(a, "col_max")?;
        let mut arg = vec![0usize; x.cols()];
        let mut out = Matrix::from_fn(1, x.cols(), |_, j| x[(0, j)]);
        for i in 1..x.rows() {
            for j in 0..x.cols() {
                if x[(i, j)] > out[(0, j)] {
                    out[(0, j)] = x[(i, j)];
                    arg[j] = i;
                }
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::ColMax(a, arg), rg, "col_max")
    }

    /// Stacks nodes vertically; all must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| EggError::InvalidArgument("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(EggError::shape("concat_rows", (rows, cols), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.as_slice());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Matrix::new(rows, cols, data)?, Op::ConcatRows(parts.to_vec()), rg, "concat_rows")
    }

    /// Joins nodes horizontally; all must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| EggError::InvalidArgument("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(EggError::shape("concat_cols", (rows, total), v.shape()));
            }
            total += v.cols();
        }
        let mut out = Matrix::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[offset..offset + v.cols()].copy_from_slice(v.row(i));
            }
            offset += v.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg, "concat_cols")
    }

    /// `A·x` for a fixed sparse operator `A`.
    pub fn propagate(&mut self, a: Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let out = a.mul_dense(self.value(x))?;
        let rg = self.rg(x);
        self.push(out, Op::Propagate(a, x), rg, "propagate")
    }

    /// Entrywise clamp to `[lo, hi]`; gradient is zero outside the band.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(out, Op::Clamp(a, lo, hi), rg, "clamp")
    }

    /// Mean over rows of `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        if labels.len() != x.rows() || x.rows() == 0 {
            return Err(EggError::shape("cross_entropy", x.shape(), (labels.len(), x.cols())));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= x.cols() {
                return Err(EggError::InvalidArgument(format!(
                    "label {y} out of range for {} classes",
                    x.cols()
                )));
            }
            let row = x.row(i);
            total += log_sum_exp(row) - row[y];
        }
        let out = Matrix::scalar(total / labels.len() as f64);
        let rg = self.rg(logits);
        self.push(out, Op::SoftmaxCrossEntropy(logits, labels.into()), rg, "cross_entropy")
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// taken over all entries of `logits` in row-major order.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        self.weighted_bce_with_logits(logits, targets, 1.0)
    }

    /// As [`Tape::bce_with_logits`] with the positive term scaled:
    /// `−[w·t·log σ(z) + (1−t)·log(1−σ(z))]`.
    pub fn weighted_bce_with_logits(&mut self, logits: Var, targets: &[f64], pos_weight: f64) -> Result<Var> {
        let x = self.value(logits);
        if targets.len() != x.len() || x.is_empty() {
            return Err(EggError::shape("bce_with_logits", x.shape(), (targets.len(), 1)));
        }
        if !(pos_weight > 0.0 && pos_weight.is_finite()) {
            return Err(EggError::InvalidArgument(format!("positive weight {pos_weight} must be positive")));
        }
        let total: f64 = x
            .as_slice()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| {
                let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
                pos_weight * t * (softplus - z) + (1.0 - t) * softplus
            })
            .sum();
        let out = Matrix::scalar(total / targets.len() as f64);
        let rg = self.rg(logits);
        self.push(out, Op::BceWithLogits(logits, targets.into(), pos_weight), rg, "bce_with_logits")
    }

    /// Column of row inner products `z_i·z_j` for each pair.
    pub fn pair_dot(&mut self, z: Var, pairs: Arc<[(usize, usize)]>) -> Result<Var> {
        let x = self.value(z);
        let mut out = Matrix::zeros(pairs.len(), 1);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            if i >= x.rows() || j >= x.rows() {
                return Err(EggError::InvalidArgument(format!("pair ({i}, {j}) out of range")));
            }
            out[(k, 0)] = crate::tensor::matrix::dot(x.row(i), x.row(j));
        }
        let rg = self.rg(z);
        self.push(out, Op::PairDot(z, pairs), rg, "pair_dot")
    }

    /// Row-major upper triangle (with diagonal) of a symmetric matrix as a
    /// `1×m(m+1)/2` row.
    pub fn flatten_sym(&mut self, a: Var) -> Result<Var> {
        let flat = crate::grassmann::flatten_sym(self.value(a))?;
        let out = Matrix::new(1, flat.len(), flat)?;
        let rg = self.rg(a);
        self.push(out, Op::FlattenSym(a), rg, "flatten_sym")
    }

    /// Thin SVD of the value of `x`, truncated to the rank returned by
    /// `choose_rank` (called with the full descending singular values).
    pub fn svd(&mut self, x: Var, choose_rank: impl FnOnce(&[f64]) -> Result<usize>) -> Result<SvdVars> {
        let factors = svd::svd_full(self.value(x))?;
        let p = choose_rank(&factors.s)?;
        if p == 0 || p > factors.rank() {
            return Err(EggError::InvalidArgument(format!(
                "rank {p} outside 1..={}",
                factors.rank()
            )));
        }
        let factors = Arc::new(factors);
        let rg = self.rg(x);
        let u = factors.u.leading_columns(p);
        let v = factors.v.leading_columns(p);
        let s = Matrix::new(1, p, factors.s[..p].to_vec())?;
        let u = self.push(u, Op::SvdU(x, factors.clone()), rg, "svd_u")?;
        let s = self.push(s, Op::SvdS(x, factors.clone()), rg, "svd_s")?;
        let v = self.push(v, Op::SvdV(x, factors.clone()), rg, "svd_v")?;
        Ok(SvdVars { u, s, v, p, factors })
    }

    /// Reverse pass from a `1×1` node.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(EggError::InvalidArgument(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.degenerate_pairs = 0;
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let (contributions, degenerate) = self.local_backward(idx, &g)?;
            self.degenerate_pairs += degenerate;
            grads[idx] = Some(g);
            for (parent, c) in contributions {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&c)?,
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn local_backward(&self, idx: usize, g: &Matrix) -> Result<(Vec<(Var, Matrix)>, usize)> {
        let node = &self.nodes[idx];
        let mut degenerate = 0;
        let val = |v: Var| -> &Matrix { &self.nodes[v.0].value };
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let out = &node.value;
        let mut res = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if rg(*a) {
                    res.push((*a, g.matmul_nt(val(*b))?));
                }
                if rg(*b) {
                    res.push((*b, val(*a).matmul_tn(g)?));
                }
            }
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.scale(-1.0)));
            }
            Op::Hadamard(a, b) => {
                if rg(*a) {
                    res.push((*a, g.hadamard(val(*b))?));
                }
                if rg(*b) {
                    res.push((*b, g.hadamard(val(*a))?));
                }
            }
            Op::Relu(a) => {
                let mask = val(*a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                res.push((*a, g.hadamard(&mask)?));
            }
            Op::Sigmoid(a) => {
                let d = out.map(|y| y * (1.0 - y));
                res.push((*a, g.hadamard(&d)?));
            }
            Op::Exp(a) => res.push((*a, g.hadamard(out)?)),
            Op::Log(a) => {
                let inv = val(*a).map(|v| 1.0 / v);
                res.push((*a, g.hadamard(&inv)?));
            }
            Op::Scale(a, c) => res.push((*a, g.scale(*c))),
            Op::AddRow(x, b) => {
                res.push((*x, g.clone()));
                if rg(*b) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, &v) in gb.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    res.push((*b, gb));
                }
            }
            Op::Transpose(a) => res.push((*a, g.transpose())),
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                res.push((*a, Matrix::filled(r, c, g[(0, 0)])));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                res.push((*a, Matrix::filled(r, c, g[(0, 0)] / (r * c) as f64)));
            }
            Op::ColSum(a) | Op::ColMean(a) => {
                let (r, c) = val(*a).shape();
                let factor = if matches!(node.op, Op::ColMean(_)) { 1.0 / r as f64 } else { 1.0 };
                res.push((*a, Matrix::from_fn(r, c, |_, j| g[(0, j)] * factor)));
            }
            Op::ColMax(a, arg) => {
                let (r, c) = val(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for (j, &i) in arg.iter().enumerate() {
                    ga[(i, j)] = g[(0, j)];
                }
                res.push((*a, ga));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    if rg(p) {
                        let slice = g.as_slice()[offset * c..(offset + r) * c].to_vec();
                        res.push((p, Matrix::new(r, c, slice)?));
                    }
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = val(p).shape();
                    if rg(p) {
                        res.push((p, Matrix::from_fn(r, c, |i, j| g[(i, offset + j)])));
                    }
                    offset += c;
                }
            }
            Op::Propagate(a, x) => res.push((*x, a.transpose_mul_dense(g)?)),
            Op::Clamp(a, lo, hi) => {
                let mask = val(*a).map(|v| if v >= *lo && v <= *hi { 1.0 } else { 0.0 });
                res.push((*a, g.hadamard(&mask)?));
            }
            Op::SoftmaxCrossEntropy(a, labels) => {
                let x = val(*a);
                let scale = g[(0, 0)] / labels.len() as f64;
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for (i, &y) in labels.iter().enumerate() {
                    let row = x.row(i);
                    let lse = log_sum_exp(row);
                    for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                        let p = (row[j] - lse).exp();
                        *o = scale * (p - if j == y { 1.0 } else { 0.0 });
                    }
                }
                res.push((*a, ga));
            }
            Op::BceWithLogits(a, targets, w) => {
                let x = val(*a);
                let scale = g[(0, 0)] / targets.len() as f64;
                let data = x
                    .as_slice()
                    .iter()
                    .zip(targets.iter())
                    .map(|(&z, &t)| {
                        let p = sigmoid(z);
                        scale * ((1.0 - t) * p - w * t * (1.0 - p))
                    })
                    .collect();
                res.push((*a, Matrix::new(x.rows(), x.cols(), data)?));
            }
            Op::PairDot(z, pairs) => {
                let x = val(*z);
                let mut gz = Matrix::zeros(x.rows(), x.cols());
                for (k, &(i, j)) in pairs.iter().enumerate() {
                    let gk = g[(k, 0)];
                    if gk == 0.0 {
                        continue;
                    }
                    for c in 0..x.cols() {
                        let (zi, zj) = (x[(i, c)], x[(j, c)]);
                        gz[(i, c)] += gk * zj;
                        gz[(j, c)] += gk * zi;
                    }
                }
                res.push((*z, gz));
            }
            Op::FlattenSym(a) => {
                let m = val(*a).rows();
                let mut ga = Matrix::zeros(m, m);
                let mut k = 0;
                for i in 0..m {
                    for j in i..m {
                        ga[(i, j)] = g[(0, k)];
                        k += 1;
                    }
                }
                res.push((*a, ga));
            }
            Op::SvdU(x, f) | Op::SvdS(x, f) | Op::SvdV(x, f) => {
                let adj = match &node.op {
                    Op::SvdU(..) => SvdAdjoints {
                        u: Some(g.clone()),
                        ..Default::default()
                    },
                    Op::SvdS(..) => SvdAdjoints {
                        s: Some(g.as_slice().to_vec()),
                        ..Default::default()
                    },
                    _ => SvdAdjoints {
                        v: Some(g.clone()),
                        ..Default::default()
                    },
                };
                let sg = svd::svd_backward(f, &adj, self.svd_epsilon)?;
                degenerate += sg.degenerate_pairs;
                res.push((*x, sg.grad));
            }
        }
        Ok((res, degenerate))
    }

    /// Per-parameter gradients from a finished backward pass.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Matrix)> {
        let mut out: Vec<(ParamId, Matrix)> = self
            .param_vars
            .iter()
            .filter_map(|(&id, &v)| grads.get(v).map(|g| (id, g.clone())))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_identity_hadamard() {
        let mut t = Tape::new();
        let x = t.input(Matrix::from_rows(&[[-1.0, 2.0]])).unwrap();
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y), &Matrix::from_rows(&[[0.0, 2.0]]));
        let m = Matrix::from_rows(&[[1.5, -2.0], [0.25, 4.0]]);
        let a = t.constant(m.clone()).unwrap();
        let ones = t.constant(Matrix::ones(2, 2)).unwrap();
        let h = t.hadamard(a, ones).unwrap();
        assert_eq!(t.value(h), &m);
    }

    #[test]
    fn elementwise_argument_checks() {
        let mut t = Tape::new();
        let x = t.input(Matrix::from_rows(&[[1.0, 0.0]])).unwrap();
        assert!(t.elementwise(ElementwiseKind::Add, x, None).is_err());
        assert!(t.elementwise(ElementwiseKind::Relu, x, Some(x)).is_err());
        assert!(matches!(t.log(x), Err(EggError::Domain { .. })));
        let y = t.input(Matrix::zeros(2, 2)).unwrap();
        assert!(matches!(t.add(x, y), Err(EggError::Shape { .. })));
    }

    #[test]
    fn overflow_is_reported() {
        let mut t = Tape::new();
        let x = t.input(Matrix::scalar(1000.0)).unwrap();
        assert!(matches!(t.exp(x), Err(EggError::NonFinite(_))));
    }

    #[test]
    fn sum_and_square_norm_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]));
        let mut t = Tape::new();
        let wv = t.param(&store, w).unwrap();
        let s = t.sum(wv).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(wv).unwrap(), &Matrix::ones(2, 2));

        let mut t = Tape::new();
        let wv = t.param(&store, w).unwrap();
        let sq = t.hadamard(wv, wv).unwrap();
        let s = t.sum(sq).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(wv).unwrap(), &store.value(w).scale(2.0));
        let pg = t.param_grads(&g);
        assert_eq!(pg.len(), 1);
        assert_eq!(pg[0].0, w);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.input(Matrix::zeros(2, 1)).unwrap();
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x) + sum(3x) → grad 4
        let mut t = Tape::new();
        let x = t.input(Matrix::from_rows(&[[1.0, 2.0]])).unwrap();
        let a = t.sum(x).unwrap();
        let x3 = t.scale(x, 3.0).unwrap();
        let b = t.sum(x3).unwrap();
        let l = t.add(a, b).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &Matrix::filled(1, 2, 4.0));
    }

    #[test]
    fn cross_entropy_values() {
        let mut t = Tape::new();
        let z = t.input(Matrix::zeros(3, 2)).unwrap();
        let l = t.softmax_cross_entropy(z, &[0, 1, 1]).unwrap();
        assert!((t.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
        let z = t.input(Matrix::from_rows(&[[10.0, 0.0]])).unwrap();
        let l = t.softmax_cross_entropy(z, &[0]).unwrap();
        assert!(t.scalar(l) < 1e-4);
        assert!(t.softmax_cross_entropy(z, &[2]).is_err());
    }
}
