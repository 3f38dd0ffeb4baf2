use std::cell::RefCell;
use std::sync::Arc;

use super::{NumError, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    Sigmoid(usize),
    Gelu(usize),
    Exp(usize),
    Log(usize),
    Clamp(usize, f64, f64),
    SoftmaxRows(usize),
    LayerNormRows { x: usize, inv_std: Vec<f64> },
    MeanRows(usize),
    Sum(usize),
    LogSumExp(usize),
    Transpose(usize),
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SelectRows { x: usize, idx: Vec<usize> },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in execution order for one reverse pass.
///
/// A tape is a single-threaded object; build a fresh one per forward/backward.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

/// Total gradients of one backward call, indexed by tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`; zeros when `var` is not reachable from the loss.
    pub fn get(&self, var: Var<'_>) -> Tensor {
        match self.grads.get(var.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.id];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var<'_>) -> Tensor {
        match self.grads.get_mut(var.id).and_then(Option::take) {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.id];
                Tensor::zeros(r, c)
            }
        }
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
        self.nodes.borrow().is_empty()
    }

    /// Leaf that receives a gradient. The tensor is shared, not copied.
    pub fn param(&self, value: Arc<Tensor>) -> Var<'_> {
        self.push_leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(Arc::new(value), false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push_leaf(Arc::new(value), requires_grad)
    }

    fn push_leaf(&self, value: Arc<Tensor>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var<'_>, NumError> {
        if !value.is_finite() {
            return Err(NumError::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Reverse pass from a scalar `loss`, visiting nodes in exact reverse order.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, NumError> {
        let nodes = self.nodes.borrow();
        let loss_val = &nodes[loss.id].value;
        if !loss_val.is_scalar() {
            return Err(NumError::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                loss_val.rows(),
                loss_val.cols()
            )));
        }
        let shapes: Vec<_> = nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut contribs: Vec<(usize, Tensor)> = Vec::new();
            let mut acc = |target: usize, contrib: Tensor| {
                if nodes[target].requires_grad {
                    contribs.push((target, contrib));
                }
            };
            let val = |i: usize| -> &Tensor { &nodes[i].value };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    acc(id, g);
                }
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        acc(*a, g.matmul(&val(*b).transpose())?);
                    }
                    if nodes[*b].requires_grad {
                        acc(*b, val(*a).transpose().matmul(&g)?);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, map(&g, |v| -v));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    acc(*a, zip(&g, val(*b), |gv, bv| gv * bv));
                    acc(*b, zip(&g, val(*a), |gv, av| gv * av));
                }
                Op::AddRow(a, row) => {
                    acc(*row, col_sums(&g));
                    acc(*a, g);
                }
                Op::MulRow(a, row) => {
                    let r = val(*row);
                    let x = val(*a);
                    let da = Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * r.get(0, j));
                    let prod = zip(&g, x, |gv, xv| gv * xv);
                    acc(*row, col_sums(&prod));
                    acc(*a, da);
                }
                Op::Scale(a, s) => acc(*a, map(&g, |v| v * s)),
                Op::AddConst(a) => acc(*a, g),
                Op::Sigmoid(a) => acc(*a, zip(&g, out, |gv, y| gv * y * (1.0 - y))),
                Op::Gelu(a) => acc(*a, zip(&g, val(*a), |gv, x| gv * gelu_grad(x))),
                Op::Exp(a) => acc(*a, zip(&g, out, |gv, y| gv * y)),
                Op::Log(a) => acc(*a, zip(&g, val(*a), |gv, x| gv / x)),
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    acc(
                        *a,
                        zip(&g, val(*a), |gv, x| if x < lo || x > hi { 0.0 } else { gv }),
                    )
                }
                Op::SoftmaxRows(a) => {
                    let mut dx = Tensor::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let y = out.row(r);
                        let gr = g.row(r);
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..g.cols() {
                            dx.set(r, c, y[c] * (gr[c] - dot));
                        }
                    }
                    acc(*a, dx);
                }
                Op::LayerNormRows { x, inv_std } => {
                    let n = g.cols() as f64;
                    let mut dx = Tensor::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let y = out.row(r);
                        let gr = g.row(r);
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = y.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..g.cols() {
                            dx.set(r, c, inv_std[r] * (gr[c] - mean_g - y[c] * mean_gy));
                        }
                    }
                    acc(*x, dx);
                }
                Op::MeanRows(a) => {
                    let rows = val(*a).rows();
                    let inv = 1.0 / rows as f64;
                    acc(*a, Tensor::from_fn(rows, g.cols(), |_, c| g.get(0, c) * inv));
                }
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    acc(*a, Tensor::filled(r, c, g.item()));
                }
                Op::LogSumExp(a) => {
                    let x = val(*a);
                    let lse = out.item();
                    let gi = g.item();
                    acc(*a, map(x, |v| gi * (v - lse).exp()));
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::SliceCols { x, start } => {
                    let (r, c) = val(*x).shape();
                    let mut dx = Tensor::zeros(r, c);
                    for i in 0..r {
                        for j in 0..g.cols() {
                            dx.set(i, start + j, g.get(i, j));
                        }
                    }
                    acc(*x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = val(p).shape();
                        let off = offset;
                        acc(p, Tensor::from_fn(r, c, |i, j| g.get(i, off + j)));
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = val(p).shape();
                        let off = offset;
                        acc(p, Tensor::from_fn(r, c, |i, j| g.get(off + i, j)));
                        offset += r;
                    }
                }
                Op::SelectRows { x, idx } => {
                    let (r, c) = val(*x).shape();
                    let mut dx = Tensor::zeros(r, c);
                    for (k, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            let v = dx.get(i, j) + g.get(k, j);
                            dx.set(i, j, v);
                        }
                    }
                    acc(*x, dx);
                }
            }
            for (target, contrib) in contribs {
                match &mut grads[target] {
                    Some(existing) => existing.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.rows(), t.cols(), data).expect("shape preserved")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shape preserved")
}

fn col_sums(t: &Tensor) -> Tensor {
    Tensor::from_fn(1, t.cols(), |_, c| (0..t.rows()).map(|r| t.get(r, c)).sum())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(name: &str, a: &Tensor, b: &Tensor) -> Result<(), NumError> {
    if a.shape() != b.shape() {
        return Err(NumError::Shape(format!(
            "{name}: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

fn row_compatible(name: &str, a: &Tensor, row: &Tensor) -> Result<(), NumError> {
    if row.rows() != 1 || row.cols() != a.cols() {
        return Err(NumError::Shape(format!(
            "{name}: row operand {}x{} against {}x{}",
            row.rows(),
            row.cols(),
            a.rows(),
            a.cols()
        )));
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn check_tape(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.check_tape(&other);
        let out = self.value().matmul(&other.value())?;
        self.tape.push("matmul", out, Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.check_tape(&other);
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        self.tape.push("add", zip(&a, &b, |x, y| x + y), Op::Add(self.id, other.id), &[self.id, other.id])
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.check_tape(&other);
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        self.tape.push("sub", zip(&a, &b, |x, y| x - y), Op::Sub(self.id, other.id), &[self.id, other.id])
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, NumError> {
        self.check_tape(&other);
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        self.tape.push("mul", zip(&a, &b, |x, y| x * y), Op::Mul(self.id, other.id), &[self.id, other.id])
    }

    /// Adds a `1×n` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>, NumError> {
        self.check_tape(&row);
        let (a, r) = (self.value(), row.value());
        row_compatible("add_row", &a, &r)?;
        let out = Tensor::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) + r.get(0, j));
        self.tape.push("add_row", out, Op::AddRow(self.id, row.id), &[self.id, row.id])
    }

    /// Multiplies every row elementwise by a `1×n` row.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>, NumError> {
        self.check_tape(&row);
        let (a, r) = (self.value(), row.value());
        row_compatible("mul_row", &a, &r)?;
        let out = Tensor::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) * r.get(0, j));
        self.tape.push("mul_row", out, Op::MulRow(self.id, row.id), &[self.id, row.id])
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>, NumError> {
        let out = map(&self.value(), |v| v * s);
        self.tape.push("scale", out, Op::Scale(self.id, s), &[self.id])
    }

    pub fn add_const(self, c: f64) -> Result<Var<'t>, NumError> {
        let out = map(&self.value(), |v| v + c);
        self.tape.push("add_const", out, Op::AddConst(self.id), &[self.id])
    }

    pub fn sigmoid(self) -> Result<Var<'t>, NumError> {
        let out = map(&self.value(), sigmoid);
        self.tape.push("sigmoid", out, Op::Sigmoid(self.id), &[self.id])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Result<Var<'t>, NumError> {
        let out = map(&self.value(), gelu);
        self.tape.push("gelu", out, Op::Gelu(self.id), &[self.id])
    }

    pub fn exp(self) -> Result<Var<'t>, NumError> {
        let out = map(&self.value(), f64::exp);
        self.tape.push("exp", out, Op::Exp(self.id), &[self.id])
    }

    /// Natural log; non-positive inputs trip the non-finite check.
    pub fn ln(self) -> Result<Var<'t>, NumError> {
        let x = self.value();
        if x.data().iter().any(|&v| v <= 0.0) {
            return Err(NumError::NonFinite { op: "ln" });
        }
        self.tape.push("ln", map(&x, f64::ln), Op::Log(self.id), &[self.id])
    }

    /// Elementwise clamp; the gradient is zero where the input lies outside `[lo, hi]`.
    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>, NumError> {
        let out = map(&self.value(), |v| v.clamp(lo, hi));
        self.tape.push("clamp", out, Op::Clamp(self.id, lo, hi), &[self.id])
    }

    pub fn softmax_rows(self) -> Result<Var<'t>, NumError> {
        let out = softmax_rows(&self.value());
        self.tape.push("softmax_rows", out, Op::SoftmaxRows(self.id), &[self.id])
    }

    /// Per-row standardization without affine terms.
    pub fn normalize_rows(self) -> Result<Var<'t>, NumError> {
        let x = self.value();
        let n = x.cols() as f64;
        let mut out = Tensor::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for c in 0..x.cols() {
                out.set(r, c, (row[c] - mean) * inv);
            }
            inv_std.push(inv);
        }
        self.tape
            .push("layer_norm", out, Op::LayerNormRows { x: self.id, inv_std }, &[self.id])
    }

    /// Mean over rows, giving a `1×n` row.
    pub fn mean_rows(self) -> Result<Var<'t>, NumError> {
        let x = self.value();
        let inv = 1.0 / x.rows() as f64;
        let out = Tensor::from_fn(1, x.cols(), |_, c| (0..x.rows()).map(|r| x.get(r, c)).sum::<f64>() * inv);
        self.tape.push("mean_rows", out, Op::MeanRows(self.id), &[self.id])
    }

    pub fn sum(self) -> Result<Var<'t>, NumError> {
        let s = self.value().data().iter().sum();
        self.tape.push("sum", Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    /// Stable log of the sum of exponentials over all entries.
    pub fn log_sum_exp(self) -> Result<Var<'t>, NumError> {
        let x = self.value();
        let out = Tensor::scalar(log_sum_exp(x.data()));
        self.tape.push("log_sum_exp", out, Op::LogSumExp(self.id), &[self.id])
    }

    pub fn transpose(self) -> Result<Var<'t>, NumError> {
        let out = self.value().transpose();
        self.tape.push("transpose", out, Op::Transpose(self.id), &[self.id])
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>, NumError> {
        let x = self.value();
        if len == 0 || start + len > x.cols() {
            return Err(NumError::Shape(format!(
                "slice_cols {start}..{} of {} columns",
                start + len,
                x.cols()
            )));
        }
        let out = Tensor::from_fn(x.rows(), len, |r, c| x.get(r, start + c));
        self.tape
            .push("slice_cols", out, Op::SliceCols { x: self.id, start }, &[self.id])
    }

    pub fn select_rows(self, idx: &[usize]) -> Result<Var<'t>, NumError> {
        let x = self.value();
        if idx.is_empty() || idx.iter().any(|&i| i >= x.rows()) {
            return Err(NumError::Shape(format!(
                "select_rows {idx:?} of {} rows",
                x.rows()
            )));
        }
        let out = x.select_rows(idx);
        self.tape.push(
            "select_rows",
            out,
            Op::SelectRows {
                x: self.id,
                idx: idx.to_vec(),
            },
            &[self.id],
        )
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>, NumError> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::Shape("concat_cols of nothing".into()))?;
        let tape = first.tape;
        let vals: Vec<_> = parts.iter().map(Var::value).collect();
        let rows = vals[0].rows();
        if vals.iter().any(|v| v.rows() != rows) {
            return Err(NumError::Shape("concat_cols with differing row counts".into()));
        }
        let cols: usize = vals.iter().map(|v| v.cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for v in &vals {
                for c in 0..v.cols() {
                    out.set(r, off + c, v.get(r, c));
                }
                off += v.cols();
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        tape.push("concat_cols", out, Op::ConcatCols(ids.clone()), &ids)
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>, NumError> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::Shape("concat_rows of nothing".into()))?;
        let tape = first.tape;
        let vals: Vec<_> = parts.iter().map(Var::value).collect();
        let cols = vals[0].cols();
        if vals.iter().any(|v| v.cols() != cols) {
            return Err(NumError::Shape("concat_rows with differing column counts".into()));
        }
        let mut data = Vec::new();
        for v in &vals {
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / cols;
        let out = Tensor::new(rows, cols, data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        tape.push("concat_rows", out, Op::ConcatRows(ids.clone()), &ids)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for c in 0..x.cols() {
            let e = (row[c] - m).exp();
            out.set(r, c, e);
            z += e;
        }
        for c in 0..x.cols() {
            let v = out.get(r, c) / z;
            out.set(r, c, v);
        }
    }
    out
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
