//! The computation record.
//!
//! A [`Tape`] stores every operation in creation order, so operands always
//! precede results. [`Tape::grad`] walks the record backwards and emits the
//! adjoint computation as ordinary recorded operations; the returned gradients
//! are therefore themselves differentiable, which is what nested (second
//! order) differentiation needs.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::tensor::{gemm, Tensor};

type Id = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Leaf,
    MatMul { a: Id, b: Id, ta: bool, tb: bool },
    Add(Id, Id),
    Sub(Id, Id),
    Mul(Id, Id),
    AddRow { a: Id, row: Id },
    Scale(Id, f64),
    AddScalar(Id, f64),
    Tanh(Id),
    Relu(Id),
    Exp(Id),
    Log(Id),
    Recip(Id),
    /// `1/a`, with 0 where `a == 0`.
    SafeRecip(Id),
    /// `sqrt(a)`; its derivative is taken as 0 at `a == 0`.
    Sqrt(Id),
    Sum(Id),
    SumRows(Id),
    SumCols(Id),
    Broadcast { a: Id, rows: usize, cols: usize },
    Reshape { a: Id, rows: usize, cols: usize },
    Minimum(Id, Id),
    Clamp { a: Id, lo: f64, hi: f64 },
}

impl OpKind {
    fn for_each_input(&self, mut f: impl FnMut(Id)) {
        use OpKind::*;
        match *self {
            Leaf => {}
            MatMul { a, b, .. } | Add(a, b) | Sub(a, b) | Mul(a, b) | Minimum(a, b) => {
                f(a);
                f(b)
            }
            AddRow { a, row } => {
                f(a);
                f(row)
            }
            Scale(a, _) | AddScalar(a, _) | Tanh(a) | Relu(a) | Exp(a) | Log(a) | Recip(a)
            | SafeRecip(a) | Sqrt(a) | Sum(a) | SumRows(a) | SumCols(a) => f(a),
            Broadcast { a, .. } | Reshape { a, .. } | Clamp { a, .. } => f(a),
        }
    }
}

struct Node {
    op: OpKind,
    value: Rc<Tensor>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: Id,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.tape.value_of(self.id).shape())
            .finish()
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

    /// Operation trace in record order.
    pub fn ops(&self) -> Vec<OpKind> {
        self.nodes.borrow().iter().map(|n| n.op).collect()
    }

    /// Records a leaf (input, parameter or constant).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(OpKind::Leaf, value)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.push(OpKind::Leaf, Tensor::from_raw(1, 1, vec![value]))
    }

    fn push(&self, op: OpKind, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value: Rc::new(value),
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: Id) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn owns(&self, v: Var<'_>) -> bool {
        std::ptr::eq(self, v.tape)
    }

    /// Reverse-mode gradient of the scalar `output` with respect to each of
    /// `wrt`. Every `wrt` entry must influence `output`.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        self.grad_impl(output, wrt, false)
    }

    /// Like [`Tape::grad`], but variables that do not influence `output` get a
    /// zero gradient instead of an error.
    pub fn grad_allow_unused<'t>(
        &'t self,
        output: Var<'t>,
        wrt: &[Var<'t>],
    ) -> Result<Vec<Var<'t>>> {
        self.grad_impl(output, wrt, true)
    }

    fn grad_impl<'t>(
        &'t self,
        output: Var<'t>,
        wrt: &[Var<'t>],
        allow_unused: bool,
    ) -> Result<Vec<Var<'t>>> {
        if !self.owns(output) {
            return Err(AutodiffError::NotOnTape(output.id));
        }
        if let Some(v) = wrt.iter().find(|v| !self.owns(**v) || v.id >= self.len()) {
            return Err(AutodiffError::NotOnTape(v.id));
        }
        let out_val = self.value_of(output.id);
        if !out_val.is_scalar() {
            return Err(AutodiffError::NotScalar {
                op: "grad",
                shape: out_val.shape().to_vec(),
            });
        }

        let end = output.id;
        // Which nodes lie downstream of some `wrt`.
        let mut relevant = vec![false; end + 1];
        for v in wrt {
            if v.id <= end {
                relevant[v.id] = true;
            }
        }
        let start = wrt.iter().map(|v| v.id).min().unwrap_or(end);
        {
            let nodes = self.nodes.borrow();
            for id in start..=end {
                if relevant[id] {
                    continue;
                }
                let mut r = false;
                nodes[id].op.for_each_input(|i| r |= relevant[i]);
                relevant[id] = r;
            }
        }

        let mut adjoint: Vec<Option<Id>> = vec![None; end + 1];
        if relevant[end] {
            adjoint[end] = Some(self.scalar(1.0).id);
        }
        for id in (start..=end).rev() {
            let Some(g) = adjoint[id] else { continue };
            if !relevant[id] {
                continue;
            }
            let op = self.nodes.borrow()[id].op;
            let g = Var { tape: self, id: g };
            let y = Var { tape: self, id };
            self.backprop(op, y, g, &relevant, &mut adjoint)?;
        }

        wrt.iter()
            .map(|v| match adjoint.get(v.id).copied().flatten() {
                Some(g) => Ok(Var { tape: self, id: g }),
                None if allow_unused => {
                    let val = self.value_of(v.id);
                    Ok(self.constant(Tensor::zeros(val.rows(), val.cols())))
                }
                None => Err(AutodiffError::Unreachable(v.id)),
            })
            .collect()
    }

    fn accumulate<'t>(
        &'t self,
        adjoint: &mut [Option<Id>],
        relevant: &[bool],
        target: Id,
        contribution: impl FnOnce() -> Result<Var<'t>>,
    ) -> Result<()> {
        if !relevant[target] {
            return Ok(());
        }
        let c = contribution()?;
        adjoint[target] = Some(match adjoint[target] {
            None => c.id,
            Some(prev) => Var { tape: self, id: prev }.add(c)?.id,
        });
        Ok(())
    }

    fn backprop<'t>(
        &'t self,
        op: OpKind,
        y: Var<'t>,
        g: Var<'t>,
        relevant: &[bool],
        adjoint: &mut [Option<Id>],
    ) -> Result<()> {
        use OpKind::*;
        let var = |id| Var { tape: self, id };
        match op {
            Leaf => {}
            MatMul { a, b, ta, tb } => {
                let (va, vb) = (var(a), var(b));
                self.accumulate(adjoint, relevant, a, || {
                    if ta {
                        vb.matmul_t(g, tb, true)
                    } else {
                        g.matmul_t(vb, false, !tb)
                    }
                })?;
                self.accumulate(adjoint, relevant, b, || {
                    if tb {
                        g.matmul_t(va, true, ta)
                    } else {
                        va.matmul_t(g, !ta, false)
                    }
                })?;
            }
            Add(a, b) => {
                self.accumulate(adjoint, relevant, a, || Ok(g))?;
                self.accumulate(adjoint, relevant, b, || Ok(g))?;
            }
            Sub(a, b) => {
                self.accumulate(adjoint, relevant, a, || Ok(g))?;
                self.accumulate(adjoint, relevant, b, || Ok(g.scale(-1.0)))?;
            }
            Mul(a, b) => {
                self.accumulate(adjoint, relevant, a, || g.mul(var(b)))?;
                self.accumulate(adjoint, relevant, b, || g.mul(var(a)))?;
            }
            AddRow { a, row } => {
                self.accumulate(adjoint, relevant, a, || Ok(g))?;
                self.accumulate(adjoint, relevant, row, || Ok(g.sum_rows()))?;
            }
            Scale(a, s) => self.accumulate(adjoint, relevant, a, || Ok(g.scale(s)))?,
            AddScalar(a, _) => self.accumulate(adjoint, relevant, a, || Ok(g))?,
            Tanh(a) => self.accumulate(adjoint, relevant, a, || {
                let d = y.mul(y)?.scale(-1.0).add_scalar(1.0);
                g.mul(d)
            })?,
            Relu(a) => self.accumulate(adjoint, relevant, a, || {
                let mask = self.value_of(a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                g.mul(self.constant(mask))
            })?,
            Exp(a) => self.accumulate(adjoint, relevant, a, || g.mul(y))?,
            Log(a) => self.accumulate(adjoint, relevant, a, || g.mul(var(a).recip()))?,
            Recip(a) | SafeRecip(a) => self.accumulate(adjoint, relevant, a, || {
                Ok(g.mul(y.mul(y)?)?.scale(-1.0))
            })?,
            Sqrt(a) => self.accumulate(adjoint, relevant, a, || {
                Ok(g.mul(y.safe_recip())?.scale(0.5))
            })?,
            Sum(a) | SumRows(a) | SumCols(a) => self.accumulate(adjoint, relevant, a, || {
                let s = self.value_of(a);
                g.broadcast(s.rows(), s.cols())
            })?,
            Broadcast { a, .. } => self.accumulate(adjoint, relevant, a, || {
                let s = self.value_of(a);
                let mut r = g;
                if s.rows() == 1 && y.rows() != 1 {
                    r = r.sum_rows();
                }
                if s.cols() == 1 && y.cols() != 1 {
                    r = r.sum_cols();
                }
                Ok(r)
            })?,
            Reshape { a, .. } => self.accumulate(adjoint, relevant, a, || {
                let s = self.value_of(a);
                g.reshape(s.rows(), s.cols())
            })?,
            Minimum(a, b) => {
                let (av, bv) = (self.value_of(a), self.value_of(b));
                let mask_a: Vec<f64> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(x, y)| if x <= y { 1.0 } else { 0.0 })
                    .collect();
                let (r, c) = (av.rows(), av.cols());
                let mask_b = mask_a.iter().map(|m| 1.0 - m).collect();
                self.accumulate(adjoint, relevant, a, || {
                    g.mul(self.constant(Tensor::from_raw(r, c, mask_a)))
                })?;
                self.accumulate(adjoint, relevant, b, || {
                    g.mul(self.constant(Tensor::from_raw(r, c, mask_b)))
                })?;
            }
            Clamp { a, lo, hi } => self.accumulate(adjoint, relevant, a, || {
                let mask = self
                    .value_of(a)
                    .map(|v| if (lo..=hi).contains(&v) { 1.0 } else { 0.0 });
                g.mul(self.constant(mask))
            })?,
        }
        Ok(())
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn same_shape(a: &Tensor, b: &Tensor) -> bool {
    a.rows() == b.rows() && a.cols() == b.cols()
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    /// Scalar value of a `1 x 1` variable.
    pub fn item(&self) -> f64 {
        self.value().data()[0]
    }

    /// Same value recorded as a fresh constant, cutting the gradient path.
    pub fn detach(&self) -> Var<'t> {
        let v = self.value();
        self.tape.constant((*v).clone())
    }

    fn unary(&self, op: OpKind, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value();
        let out = Tensor::from_raw(v.rows(), v.cols(), v.data().iter().map(|&x| f(x)).collect());
        self.tape.push(op, out)
    }

    fn zip(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: OpKind,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        debug_assert!(std::ptr::eq(self.tape, other.tape));
        let (a, b) = (self.value(), other.value());
        if !same_shape(&a, &b) {
            return Err(mismatch(name, &a, &b));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.tape.push(op, Tensor::from_raw(a.rows(), a.cols(), data)))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) * op(other)` where the flags transpose the operands.
    pub fn matmul_t(self, other: Var<'t>, ta: bool, tb: bool) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let k_a = if ta { a.rows() } else { a.cols() };
        let k_b = if tb { b.cols() } else { b.rows() };
        if k_a != k_b {
            return Err(mismatch("matmul", &a, &b));
        }
        let out = gemm(&a, ta, &b, tb);
        Ok(self.tape.push(
            OpKind::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
            out,
        ))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "add", OpKind::Add(self.id, other.id), |x, y| x + y)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "sub", OpKind::Sub(self.id, other.id), |x, y| x - y)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "mul", OpKind::Mul(self.id, other.id), |x, y| x * y)
    }

    pub fn minimum(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "minimum", OpKind::Minimum(self.id, other.id), f64::min)
    }

    /// Adds a `1 x c` row to every row of `self`.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let (a, r) = (self.value(), row.value());
        if r.rows() != 1 || r.cols() != a.cols() {
            return Err(mismatch("add_row", &a, &r));
        }
        let c = a.cols();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + r.data()[i % c])
            .collect();
        Ok(self.tape.push(
            OpKind::AddRow {
                a: self.id,
                row: row.id,
            },
            Tensor::from_raw(a.rows(), c, data),
        ))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(OpKind::Scale(self.id, s), |x| x * s)
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.unary(OpKind::AddScalar(self.id, s), |x| x + s)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(OpKind::Tanh(self.id), f64::tanh)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(OpKind::Relu(self.id), |x| x.max(0.0))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(OpKind::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(OpKind::Log(self.id), f64::ln)
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(OpKind::Recip(self.id), |x| 1.0 / x)
    }

    pub fn safe_recip(self) -> Var<'t> {
        self.unary(OpKind::SafeRecip(self.id), |x| if x == 0.0 { 0.0 } else { 1.0 / x })
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(OpKind::Sqrt(self.id), f64::sqrt)
    }

    pub fn square(self) -> Var<'t> {
        // Infallible: operands share a shape.
        self.mul(self).expect("square of itself")
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(OpKind::Clamp { a: self.id, lo, hi }, |x| x.clamp(lo, hi))
    }

    /// Sum of all entries as a `1 x 1` value.
    pub fn sum(self) -> Var<'t> {
        let v = self.value();
        self.tape
            .push(OpKind::Sum(self.id), Tensor::from_raw(1, 1, vec![v.sum()]))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Column sums: `r x c -> 1 x c`.
    pub fn sum_rows(self) -> Var<'t> {
        let v = self.value();
        let (r, c) = (v.rows(), v.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(v.row_slice(i)) {
                *o += x;
            }
        }
        self.tape
            .push(OpKind::SumRows(self.id), Tensor::from_raw(1, c, out))
    }

    /// Row sums: `r x c -> r x 1`.
    pub fn sum_cols(self) -> Var<'t> {
        let v = self.value();
        let r = v.rows();
        let out = (0..r).map(|i| v.row_slice(i).iter().sum()).collect();
        self.tape
            .push(OpKind::SumCols(self.id), Tensor::from_raw(r, 1, out))
    }

    /// Expands a `1 x 1`, `1 x c` or `r x 1` value to `rows x cols`.
    pub fn broadcast(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let v = self.value();
        let (r, c) = (v.rows(), v.cols());
        if !((r == rows || r == 1) && (c == cols || c == 1)) {
            return Err(AutodiffError::ShapeMismatch {
                op: "broadcast",
                lhs: v.shape().to_vec(),
                rhs: vec![rows, cols],
            });
        }
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let ri = if r == 1 { 0 } else { i };
            for j in 0..cols {
                let cj = if c == 1 { 0 } else { j };
                out.push(v.data()[ri * c + cj]);
            }
        }
        Ok(self.tape.push(
            OpKind::Broadcast {
                a: self.id,
                rows,
                cols,
            },
            Tensor::from_raw(rows, cols, out),
        ))
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let v = self.value();
        let out = v.reshaped(rows, cols)?;
        Ok(self.tape.push(
            OpKind::Reshape {
                a: self.id,
                rows,
                cols,
            },
            out,
        ))
    }

    /// Row-wise log-softmax, shifted by the (detached) row maximum.
    pub fn log_softmax(self) -> Result<Var<'t>> {
        let v = self.value();
        let (r, c) = (v.rows(), v.cols());
        let maxes: Vec<f64> = (0..r)
            .map(|i| v.row_slice(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let shift = self
            .tape
            .constant(Tensor::from_raw(r, 1, maxes))
            .broadcast(r, c)?;
        let shifted = self.sub(shift)?;
        let lse = shifted.exp().sum_cols().ln().broadcast(r, c)?;
        shifted.sub(lse)
    }

    pub fn softmax(self) -> Result<Var<'t>> {
        Ok(self.log_softmax()?.exp())
    }

    /// Per-row Euclidean norms: `r x c -> r x 1`.
    pub fn row_norms(self) -> Var<'t> {
        self.square().sum_cols().sqrt()
    }

    /// Frobenius norm of the whole value.
    pub fn norm(self) -> Var<'t> {
        self.square().sum().sqrt()
    }
}
