//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends a node holding its output value and enough
//! context to compute the vector-Jacobian product later. [`Tape::backward`]
//! walks the nodes in exact reverse order, summing gradient contributions
//! from all consumers of a node before that node propagates further.
//!
//! Parameters are read straight from the [`ParamStore`] the tape borrows,
//! so large tables (word embeddings) are never copied onto the tape.
//!
//! Shape rules are strict: apart from [`Tape::add_bias`] (a vector added to
//! every row of a matrix) there is no broadcasting.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<R> {
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, R),
    Offset(usize),
    Concat(Vec<usize>),
    Stack(Vec<usize>),
    Slice(usize, usize),
    Row(usize, usize),
    Embedding(usize, Vec<usize>),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Ln(usize),
    Clamp(usize, R, R),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    Dot(usize, usize),
    Gather(usize, Vec<usize>),
    Transpose(usize),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        x_hat: Vec<R>,
        inv_std: Vec<R>,
        train: bool,
    },
}

#[derive(Debug)]
struct Node<R> {
    value: Option<Tensor<R>>,
    op: Op<R>,
    requires_grad: bool,
}

/// Batch-norm normalisation source.
#[derive(Debug, Clone, Copy)]
pub enum NormStats<'a, R> {
    /// Normalise with the statistics of the current batch.
    Batch,
    /// Normalise with fixed running statistics.
    Running { mean: &'a [R], var: &'a [R] },
}

/// Per-feature statistics of one training batch, returned so the caller can
/// fold them into running averages after the step.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments<R> {
    pub mean: Vec<R>,
    /// Biased (population) variance of the batch.
    pub var: Vec<R>,
    pub batch: usize,
}

pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Recorded computation over parameters borrowed from a [`ParamStore`].
#[derive(Debug)]
pub struct Tape<'s, R> {
    store: &'s ParamStore<R>,
    nodes: Vec<Node<R>>,
    params: BTreeMap<ParamId, Var>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients<R> {
    params: BTreeMap<ParamId, Tensor<R>>,
    vars: BTreeMap<Var, Tensor<R>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient of a parameter, `None` when the loss does not reach it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor<R>> {
        self.params.get(&id)
    }

    /// Gradient of a parameter, zeros when the loss does not reach it.
    pub fn param_or_zero(&self, id: ParamId, store: &ParamStore<R>) -> Tensor<R> {
        self.params
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))
    }

    /// Gradient of a leaf created with [`Tape::var`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<R>> {
        self.vars.get(&v)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }
}

fn matmul_kernel<R: Real>(a: &[R], b: &[R], m: usize, k: usize, n: usize) -> Vec<R> {
    let mut out = vec![R::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

fn softmax_in_place<R: Real>(row: &mut [R]) {
    let max = row.iter().copied().fold(R::neg_infinity(), R::max);
    let mut total = R::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn log_softmax_in_place<R: Real>(row: &mut [R]) {
    let max = row.iter().copied().fold(R::neg_infinity(), R::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<R>().ln() + max;
    for v in row.iter_mut() {
        *v -= lse;
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax<R: Real>(xs: &[R]) -> Vec<R> {
    let mut v = xs.to_vec();
    softmax_in_place(&mut v);
    v
}

/// Numerically stable log-softmax of a slice.
pub fn log_softmax<R: Real>(xs: &[R]) -> Vec<R> {
    let mut v = xs.to_vec();
    log_softmax_in_place(&mut v);
    v
}

/// Rows/cols view used by matmul: vectors act as a row on the left and a
/// column on the right.
fn mm_dims<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Result<(usize, usize, usize, Vec<usize>)> {
    let (m, k1) = if a.is_matrix() { (a.shape()[0], a.shape()[1]) } else { (1, a.len()) };
    let (k2, n) = if b.is_matrix() { (b.shape()[0], b.shape()[1]) } else { (b.len(), 1) };
    if !a.is_matrix() && !b.is_matrix() {
        return Err(Error::shape("matmul", "two vectors; use dot"));
    }
    if k1 != k2 {
        return Err(Error::shape(
            "matmul",
            format!("inner dimensions differ: {:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let shape = match (a.is_matrix(), b.is_matrix()) {
        (true, true) => vec![m, n],
        (false, true) => vec![n],
        (true, false) => vec![m],
        (false, false) => unreachable!(),
    };
    Ok((m, k1, n, shape))
}

impl<'s, R: Real> Tape<'s, R> {
    pub fn new(store: &'s ParamStore<R>) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore<R> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        self.val(v.0)
    }

    fn val(&self, i: usize) -> &Tensor<R> {
        match &self.nodes[i].op {
            Op::Param(id) => self.store.value(*id),
            _ => self.nodes[i].value.as_ref().expect("non-parameter node holds a value"),
        }
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<R>, op: Op<R>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric { op: name });
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn var(&mut self, t: Tensor<R>) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<R>) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Parameter leaf. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: self.store.is_trainable(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Matrix product. A vector on the left acts as a row, on the right as a
    /// column: `[m,k]x[k,n] -> [m,n]`, `[k]x[k,n] -> [n]`, `[m,k]x[k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.val(a.0), self.val(b.0));
        let (m, k, n, shape) = mm_dims(av, bv)?;
        let out = matmul_kernel(av.data(), bv.data(), m, k, n);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push("matmul", Tensor::new(shape, out)?, Op::MatMul(a.0, b.0), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.val(a.0).shape(), self.val(b.0).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (av, bv) = (self.val(a.0), self.val(b.0));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push("add", t, Op::Add(a.0, b.0), rg)
    }

    /// Add a bias vector `[n]` to every row of `x` `[m,n]` (or to a vector `[n]`).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.val(x.0), self.val(bias.0));
        if bv.is_matrix() || xv.cols() != bv.len() {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + bias {:?}", xv.shape(), bv.shape()),
            ));
        }
        let n = bv.len();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv.data()[i % n])
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x.0) || self.rg(bias.0);
        self.push("add_bias", t, Op::AddBias(x.0, bias.0), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (av, bv) = (self.val(a.0), self.val(b.0));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push("mul", t, Op::Mul(a.0, b.0), rg)
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, c: R) -> Result<Var> {
        let xv = self.val(x.0);
        let data = xv.data().iter().map(|&v| v * c).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x.0);
        self.push("scale", t, Op::Scale(x.0, c), rg)
    }

    /// Add a constant to every element.
    pub fn offset(&mut self, x: Var, c: R) -> Result<Var> {
        let xv = self.val(x.0);
        let data = xv.data().iter().map(|&v| v + c).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x.0);
        self.push("offset", t, Op::Offset(x.0), rg)
    }

    /// Concatenate vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let mut data = Vec::new();
        let mut rg = false;
        for p in parts {
            let v = self.val(p.0);
            if v.is_matrix() {
                return Err(Error::shape("concat", format!("expects vectors, got {:?}", v.shape())));
            }
            data.extend_from_slice(v.data());
            rg |= self.rg(p.0);
        }
        let t = Tensor::vector(data);
        self.push("concat", t, Op::Concat(parts.iter().map(|p| p.0).collect()), rg)
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::shape("stack", "no inputs"));
        }
        let width = self.val(rows[0].0).len();
        let mut data = Vec::with_capacity(width * rows.len());
        let mut rg = false;
        for r in rows {
            let v = self.val(r.0);
            if v.is_matrix() || v.len() != width {
                return Err(Error::shape(
                    "stack",
                    format!("row shape {:?}, expected [{width}]", v.shape()),
                ));
            }
            data.extend_from_slice(v.data());
            rg |= self.rg(r.0);
        }
        let t = Tensor::matrix(rows.len(), width, data)?;
        self.push("stack", t, Op::Stack(rows.iter().map(|r| r.0).collect()), rg)
    }

    /// Contiguous sub-vector `x[start..start+len]`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.val(x.0);
        if xv.is_matrix() || len == 0 || start + len > xv.len() {
            return Err(Error::shape(
                "slice",
                format!("[{start}..{}] of {:?}", start + len, xv.shape()),
            ));
        }
        let t = Tensor::vector(xv.data()[start..start + len].to_vec());
        let rg = self.rg(x.0);
        self.push("slice", t, Op::Slice(x.0, start), rg)
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let xv = self.val(x.0);
        if !xv.is_matrix() || i >= xv.rows() {
            return Err(Error::shape("row", format!("row {i} of {:?}", xv.shape())));
        }
        let t = Tensor::vector(xv.row(i).to_vec());
        let rg = self.rg(x.0);
        self.push("row", t, Op::Row(x.0, i), rg)
    }

    /// Rows of `table` `[V,d]` selected by `indices`, giving `[n,d]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.val(table.0);
        if !tv.is_matrix() || indices.is_empty() {
            return Err(Error::shape("embedding_lookup", format!("table {:?}", tv.shape())));
        }
        let (v, d) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(indices.len() * d);
        for &ix in indices {
            if ix >= v {
                return Err(Error::shape(
                    "embedding_lookup",
                    format!("index {ix} out of range for {v} rows"),
                ));
            }
            data.extend_from_slice(tv.row(ix));
        }
        let t = Tensor::matrix(indices.len(), d, data)?;
        let rg = self.rg(table.0);
        self.push("embedding_lookup", t, Op::Embedding(table.0, indices.to_vec()), rg)
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(R) -> R, op: Op<R>) -> Result<Var> {
        let xv = self.val(x.0);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x.0);
        self.push(name, t, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, R::tanh, Op::Tanh(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(R::zero()), Op::Relu(x.0))
    }

    /// Natural logarithm; non-positive inputs raise a numeric error.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary("ln", x, R::ln, Op::Ln(x.0))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: R, hi: R) -> Result<Var> {
        self.unary("clamp", x, |v| v.max(lo).min(hi), Op::Clamp(x.0, lo, hi))
    }

    fn rowwise(&mut self, name: &'static str, x: Var, f: fn(&mut [R]), op: Op<R>) -> Result<Var> {
        let xv = self.val(x.0);
        let mut data = xv.data().to_vec();
        let c = xv.cols();
        for row in data.chunks_mut(c) {
            f(row);
        }
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x.0);
        self.push(name, t, op, rg)
    }

    /// Softmax over a vector, or over each row of a matrix.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.rowwise("softmax", x, softmax_in_place, Op::Softmax(x.0))
    }

    /// Log-softmax over a vector, or over each row of a matrix.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.rowwise("log_softmax", x, log_softmax_in_place, Op::LogSoftmax(x.0))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x.0).data().iter().copied().sum();
        let rg = self.rg(x.0);
        self.push("sum", Tensor::scalar(s), Op::Sum(x.0), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.val(x.0);
        let s: R = xv.data().iter().copied().sum();
        let m = s / R::of(xv.len() as f64);
        let rg = self.rg(x.0);
        self.push("mean", Tensor::scalar(m), Op::Mean(x.0), rg)
    }

    /// Sum of each row: `[m,n] -> [m]`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.val(x.0);
        if !xv.is_matrix() {
            return Err(Error::shape("row_sum", format!("expects a matrix, got {:?}", xv.shape())));
        }
        let data = xv.data().chunks(xv.cols()).map(|r| r.iter().copied().sum()).collect();
        let rg = self.rg(x.0);
        self.push("row_sum", Tensor::vector(data), Op::RowSum(x.0), rg)
    }

    /// Inner product of two equal-shape tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let (av, bv) = (self.val(a.0), self.val(b.0));
        let s = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).sum();
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push("dot", Tensor::scalar(s), Op::Dot(a.0, b.0), rg)
    }

    /// Pick one column per row: `x[i, indices[i]]`, giving `[m]`. A vector
    /// input takes exactly one index.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xv = self.val(x.0);
        let (rows, cols) = (xv.rows(), xv.cols());
        if indices.len() != rows || indices.iter().any(|&i| i >= cols) {
            return Err(Error::shape(
                "gather",
                format!("{} indices into {:?}", indices.len(), xv.shape()),
            ));
        }
        let data = indices.iter().enumerate().map(|(r, &c)| xv.data()[r * cols + c]).collect();
        let rg = self.rg(x.0);
        self.push("gather", Tensor::vector(data), Op::Gather(x.0, indices.to_vec()), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.val(x.0);
        if !xv.is_matrix() {
            return Err(Error::shape("transpose", format!("expects a matrix, got {:?}", xv.shape())));
        }
        let (m, n) = (xv.rows(), xv.cols());
        let mut data = vec![R::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = xv.data()[i * n + j];
            }
        }
        let rg = self.rg(x.0);
        self.push("transpose", Tensor::matrix(n, m, data)?, Op::Transpose(x.0), rg)
    }

    /// Batch normalisation of `x` `[B,F]` followed by the per-feature affine
    /// map `gamma * x_hat + beta`. In batch mode the moments of this batch
    /// are returned for running-average bookkeeping.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_, R>,
    ) -> Result<(Var, Option<BatchMoments<R>>)> {
        let (xv, gv, bv) = (self.val(x.0), self.val(gamma.0), self.val(beta.0));
        if !xv.is_matrix() || gv.shape() != [xv.cols()] || bv.shape() != [xv.cols()] {
            return Err(Error::shape(
                "batch_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", xv.shape(), gv.shape(), bv.shape()),
            ));
        }
        let (b, f) = (xv.rows(), xv.cols());
        let eps = R::of(BATCH_NORM_EPS);
        let (mean, var, train) = match stats {
            NormStats::Batch => {
                let nb = R::of(b as f64);
                let mut mean = vec![R::zero(); f];
                for r in 0..b {
                    for j in 0..f {
                        mean[j] += xv.data()[r * f + j];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= nb);
                let mut var = vec![R::zero(); f];
                for r in 0..b {
                    for j in 0..f {
                        let d = xv.data()[r * f + j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= nb);
                (mean, var, true)
            }
            NormStats::Running { mean, var } => {
                if mean.len() != f || var.len() != f {
                    return Err(Error::shape("batch_norm", "running statistics width"));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<R> = var.iter().map(|&v| R::one() / (v + eps).sqrt()).collect();
        let mut x_hat = vec![R::zero(); b * f];
        let mut out = vec![R::zero(); b * f];
        for r in 0..b {
            for j in 0..f {
                let i = r * f + j;
                x_hat[i] = (xv.data()[i] - mean[j]) * inv_std[j];
                out[i] = gv.data()[j] * x_hat[i] + bv.data()[j];
            }
        }
        let rg = self.rg(x.0) || self.rg(gamma.0) || self.rg(beta.0);
        let t = Tensor::matrix(b, f, out)?;
        let v = self.push(
            "batch_norm",
            t,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                x_hat,
                inv_std,
                train,
            },
            rg,
        )?;
        let moments = train.then_some(BatchMoments { mean, var, batch: b });
        Ok((v, moments))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<R>> {
        let lv = self.val(loss.0);
        if lv.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.rg(loss.0) {
            return Err(Error::Usage(
                "backward on a value with no recorded dependence on any gradient leaf".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<R>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![R::one()]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &node.op, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn propagate(
        &self,
        i: usize,
        op: &Op<R>,
        g: Vec<R>,
        grads: &mut [Option<Vec<R>>],
        out: &mut Gradients<R>,
    ) -> Result<()> {
        let rg = |j: usize| self.nodes[j].requires_grad;
        // Accumulate into input j (allocating zeros on first touch).
        fn slot<R: Real>(grads: &mut [Option<Vec<R>>], j: usize, len: usize) -> &mut Vec<R> {
            grads[j].get_or_insert_with(|| vec![R::zero(); len])
        }
        let y = self.val(i);
        match op {
            Op::Leaf => {
                out.vars.insert(Var(i), Tensor::new(y.shape().to_vec(), g)?);
            }
            Op::Param(id) => {
                out.params.insert(*id, Tensor::new(y.shape().to_vec(), g)?);
            }
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.val(a), self.val(b));
                let (m, k, n, _) = mm_dims(av, bv)?;
                if rg(a) {
                    let ga = slot(grads, a, m * k);
                    for r in 0..m {
                        for kk in 0..k {
                            let brow = &bv.data()[kk * n..(kk + 1) * n];
                            let grow = &g[r * n..(r + 1) * n];
                            let s: R = brow.iter().zip(grow).map(|(&x, &y)| x * y).sum();
                            ga[r * k + kk] += s;
                        }
                    }
                }
                if rg(b) {
                    let gb = slot(grads, b, k * n);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for kk in 0..k {
                            let aik = av.data()[r * k + kk];
                            for (o, &gv) in gb[kk * n..(kk + 1) * n].iter_mut().zip(grow) {
                                *o += aik * gv;
                            }
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                for j in [a, b] {
                    if rg(j) {
                        let s = slot(grads, j, g.len());
                        s.iter_mut().zip(&g).for_each(|(o, &v)| *o += v);
                    }
                }
            }
            &Op::AddBias(x, bias) => {
                if rg(x) {
                    let s = slot(grads, x, g.len());
                    s.iter_mut().zip(&g).for_each(|(o, &v)| *o += v);
                }
                if rg(bias) {
                    let n = self.val(bias).len();
                    let s = slot(grads, bias, n);
                    for (idx, &v) in g.iter().enumerate() {
                        s[idx % n] += v;
                    }
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.val(a).data(), self.val(b).data());
                if rg(a) {
                    let s = slot(grads, a, g.len());
                    for k in 0..g.len() {
                        s[k] += g[k] * bv[k];
                    }
                }
                if rg(b) {
                    let s = slot(grads, b, g.len());
                    for k in 0..g.len() {
                        s[k] += g[k] * av[k];
                    }
                }
            }
            &Op::Scale(x, c) => {
                let s = slot(grads, x, g.len());
                s.iter_mut().zip(&g).for_each(|(o, &v)| *o += v * c);
            }
            &Op::Offset(x) => {
                let s = slot(grads, x, g.len());
                s.iter_mut().zip(&g).for_each(|(o, &v)| *o += v);
            }
            Op::Concat(parts) => {
                let mut at = 0;
                for &p in parts {
                    let n = self.val(p).len();
                    if rg(p) {
                        let s = slot(grads, p, n);
                        s.iter_mut().zip(&g[at..at + n]).for_each(|(o, &v)| *o += v);
                    }
                    at += n;
                }
            }
            Op::Stack(rows) => {
                let w = y.cols();
                for (r, &p) in rows.iter().enumerate() {
                    if rg(p) {
                        let s = slot(grads, p, w);
                        s.iter_mut().zip(&g[r * w..(r + 1) * w]).for_each(|(o, &v)| *o += v);
                    }
                }
            }
            &Op::Slice(x, start) => {
                let n = self.val(x).len();
                let s = slot(grads, x, n);
                s[start..start + g.len()].iter_mut().zip(&g).for_each(|(o, &v)| *o += v);
            }
            &Op::Row(x, r) => {
                let xv = self.val(x);
                let w = xv.cols();
                let s = slot(grads, x, xv.len());
                s[r * w..(r + 1) * w].iter_mut().zip(&g).for_each(|(o, &v)| *o += v);
            }
            Op::Embedding(table, indices) => {
                // TODO: sparse row gradients would avoid a dense V x d buffer
                // per step for 70k-word vocabularies.
                let tv = self.val(*table);
                let d = tv.cols();
                let s = slot(grads, *table, tv.len());
                for (r, &ix) in indices.iter().enumerate() {
                    s[ix * d..(ix + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                        .for_each(|(o, &v)| *o += v);
                }
            }
            &Op::Sigmoid(x) => {
                let s = slot(grads, x, g.len());
                for k in 0..g.len() {
                    let yk = y.data()[k];
                    s[k] += g[k] * yk * (R::one() - yk);
                }
            }
            &Op::Tanh(x) => {
                let s = slot(grads, x, g.len());
                for k in 0..g.len() {
                    let yk = y.data()[k];
                    s[k] += g[k] * (R::one() - yk * yk);
                }
            }
            &Op::Relu(x) => {
                let xv = self.val(x).data();
                let s = slot(grads, x, g.len());
                for k in 0..g.len() {
                    if xv[k] > R::zero() {
                        s[k] += g[k];
                    }
                }
            }
            &Op::Ln(x) => {
                let xv = self.val(x).data();
                let s = slot(grads, x, g.len());
                for k in 0..g.len() {
                    s[k] += g[k] / xv[k];
                }
            }
            &Op::Clamp(x, lo, hi) => {
                let xv = self.val(x).data();
                let s = slot(grads, x, g.len());
                for k in 0..g.len() {
                    if xv[k] >= lo && xv[k] <= hi {
                        s[k] += g[k];
                    }
                }
            }
            &Op::Softmax(x) => {
                let c = y.cols();
                let s = slot(grads, x, g.len());
                for (r, (yr, gr)) in y.data().chunks(c).zip(g.chunks(c)).enumerate() {
                    let dotp: R = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        s[r * c + j] += yr[j] * (gr[j] - dotp);
                    }
                }
            }
            &Op::LogSoftmax(x) => {
                let c = y.cols();
                let s = slot(grads, x, g.len());
                for (r, (yr, gr)) in y.data().chunks(c).zip(g.chunks(c)).enumerate() {
                    let total: R = gr.iter().copied().sum();
                    for j in 0..c {
                        s[r * c + j] += gr[j] - yr[j].exp() * total;
                    }
                }
            }
            &Op::Sum(x) => {
                let n = self.val(x).len();
                let s = slot(grads, x, n);
                s.iter_mut().for_each(|o| *o += g[0]);
            }
            &Op::Mean(x) => {
                let n = self.val(x).len();
                let share = g[0] / R::of(n as f64);
                let s = slot(grads, x, n);
                s.iter_mut().for_each(|o| *o += share);
            }
            &Op::RowSum(x) => {
                let xv = self.val(x);
                let c = xv.cols();
                let s = slot(grads, x, xv.len());
                for (k, o) in s.iter_mut().enumerate() {
                    *o += g[k / c];
                }
            }
            &Op::Dot(a, b) => {
                let (av, bv) = (self.val(a).data(), self.val(b).data());
                if rg(a) {
                    let s = slot(grads, a, av.len());
                    s.iter_mut().zip(bv).for_each(|(o, &v)| *o += g[0] * v);
                }
                if rg(b) {
                    let s = slot(grads, b, bv.len());
                    s.iter_mut().zip(av).for_each(|(o, &v)| *o += g[0] * v);
                }
            }
            Op::Gather(x, indices) => {
                let xv = self.val(*x);
                let c = xv.cols();
                let s = slot(grads, *x, xv.len());
                for (r, &ix) in indices.iter().enumerate() {
                    s[r * c + ix] += g[r];
                }
            }
            &Op::Transpose(x) => {
                let (m, n) = (y.cols(), y.rows());
                let s = slot(grads, x, g.len());
                for a in 0..m {
                    for b in 0..n {
                        s[a * n + b] += g[b * m + a];
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                train,
            } => {
                let (b, f) = (y.rows(), y.cols());
                let gam = self.val(*gamma).data().to_vec();
                if rg(*beta) {
                    let s = slot(grads, *beta, f);
                    for r in 0..b {
                        for j in 0..f {
                            s[j] += g[r * f + j];
                        }
                    }
                }
                if rg(*gamma) {
                    let s = slot(grads, *gamma, f);
                    for r in 0..b {
                        for j in 0..f {
                            s[j] += g[r * f + j] * x_hat[r * f + j];
                        }
                    }
                }
                if rg(*x) {
                    let s = slot(grads, *x, b * f);
                    if *train {
                        let nb = R::of(b as f64);
                        for j in 0..f {
                            let mut sum_d = R::zero();
                            let mut sum_dx = R::zero();
                            for r in 0..b {
                                let d = g[r * f + j] * gam[j];
                                sum_d += d;
                                sum_dx += d * x_hat[r * f + j];
                            }
                            for r in 0..b {
                                let k = r * f + j;
                                let d = g[k] * gam[j];
                                s[k] += inv_std[j] / nb * (nb * d - sum_d - x_hat[k] * sum_dx);
                            }
                        }
                    } else {
                        for r in 0..b {
                            for j in 0..f {
                                let k = r * f + j;
                                s[k] += g[k] * gam[j] * inv_std[j];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
