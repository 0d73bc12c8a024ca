//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation in execution order. Because an
//! operation can only consume [`Var`]s that already exist, the recording is
//! topologically sorted by construction; [`Tape::backward`] walks it once in
//! reverse and accumulates gradients additively, so fan-out is handled by
//! summation.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Layer-norm variance stabilizer.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// Gradient policy of [`Tape::l2norm_rows`] at rows whose norm is at or
/// below a floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormGrad {
    /// A zero row during backward is an error.
    Strict,
    /// Rows with norm `<= floor` get gradient zero (subgradient at the kink).
    ZeroBelow(f64),
}

/// Fixed sparse linear map applied independently to consecutive blocks of
/// rows: a `[B·rows_in, d]` input becomes `[B·rows_out, d]`.
///
/// Normalized-adjacency propagation, bone incidence, node pooling and
/// per-node broadcast are all instances.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMap {
    pub rows_out: usize,
    pub rows_in: usize,
    /// `(out_row, in_row, weight)` triplets.
    pub entries: Vec<(usize, usize, f64)>,
}

impl BlockMap {
    pub fn from_dense(m: &Tensor) -> Self {
        let (r, c) = (m.rows(), m.cols());
        let mut entries = Vec::new();
        for i in 0..r {
            for j in 0..c {
                let w = m.get2(i, j);
                if w != 0.0 {
                    entries.push((i, j, w));
                }
            }
        }
        Self {
            rows_out: r,
            rows_in: c,
            entries,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows_out, self.rows_in]);
        for &(i, j, w) in &self.entries {
            t.set2(i, j, t.get2(i, j) + w);
        }
        t
    }

    /// Row-mean pooling of `rows_in` rows into one.
    pub fn mean_pool(rows_in: usize) -> Self {
        let w = 1.0 / rows_in as f64;
        Self {
            rows_out: 1,
            rows_in,
            entries: (0..rows_in).map(|j| (0, j, w)).collect(),
        }
    }

    /// Copies one row to `rows_out` rows.
    pub fn broadcast(rows_out: usize) -> Self {
        Self {
            rows_out,
            rows_in: 1,
            entries: (0..rows_out).map(|i| (i, 0, 1.0)).collect(),
        }
    }

    fn apply(&self, x: &[f64], blocks: usize, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; blocks * self.rows_out * d];
        for b in 0..blocks {
            let xin = &x[b * self.rows_in * d..(b + 1) * self.rows_in * d];
            let yout = &mut out[b * self.rows_out * d..(b + 1) * self.rows_out * d];
            for &(i, j, w) in &self.entries {
                let src = &xin[j * d..(j + 1) * d];
                for (o, &s) in yout[i * d..(i + 1) * d].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        out
    }

    fn apply_transposed(&self, g: &[f64], blocks: usize, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; blocks * self.rows_in * d];
        for b in 0..blocks {
            let gin = &g[b * self.rows_out * d..(b + 1) * self.rows_out * d];
            let xout = &mut out[b * self.rows_in * d..(b + 1) * self.rows_in * d];
            for &(i, j, w) in &self.entries {
                let src = &gin[i * d..(i + 1) * d];
                for (o, &s) in xout[j * d..(j + 1) * d].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        out
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    ConcatCols(Var, Var),
    Sum(Var),
    Mean(Var),
    L2NormRows(Var, NormGrad),
    NormalizeRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Block(Var, Arc<BlockMap>),
    Reshape(Var),
    SelectCols(Var, Vec<usize>),
    /// Row-wise map with Jacobians recorded during the forward pass.
    RowJacobian {
        x: Var,
        /// `[rows][out_dim][in_dim]`, flattened.
        jac: Vec<f64>,
        in_dim: usize,
        out_dim: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward pass.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {:?} and {:?}", a.shape(), b.shape()))
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node {
        debug_assert_eq!(v.tape, self.id);
        &self.nodes[v.idx]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("forward value of {}", op_name(&op))));
        }
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var { tape: self.id, idx })
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        Ok(())
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Result<Var> {
        self.push(t.clone(), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = Tensor::new(vec![m, n], kernels::matmul(ta.data(), tb.data(), m, k, n))?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `x[n×d] + bias[d]`, the bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(bias)?;
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.len() != tx.cols() {
            return Err(shape_err("add_bias", tx, tb));
        }
        let d = tx.cols();
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        self.push(out, Op::AddBias(x, bias), rg)
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(f64::abs);
        let rg = self.rg(&[a]);
        self.push(out, Op::Abs(a), rg)
    }

    /// Concatenation along the last axis.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let lead_a = &ta.shape()[..ta.shape().len() - 1];
        let lead_b = &tb.shape()[..tb.shape().len() - 1];
        if lead_a != lead_b {
            return Err(shape_err("concat", ta, tb));
        }
        let (ca, cb) = (ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let mut shape = lead_a.to_vec();
        shape.push(ca + cb);
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(&[a, b]);
        self.push(out, Op::ConcatCols(a, b), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg)
    }

    /// Euclidean norm of each row, `[n×d] → [n×1]`.
    pub fn l2norm_rows(&mut self, a: Var, policy: NormGrad) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let data: Vec<f64> = (0..t.rows()).map(|r| row_norm(t.row(r))).collect();
        let out = Tensor::new(vec![t.rows(), 1], data)?;
        let rg = self.rg(&[a]);
        self.push(out, Op::L2NormRows(a, policy), rg)
    }

    /// Scales each row to unit length. Rows with norm `<= min_norm` are
    /// rejected.
    pub fn normalize_rows(&mut self, a: Var, min_norm: f64) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let mut out = t.clone();
        let d = t.cols();
        for (r, row) in out.data_mut().chunks_mut(d).enumerate() {
            let n = row_norm(row);
            if n <= min_norm {
                return Err(Error::Degenerate(format!("row {r} has norm {n:e}")));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::NormalizeRows(a), rg)
    }

    /// Per-row standardization followed by `gain ⊙ · + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(gain)?;
        self.check(bias)?;
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.cols();
        if d < 2 || tg.len() != d || tb.len() != d {
            return Err(Error::Shape(format!(
                "layer_norm: input {:?}, gain {:?}, bias {:?}",
                tx.shape(),
                tg.shape(),
                tb.shape()
            )));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = tx.row(r);
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mu) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Applies `map` to every block of `map.rows_in` consecutive rows.
    pub fn block_map(&mut self, x: Var, map: &Arc<BlockMap>) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        if t.rows() % map.rows_in != 0 {
            return Err(Error::Shape(format!(
                "block_map: {} rows not a multiple of block {}",
                t.rows(),
                map.rows_in
            )));
        }
        let blocks = t.rows() / map.rows_in;
        let d = t.cols();
        let out = Tensor::new(vec![blocks * map.rows_out, d], map.apply(t.data(), blocks, d))?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Block(x, Arc::clone(map)), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::Reshape(x), rg)
    }

    pub fn select_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        if cols.iter().any(|&c| c >= t.cols()) {
            return Err(Error::Shape(format!("select_cols {cols:?} of {:?}", t.shape())));
        }
        let mut data = Vec::with_capacity(t.rows() * cols.len());
        for r in 0..t.rows() {
            let row = t.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        let out = Tensor::new(vec![t.rows(), cols.len()], data)?;
        let rg = self.rg(&[x]);
        self.push(out, Op::SelectCols(x, cols.to_vec()), rg)
    }

    /// Records a row-wise map whose value and per-row Jacobian were computed
    /// externally. `jac` is `[rows][out_dim][in_dim]`.
    pub fn row_jacobian(&mut self, x: Var, value: Tensor, jac: Vec<f64>) -> Result<Var> {
        self.check(x)?;
        let tx = self.value(x);
        let (rows, in_dim, out_dim) = (tx.rows(), tx.cols(), value.cols());
        if value.rows() != rows || jac.len() != rows * in_dim * out_dim {
            return Err(Error::Shape(format!(
                "row_jacobian: input {:?}, output {:?}, jacobian len {}",
                tx.shape(),
                value.shape(),
                jac.len()
            )));
        }
        let rg = self.rg(&[x]);
        self.push(
            value,
            Op::RowJacobian {
                x,
                jac,
                in_dim,
                out_dim,
            },
            rg,
        )
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.idx).and_then(Option::as_ref)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(Tensor::ones(self.value(loss).shape()));
        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient at {}",
                    op_name(&self.nodes[idx].op)
                )));
            }
            self.backward_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |v: Var, t: Vec<f64>| -> Result<()> {
            if !self.nodes[v.idx].requires_grad {
                return Ok(());
            }
            let shape = self.nodes[v.idx].value.shape().to_vec();
            match &mut grads[v.idx] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(&t) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(Tensor::new(shape, t)?),
            }
            Ok(())
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.requires_grad(*a) {
                    acc(*a, kernels::matmul_nt(gd, tb.data(), m, n, k))?;
                }
                if self.requires_grad(*b) {
                    acc(*b, kernels::matmul_tn(ta.data(), gd, m, k, n))?;
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, gd.to_vec())?;
                if self.requires_grad(*b) {
                    let d = out.cols();
                    let mut gb = vec![0.0; d];
                    for row in gd.chunks(d) {
                        for (s, &v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    acc(*b, gb)?;
                }
            }
            Op::Add(a, b) => {
                acc(*a, gd.to_vec())?;
                acc(*b, gd.to_vec())?;
            }
            Op::Sub(a, b) => {
                acc(*a, gd.to_vec())?;
                acc(*b, gd.iter().map(|v| -v).collect())?;
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, gd.iter().zip(tb.data()).map(|(g, y)| g * y).collect())?;
                acc(*b, gd.iter().zip(ta.data()).map(|(g, x)| g * x).collect())?;
            }
            Op::Scale(a, c) => acc(*a, gd.iter().map(|v| v * c).collect())?,
            Op::Relu(a) => {
                let ta = self.value(*a);
                acc(
                    *a,
                    gd.iter()
                        .zip(ta.data())
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect(),
                )?;
            }
            Op::Abs(a) => {
                let ta = self.value(*a);
                acc(
                    *a,
                    gd.iter()
                        .zip(ta.data())
                        .map(|(&g, &x)| {
                            if x > 0.0 {
                                g
                            } else if x < 0.0 {
                                -g
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                )?;
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = out.rows();
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for row in gd.chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                acc(*a, ga)?;
                acc(*b, gb)?;
            }
            Op::Sum(a) => acc(*a, vec![gd[0]; self.value(*a).len()])?,
            Op::Mean(a) => {
                let n = self.value(*a).len();
                acc(*a, vec![gd[0] / n as f64; n])?;
            }
            Op::L2NormRows(a, policy) => {
                let ta = self.value(*a);
                let d = ta.cols();
                let mut ga = vec![0.0; ta.len()];
                for r in 0..ta.rows() {
                    let n = out.data()[r];
                    let zero = match policy {
                        NormGrad::Strict => {
                            if n == 0.0 {
                                return Err(Error::Degenerate(format!(
                                    "l2norm gradient undefined at zero row {r}"
                                )));
                            }
                            false
                        }
                        NormGrad::ZeroBelow(floor) => n <= *floor,
                    };
                    if zero {
                        continue;
                    }
                    for (j, &x) in ta.row(r).iter().enumerate() {
                        ga[r * d + j] = gd[r] * x / n;
                    }
                }
                acc(*a, ga)?;
            }
            Op::NormalizeRows(a) => {
                // y = x/|x|;  dx = (g - y (g·y)) / |x|
                let ta = self.value(*a);
                let d = ta.cols();
                let mut ga = vec![0.0; ta.len()];
                for r in 0..ta.rows() {
                    let n = row_norm(ta.row(r));
                    let y = out.row(r);
                    let gr = &gd[r * d..(r + 1) * d];
                    let dot: f64 = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        ga[r * d + j] = (gr[j] - y[j] * dot) / n;
                    }
                }
                acc(*a, ga)?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = out.cols();
                let rows = out.rows();
                let tg = self.value(*gain).data();
                if self.requires_grad(*gain) || self.requires_grad(*bias) {
                    let mut gg = vec![0.0; d];
                    let mut gb = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += gd[r * d + j] * xhat[r * d + j];
                            gb[j] += gd[r * d + j];
                        }
                    }
                    acc(*gain, gg)?;
                    acc(*bias, gb)?;
                }
                if self.requires_grad(*x) {
                    let mut gx = vec![0.0; rows * d];
                    let dn = d as f64;
                    for r in 0..rows {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..d {
                            let dh = gd[r * d + j] * tg[j];
                            s1 += dh;
                            s2 += dh * xhat[r * d + j];
                        }
                        for j in 0..d {
                            let dh = gd[r * d + j] * tg[j];
                            gx[r * d + j] =
                                inv_std[r] / dn * (dn * dh - s1 - xhat[r * d + j] * s2);
                        }
                    }
                    acc(*x, gx)?;
                }
            }
            Op::Block(x, map) => {
                let d = out.cols();
                let blocks = out.rows() / map.rows_out;
                acc(*x, map.apply_transposed(gd, blocks, d))?;
            }
            Op::Reshape(x) => acc(*x, gd.to_vec())?,
            Op::SelectCols(x, cols) => {
                let tx = self.value(*x);
                let c = tx.cols();
                let mut gx = vec![0.0; tx.len()];
                for (r, grow) in gd.chunks(cols.len()).enumerate() {
                    for (&col, &gv) in cols.iter().zip(grow) {
                        gx[r * c + col] += gv;
                    }
                }
                acc(*x, gx)?;
            }
            Op::RowJacobian {
                x,
                jac,
                in_dim,
                out_dim,
            } => {
                let rows = out.rows();
                let mut gx = vec![0.0; rows * in_dim];
                for r in 0..rows {
                    let j = &jac[r * in_dim * out_dim..(r + 1) * in_dim * out_dim];
                    let gr = &gd[r * out_dim..(r + 1) * out_dim];
                    let gxr = &mut gx[r * in_dim..(r + 1) * in_dim];
                    for (o, &gv) in gr.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        for (s, &jv) in gxr.iter_mut().zip(&j[o * in_dim..(o + 1) * in_dim]) {
                            *s += gv * jv;
                        }
                    }
                }
                acc(*x, gx)?;
            }
        }
        Ok(())
    }
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::AddBias(..) => "add_bias",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Relu(..) => "relu",
        Op::Abs(..) => "abs",
        Op::ConcatCols(..) => "concat",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::L2NormRows(..) => "l2norm_rows",
        Op::NormalizeRows(..) => "normalize_rows",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Block(..) => "block_map",
        Op::Reshape(..) => "reshape",
        Op::SelectCols(..) => "select_cols",
        Op::RowJacobian { .. } => "row_jacobian",
    }
}
