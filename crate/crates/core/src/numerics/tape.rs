use std::sync::Arc;

use super::{NumericsError, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// Result of an operation whose operands carry no gradient.
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Concat { parts: Vec<Var>, axis: usize },
    SliceCols { src: Var, start: usize },
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Ln(Var),
    LogSigmoid(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    Dot(Var, Var),
    RowDot(Var, Var),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Ordered record of every value produced during one forward pass.
///
/// Nodes are appended as they are computed, so the record is always in
/// topological order. Leaves created with `requires_grad` accumulate
/// gradients across repeated [`Tape::backward`] calls until
/// [`Tape::zero_grad`]; interior nodes keep the gradient of the most
/// recent call only.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn softmax_row(input: &[f64], out: &mut [f64]) {
    let max = input.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(input) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Non-finite inputs are rejected.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: "leaf" });
        }
        let grad = requires_grad.then(|| Tensor::zeros(value.shape()));
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward root with respect to `v`.
    ///
    /// Returns `None` for values that do not depend on any trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Resets every gradient to zero.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op, operands: &[Var], name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        let requires_grad = operands.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn unary(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let src = self.value(a);
        let data = src.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        self.push(value, op, &[a], name)
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if t.rank() > 2 {
            return Err(NumericsError::Invalid(format!(
                "{op}: expected a matrix, got shape {:?}",
                t.shape()
            )));
        }
        Ok((t.rows(), t.cols()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.matrix_dims(a, "matmul")?;
        let (k2, m) = self.matrix_dims(b, "matmul")?;
        if k != k2 || self.value(b).rank() != 2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let value = Tensor::matrix(n, m, data)?;
        self.push(value, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims(a, "transpose")?;
        let data = transpose_raw(self.value(a).data(), n, m);
        let value = Tensor::matrix(m, n, data)?;
        self.push(value, Op::Transpose(a), &[a], "transpose")
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, op, &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Adds the row vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        if self.value(b).len() != cols {
            return Err(self.mismatch("add_row", a, b));
        }
        let bias = self.value(b).data().to_vec();
        let src = self.value(a);
        let mut data = src.data().to_vec();
        for row in data.chunks_mut(cols) {
            add_into(row, &bias);
        }
        let value = Tensor::new(src.shape().to_vec(), data)?;
        self.push(value, Op::AddRow(a, b), &[a, b], "add_row")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, c), "scale", |x| c * x)
    }

    /// Multiplies row `r` of `a` by the `r`-th entry of the column `c`.
    pub fn scale_rows(&mut self, a: Var, c: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(a, "scale_rows")?;
        if self.value(c).len() != rows {
            return Err(self.mismatch("scale_rows", a, c));
        }
        let coef = self.value(c).data();
        let src = self.value(a);
        let mut data = src.data().to_vec();
        for (row, &k) in data.chunks_mut(cols).zip(coef) {
            row.iter_mut().for_each(|x| *x *= k);
        }
        let value = Tensor::new(src.shape().to_vec(), data)?;
        self.push(value, Op::ScaleRows(a, c), &[a, c], "scale_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a], "mean")
    }

    /// Column-wise mean, producing a `[1, cols]` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(a, "mean_rows")?;
        let mut out = vec![0.0; cols];
        for row in self.value(a).data().chunks(cols) {
            add_into(&mut out, row);
        }
        out.iter_mut().for_each(|x| *x /= rows as f64);
        let value = Tensor::matrix(1, cols, out)?;
        self.push(value, Op::MeanRows(a), &[a], "mean_rows")
    }

    /// Concatenates matrices along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| NumericsError::Invalid("concat: no operands".into()))?;
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            dims.push(self.matrix_dims(p, "concat")?);
        }
        let value = match axis {
            0 => {
                let cols = dims[0].1;
                if let Some(i) = dims.iter().position(|d| d.1 != cols) {
                    return Err(self.mismatch("concat", first, parts[i]));
                }
                let rows = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::matrix(rows, cols, data)?
            }
            1 => {
                let rows = dims[0].0;
                if let Some(i) = dims.iter().position(|d| d.0 != rows) {
                    return Err(self.mismatch("concat", first, parts[i]));
                }
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor::matrix(rows, cols, data)?
            }
            _ => {
                return Err(NumericsError::Invalid(format!(
                    "concat: axis must be 0 or 1, got {axis}"
                )))
            }
        };
        self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
            "concat",
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(a, "slice_cols")?;
        if start >= end || end > cols {
            return Err(NumericsError::IndexOutOfBounds {
                op: "slice_cols",
                index: end,
                len: cols,
            });
        }
        let width = end - start;
        let src = self.value(a);
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&src.row(r)[start..end]);
        }
        let value = Tensor::matrix(rows, width, data)?;
        self.push(value, Op::SliceCols { src: a, start }, &[a], "slice_cols")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), "tanh", f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(a, Op::LeakyRelu(a, slope), "leaky_relu", |x| leaky(x, slope))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Ln(a), "ln", f64::ln)
    }

    /// `ln(sigmoid(x))`, evaluated without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::LogSigmoid(a), "log_sigmoid", log_sigmoid)
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, Op::Clamp(a, lo, hi), "clamp", |x| x.clamp(lo, hi))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let cols = src.cols();
        let mut data = vec![0.0; src.len()];
        for (out, row) in data.chunks_mut(cols).zip(src.data().chunks(cols)) {
            softmax_row(row, out);
        }
        let value = Tensor::new(src.shape().to_vec(), data)?;
        self.push(value, Op::Softmax(a), &[a], "softmax")
    }

    /// Full inner product of two equally shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("dot", a, b));
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        self.push(Tensor::scalar(s), Op::Dot(a, b), &[a, b], "dot")
    }

    /// Row-wise inner products of two `[n, m]` matrices, giving `[n, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("row_dot", a, b));
        }
        let (rows, cols) = self.matrix_dims(a, "row_dot")?;
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let data = (0..rows)
            .map(|r| {
                let span = r * cols..(r + 1) * cols;
                ta[span.clone()].iter().zip(&tb[span]).map(|(x, y)| x * y).sum()
            })
            .collect();
        let value = Tensor::matrix(rows, 1, data)?;
        self.push(value, Op::RowDot(a, b), &[a, b], "row_dot")
    }

    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(a, "gather_rows")?;
        if index.is_empty() {
            return Err(NumericsError::Invalid("gather_rows: empty index".into()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::IndexOutOfBounds {
                op: "gather_rows",
                index: bad,
                len: rows,
            });
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            data.extend_from_slice(src.row(i));
        }
        let value = Tensor::matrix(index.len(), cols, data)?;
        self.push(value, Op::GatherRows(a, index), &[a], "gather_rows")
    }

    /// Sums row `e` of `a` into output row `index[e]`; the output has `rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, index: Arc<[usize]>, rows: usize) -> Result<Var> {
        let (n, cols) = self.matrix_dims(a, "scatter_add_rows")?;
        if index.len() != n {
            return Err(NumericsError::ShapeMismatch {
                op: "scatter_add_rows",
                left: self.shape(a).to_vec(),
                right: vec![index.len()],
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::IndexOutOfBounds {
                op: "scatter_add_rows",
                index: bad,
                len: rows,
            });
        }
        let src = self.value(a);
        let mut data = vec![0.0; rows * cols];
        for (e, &dst) in index.iter().enumerate() {
            add_into(&mut data[dst * cols..(dst + 1) * cols], src.row(e));
        }
        let value = Tensor::matrix(rows, cols, data)?;
        self.push(value, Op::ScatterAddRows(a, index), &[a], "scatter_add_rows")
    }

    /// Softmax over the entries of `a` that share a segment id.
    pub fn segment_softmax(&mut self, a: Var, segment: Arc<[usize]>, segments: usize) -> Result<Var> {
        let src = self.value(a);
        if src.len() != segment.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "segment_softmax",
                left: src.shape().to_vec(),
                right: vec![segment.len()],
            });
        }
        if let Some(&bad) = segment.iter().find(|&&s| s >= segments) {
            return Err(NumericsError::IndexOutOfBounds {
                op: "segment_softmax",
                index: bad,
                len: segments,
            });
        }
        let x = src.data();
        let mut max = vec![f64::NEG_INFINITY; segments];
        for (&s, &v) in segment.iter().zip(x) {
            max[s] = max[s].max(v);
        }
        let mut data: Vec<f64> = segment.iter().zip(x).map(|(&s, &v)| (v - max[s]).exp()).collect();
        let mut total = vec![0.0; segments];
        for (&s, &v) in segment.iter().zip(&data) {
            total[s] += v;
        }
        for (&s, v) in segment.iter().zip(data.iter_mut()) {
            *v /= total[s];
        }
        let value = Tensor::new(src.shape().to_vec(), std::mem::take(&mut data))?;
        self.push(value, Op::SegmentSoftmax(a, segment), &[a], "segment_softmax")
    }

    /// Back-propagates from a scalar root.
    ///
    /// Trainable leaves accumulate `d root / d leaf` into their gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(NumericsError::NonScalarRoot(root_value.shape().to_vec()));
        }
        for node in &mut self.nodes[..=root.0] {
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
            }
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            let shape = self.nodes[idx].value.shape().to_vec();
            let node = &mut self.nodes[idx];
            match (&node.op, node.grad.as_mut()) {
                (Op::Leaf, Some(acc)) => add_into(acc.data_mut(), &g),
                _ => node.grad = Some(Tensor::new(shape, g)?),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let val = |v: &Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (n, k) = (val(a).rows(), val(a).cols());
                let m = val(b).cols();
                if needs(a) {
                    let bt = transpose_raw(val(b).data(), k, m);
                    let da = matmul_raw(g, &bt, n, m, k);
                    accumulate(&mut grads[a.0], n * k, |buf| add_into(buf, &da));
                }
                if needs(b) {
                    let at = transpose_raw(val(a).data(), n, k);
                    let db = matmul_raw(&at, g, k, n, m);
                    accumulate(&mut grads[b.0], k * m, |buf| add_into(buf, &db));
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (val(a).rows(), val(a).cols());
                let da = transpose_raw(g, m, n);
                accumulate(&mut grads[a.0], n * m, |buf| add_into(buf, &da));
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(v) {
                        accumulate(&mut grads[v.0], g.len(), |buf| add_into(buf, g));
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| add_into(buf, g));
                }
                if needs(b) {
                    accumulate(&mut grads[b.0], g.len(), |buf| {
                        buf.iter_mut().zip(g).for_each(|(d, s)| *d -= s)
                    });
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if needs(v) {
                        let o = val(other).data();
                        accumulate(&mut grads[v.0], g.len(), |buf| {
                            for ((d, gi), oi) in buf.iter_mut().zip(g).zip(o) {
                                *d += gi * oi;
                            }
                        });
                    }
                }
            }
            Op::AddRow(a, b) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| add_into(buf, g));
                }
                if needs(b) {
                    let cols = val(b).len();
                    accumulate(&mut grads[b.0], cols, |buf| {
                        for row in g.chunks(cols) {
                            add_into(buf, row);
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    buf.iter_mut().zip(g).for_each(|(d, s)| *d += c * s)
                });
            }
            Op::ScaleRows(a, c) => {
                let cols = val(a).cols();
                let coef = val(c).data();
                if needs(a) {
                    accumulate(&mut grads[a.0], g.len(), |buf| {
                        for ((drow, grow), &k) in buf.chunks_mut(cols).zip(g.chunks(cols)).zip(coef) {
                            drow.iter_mut().zip(grow).for_each(|(d, s)| *d += k * s);
                        }
                    });
                }
                if needs(c) {
                    let src = val(a).data();
                    accumulate(&mut grads[c.0], coef.len(), |buf| {
                        for (r, d) in buf.iter_mut().enumerate() {
                            let span = r * cols..(r + 1) * cols;
                            *d += g[span.clone()].iter().zip(&src[span]).map(|(x, y)| x * y).sum::<f64>();
                        }
                    });
                }
            }
            Op::Sum(a) => {
                let n = val(a).len();
                accumulate(&mut grads[a.0], n, |buf| buf.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Mean(a) => {
                let n = val(a).len();
                let share = g[0] / n as f64;
                accumulate(&mut grads[a.0], n, |buf| buf.iter_mut().for_each(|d| *d += share));
            }
            Op::MeanRows(a) => {
                let (rows, cols) = (val(a).rows(), val(a).cols());
                let inv = 1.0 / rows as f64;
                accumulate(&mut grads[a.0], rows * cols, |buf| {
                    for row in buf.chunks_mut(cols) {
                        row.iter_mut().zip(g).for_each(|(d, s)| *d += s * inv);
                    }
                });
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for p in parts {
                        let n = val(p).len();
                        if needs(p) {
                            let slice = &g[offset..offset + n];
                            accumulate(&mut grads[p.0], n, |buf| add_into(buf, slice));
                        }
                        offset += n;
                    }
                } else {
                    let total_cols = node.value.cols();
                    let mut col = 0;
                    for p in parts {
                        let (rows, cols) = (val(p).rows(), val(p).cols());
                        if needs(p) {
                            accumulate(&mut grads[p.0], rows * cols, |buf| {
                                for r in 0..rows {
                                    let src = &g[r * total_cols + col..r * total_cols + col + cols];
                                    add_into(&mut buf[r * cols..(r + 1) * cols], src);
                                }
                            });
                        }
                        col += cols;
                    }
                }
            }
            Op::SliceCols { src, start } => {
                let (rows, cols) = (val(src).rows(), val(src).cols());
                let width = node.value.cols();
                accumulate(&mut grads[src.0], rows * cols, |buf| {
                    for r in 0..rows {
                        add_into(
                            &mut buf[r * cols + start..r * cols + start + width],
                            &g[r * width..(r + 1) * width],
                        );
                    }
                });
            }
            Op::Tanh(a) => accumulate(&mut grads[a.0], g.len(), |buf| {
                for ((d, gi), yi) in buf.iter_mut().zip(g).zip(y) {
                    *d += gi * (1.0 - yi * yi);
                }
            }),
            Op::Sigmoid(a) => accumulate(&mut grads[a.0], g.len(), |buf| {
                for ((d, gi), yi) in buf.iter_mut().zip(g).zip(y) {
                    *d += gi * yi * (1.0 - yi);
                }
            }),
            Op::LeakyRelu(a, slope) => {
                let x = val(a).data();
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    for ((d, gi), xi) in buf.iter_mut().zip(g).zip(x) {
                        *d += if *xi > 0.0 { *gi } else { slope * gi };
                    }
                })
            }
            Op::Ln(a) => {
                let x = val(a).data();
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    for ((d, gi), xi) in buf.iter_mut().zip(g).zip(x) {
                        *d += gi / xi;
                    }
                })
            }
            Op::LogSigmoid(a) => {
                let x = val(a).data();
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    for ((d, gi), xi) in buf.iter_mut().zip(g).zip(x) {
                        *d += gi * sigmoid(-xi);
                    }
                })
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(a).data();
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    for ((d, gi), xi) in buf.iter_mut().zip(g).zip(x) {
                        if *xi >= *lo && *xi <= *hi {
                            *d += gi;
                        }
                    }
                })
            }
            Op::Softmax(a) => {
                let cols = node.value.cols();
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    for ((drow, grow), yrow) in buf.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let inner: f64 = grow.iter().zip(yrow).map(|(gi, yi)| gi * yi).sum();
                        for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yi * (gi - inner);
                        }
                    }
                })
            }
            Op::Dot(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if needs(v) {
                        let o = val(other).data();
                        accumulate(&mut grads[v.0], o.len(), |buf| {
                            buf.iter_mut().zip(o).for_each(|(d, oi)| *d += g[0] * oi)
                        });
                    }
                }
            }
            Op::RowDot(a, b) => {
                let cols = val(a).cols();
                for (v, other) in [(a, b), (b, a)] {
                    if needs(v) {
                        let o = val(other).data();
                        accumulate(&mut grads[v.0], o.len(), |buf| {
                            for ((drow, orow), gi) in buf.chunks_mut(cols).zip(o.chunks(cols)).zip(g) {
                                drow.iter_mut().zip(orow).for_each(|(d, oi)| *d += gi * oi);
                            }
                        });
                    }
                }
            }
            Op::GatherRows(a, index) => {
                let cols = val(a).cols();
                let n = val(a).len();
                accumulate(&mut grads[a.0], n, |buf| {
                    for (e, &i) in index.iter().enumerate() {
                        add_into(&mut buf[i * cols..(i + 1) * cols], &g[e * cols..(e + 1) * cols]);
                    }
                });
            }
            Op::ScatterAddRows(a, index) => {
                let cols = val(a).cols();
                let n = val(a).len();
                accumulate(&mut grads[a.0], n, |buf| {
                    for (e, &i) in index.iter().enumerate() {
                        add_into(&mut buf[e * cols..(e + 1) * cols], &g[i * cols..(i + 1) * cols]);
                    }
                });
            }
            Op::SegmentSoftmax(a, segment) => {
                let segments = segment.iter().copied().max().map_or(0, |m| m + 1);
                let mut inner = vec![0.0; segments];
                for ((&s, gi), yi) in segment.iter().zip(g).zip(y) {
                    inner[s] += gi * yi;
                }
                accumulate(&mut grads[a.0], g.len(), |buf| {
                    for (((d, &s), gi), yi) in buf.iter_mut().zip(segment.iter()).zip(g).zip(y) {
                        *d += yi * (gi - inner[s]);
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::LEAKY_RELU_SLOPE;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0]).unwrap()).unwrap();
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn activation_identity_points() {
        let mut tape = Tape::new();
        let zero = tape.constant(Tensor::scalar(0.0)).unwrap();
        let neg = tape.constant(Tensor::scalar(-1.0)).unwrap();
        let t = tape.tanh(zero).unwrap();
        let s = tape.sigmoid(zero).unwrap();
        let l = tape.leaky_relu(neg, LEAKY_RELU_SLOPE).unwrap();
        assert_eq!(tape.value(t).item(), 0.0);
        assert_eq!(tape.value(s).item(), 0.5);
        assert!(approx(tape.value(l).item(), -0.2, 1e-15));
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.0)).unwrap();
        let y = tape.sigmoid(x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 0.25);
    }

    #[test]
    fn constant_root_leaves_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0)).unwrap();
        let c = tape.constant(Tensor::scalar(7.0)).unwrap();
        let root = tape.tanh(c).unwrap();
        tape.backward(root).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 0.0);
        assert!(tape.grad(root).is_none());
        let _ = x;
    }

    #[test]
    fn repeated_backward_accumulates_until_reset() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0)).unwrap();
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 8.0);
        tape.zero_grad();
        assert_eq!(tape.grad(x).unwrap().item(), 0.0);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 4.0);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let y = tape.tanh(x).unwrap();
        assert!(matches!(tape.backward(y), Err(NumericsError::NonScalarRoot(_))));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            NumericsError::ShapeMismatch {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut tape = Tape::new();
        assert!(tape.constant(Tensor::scalar(f64::NAN)).is_err());
        let z = tape.constant(Tensor::scalar(0.0)).unwrap();
        assert_eq!(tape.ln(z), Err(NumericsError::NonFinite { op: "ln" }));
    }

    #[test]
    fn sum_of_product_gradient_is_ones_times_b_transposed() {
        let a_vals = vec![0.3, -1.2, 0.7, 2.0, 0.1, -0.4];
        let b_vals = vec![1.5, -0.5, 0.25, 0.8, -1.1, 0.6];
        let mut tape = Tape::new();
        let a = tape.param(Tensor::matrix(2, 3, a_vals).unwrap()).unwrap();
        let b = tape.constant(Tensor::matrix(3, 2, b_vals.clone()).unwrap()).unwrap();
        let p = tape.matmul(a, b).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        // ones(2x2) · Bᵀ: every row equals the row sums of B.
        let row_sums: Vec<f64> = b_vals.chunks(2).map(|r| r[0] + r[1]).collect();
        let grad = tape.grad(a).unwrap().data();
        for r in 0..2 {
            for c in 0..3 {
                assert!(approx(grad[r * 3 + c], row_sums[c], 1e-12));
            }
        }
    }

    #[test]
    fn concat_routes_gradient_slices_to_sources() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let b = tape.param(Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap()).unwrap();
        let c = tape.concat(&[a, b], 1).unwrap();
        // One-hot probe at each output position.
        for probe in 0..6 {
            tape.zero_grad();
            let mut onehot = vec![0.0; 6];
            onehot[probe] = 1.0;
            let w = tape.constant(Tensor::matrix(2, 3, onehot).unwrap()).unwrap();
            let root = tape.dot(c, w).unwrap();
            tape.backward(root).unwrap();
            let (r, col) = (probe / 3, probe % 3);
            let ga = tape.grad(a).unwrap().data().to_vec();
            let gb = tape.grad(b).unwrap().data().to_vec();
            let mut ea = vec![0.0; 4];
            let mut eb = vec![0.0; 2];
            if col < 2 {
                ea[r * 2 + col] = 1.0;
            } else {
                eb[r] = 1.0;
            }
            assert_eq!(ga, ea, "probe {probe}");
            assert_eq!(gb, eb, "probe {probe}");
        }
    }

    #[test]
    fn segment_softmax_normalizes_each_segment() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(5, 1, vec![0.1, 3.0, -2.0, 0.5, 0.5]).unwrap()).unwrap();
        let seg: Arc<[usize]> = vec![0, 0, 1, 2, 2].into();
        let y = tape.segment_softmax(x, seg, 3).unwrap();
        let v = tape.value(y).data();
        assert!(approx(v[0] + v[1], 1.0, 1e-12));
        assert_eq!(v[2], 1.0);
        assert_eq!(v[3], 0.5);
        assert_eq!(v[4], 0.5);
    }

    #[test]
    fn scatter_add_leaves_untouched_rows_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let y = tape.scatter_add_rows(x, vec![2, 2].into(), 4).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0, 0.0, 4.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn log_sigmoid_is_stable_for_large_inputs() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![-800.0, 800.0]).unwrap()).unwrap();
        let y = tape.log_sigmoid(x).unwrap();
        assert_eq!(tape.value(y).data(), &[-800.0, 0.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0]);
    }
}
