//! Dense tensors and a define-by-run reverse-mode differentiation tape.
//!
//! A [`Graph`] is rebuilt per forward pass. Ops append nodes in construction
//! order; [`Graph::backward`] walks the tape once in reverse, accumulating
//! gradients into every node that requires them. Tensors are row-major `f64`.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::{Error, Result};

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {shape:?} has a zero extent"
            )));
        }
        if n != values.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} implies {n} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            values,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Interpret as a matrix; errors for other ranks.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::InvalidArgument(format!(
                "expected rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Extent of the last axis and the number of rows it slices into.
    fn last_axis(&self) -> (usize, usize) {
        let c = *self.shape.last().expect("non-empty shape");
        (self.values.len() / c, c)
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRow(NodeId, NodeId),
    Gelu(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    MeanPool {
        x: NodeId,
        valid_len: usize,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        groups: usize,
        pad: (usize, usize),
    },
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    Reshape(NodeId),
    SumAll(NodeId),
    CccLoss {
        pred: NodeId,
        target: NodeId,
    },
    CeLoss {
        logits: NodeId,
        labels: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Reverse-mode differentiation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Insert a leaf tensor.
    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> NodeId {
        self.push(t, requires_grad, Op::Leaf)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.input(t, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by the last [`Graph::backward`], if any.
    pub fn grad(&self, id: NodeId) -> Option<Tensor> {
        self.nodes[id.0].grad.as_ref().map(|g| Tensor {
            shape: self.nodes[id.0].value.shape.clone(),
            values: g.clone(),
        })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape.clone(),
                rhs: self.value(b).shape.clone(),
            });
        }
        let out = matmul_values(self.value(a).values(), self.value(b).values(), m, k, n);
        let rg = self.requires(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, rg, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        let v = self.value(x).values();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let rg = self.requires(&[x]);
        Ok(self.push(Tensor::matrix(c, r, out)?, rg, Op::Transpose(x)))
    }

    fn binary_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape != self.value(b).shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.value(a).shape.clone(),
                rhs: self.value(b).shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor {
            shape: self.value(a).shape.clone(),
            values: out,
        };
        let rg = self.requires(&[a, b]);
        Ok(self.push(t, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor {
            shape: self.value(a).shape.clone(),
            values: out,
        };
        let rg = self.requires(&[a, b]);
        Ok(self.push(t, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.value(x).values().iter().map(|v| v * c).collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            values: out,
        };
        let rg = self.requires(&[x]);
        self.push(t, rg, Op::Scale(x, c))
    }

    /// Broadcast-add a row vector `[c]` to every row of a matrix `[r x c]`.
    pub fn add_row(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (_, c) = self.value(m).dims2()?;
        if self.value(v).shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.value(m).shape.clone(),
                rhs: self.value(v).shape.clone(),
            });
        }
        let row = self.value(v).values().to_vec();
        let out: Vec<f64> = self
            .value(m)
            .values()
            .iter()
            .enumerate()
            .map(|(i, x)| x + row[i % c])
            .collect();
        let t = Tensor {
            shape: self.value(m).shape.clone(),
            values: out,
        };
        let rg = self.requires(&[m, v]);
        Ok(self.push(t, rg, Op::AddRow(m, v)))
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).values().iter().map(|&v| gelu(v)).collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            values: out,
        };
        let rg = self.requires(&[x]);
        self.push(t, rg, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self
            .value(x)
            .values()
            .iter()
            .map(|&v| fmath::tanh(v))
            .collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            values: out,
        };
        let rg = self.requires(&[x]);
        self.push(t, rg, Op::Tanh(x))
    }

    /// Softmax along the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let (rows, c) = self.value(x).last_axis();
        let v = self.value(x).values();
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            softmax_row(&v[r * c..(r + 1) * c], &mut out[r * c..(r + 1) * c]);
        }
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            values: out,
        };
        let rg = self.requires(&[x]);
        self.push(t, rg, Op::Softmax(x))
    }

    /// Layer normalization along the last axis (population variance), with
    /// per-feature affine gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (rows, c) = self.value(x).last_axis();
        if self.value(gain).shape() != [c] || self.value(bias).shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.value(x).shape.clone(),
                rhs: self.value(gain).shape.clone(),
            });
        }
        let v = self.value(x).values();
        let g = self.value(gain).values();
        let b = self.value(bias).values();
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * c..(r + 1) * c];
            let (m, var) = mean_var(row);
            let inv = 1.0 / fmath::sqrt(var + eps);
            for j in 0..c {
                out[r * c + j] = (row[j] - m) * inv * g[j] + b[j];
            }
        }
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            values: out,
        };
        let rg = self.requires(&[x, gain, bias]);
        Ok(self.push(t, rg, Op::LayerNorm { x, gain, bias, eps }))
    }

    /// Mean over the first `valid_len` rows of a `[frames x dim]` tensor.
    /// Padded frames beyond `valid_len` never influence the result.
    pub fn mean_pool(&mut self, x: NodeId, valid_len: usize) -> Result<NodeId> {
        let (frames, dim) = self.value(x).dims2()?;
        if valid_len == 0 || valid_len > frames {
            return Err(Error::InvalidArgument(format!(
                "mean_pool: valid_len {valid_len} outside 1..={frames}"
            )));
        }
        let v = self.value(x).values();
        let mut out = vec![0.0; dim];
        for f in 0..valid_len {
            for j in 0..dim {
                out[j] += v[f * dim + j];
            }
        }
        for o in out.iter_mut() {
            *o /= valid_len as f64;
        }
        let rg = self.requires(&[x]);
        Ok(self.push(Tensor::vector(out), rg, Op::MeanPool { x, valid_len }))
    }

    /// 1-D convolution over `[time x channels_in]` with weight
    /// `[channels_out x channels_in/groups x kernel]`, bias `[channels_out]`,
    /// and zero padding `(left, right)`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        groups: usize,
        pad: (usize, usize),
    ) -> Result<NodeId> {
        let (t_in, c_in) = self.value(x).dims2()?;
        let wshape = self.value(w).shape().to_vec();
        let [c_out, c_in_g, k] = match wshape.as_slice() {
            [a, b, c] => [*a, *b, *c],
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "conv1d weight must be rank 3, got {wshape:?}"
                )))
            }
        };
        if stride == 0 || groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "conv1d: invalid stride {stride} or groups {groups} for {c_in}->{c_out} channels"
            )));
        }
        if c_in / groups != c_in_g || self.value(b).shape() != [c_out] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: self.value(x).shape.clone(),
                rhs: wshape,
            });
        }
        let t_pad = t_in + pad.0 + pad.1;
        if t_pad < k {
            return Err(Error::InvalidArgument(format!(
                "conv1d: input of {t_in} frames (padded {t_pad}) shorter than kernel {k}"
            )));
        }
        let t_out = (t_pad - k) / stride + 1;
        let xv = self.value(x).values();
        let wv = self.value(w).values();
        let bv = self.value(b).values();
        let mut out = vec![0.0; t_out * c_out];
        let out_per_group = c_out / groups;
        for t in 0..t_out {
            for co in 0..c_out {
                let group = co / out_per_group;
                let ci0 = group * c_in_g;
                let mut acc = bv[co];
                for ci in 0..c_in_g {
                    for kk in 0..k {
                        let src = t * stride + kk;
                        if src < pad.0 || src - pad.0 >= t_in {
                            continue;
                        }
                        acc += xv[(src - pad.0) * c_in + ci0 + ci] * wv[(co * c_in_g + ci) * k + kk];
                    }
                }
                out[t * c_out + co] = acc;
            }
        }
        let rg = self.requires(&[x, w, b]);
        Ok(self.push(
            Tensor::matrix(t_out, c_out, out)?,
            rg,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                groups,
                pad,
            },
        ))
    }

    /// Column range `[start, start+len)` of a matrix.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        if start + len > c || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "slice_cols: range {start}..{} outside 0..{c}",
                start + len
            )));
        }
        let v = self.value(x).values();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + start + len]);
        }
        let rg = self.requires(&[x]);
        Ok(self.push(
            Tensor::matrix(r, len, out)?,
            rg,
            Op::SliceCols { x, start, len },
        ))
    }

    /// Concatenate matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_cols: no inputs".to_string()));
        }
        let (r, _) = self.value(parts[0]).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (rp, cp) = self.value(p).dims2()?;
            if rp != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape.clone(),
                    rhs: self.value(p).shape.clone(),
                });
            }
            widths.push(cp);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                let v = self.value(p).values();
                out.extend_from_slice(&v[i * w..(i + 1) * w]);
            }
        }
        let rg = self.requires(parts);
        Ok(self.push(
            Tensor::matrix(r, total, out)?,
            rg,
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    /// Stack equal-length vectors into a `[n x c]` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("stack_rows: no inputs".to_string()));
        }
        let c = self.value(rows[0]).len();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if self.value(r).shape() != [c] {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: self.value(rows[0]).shape.clone(),
                    rhs: self.value(r).shape.clone(),
                });
            }
            out.extend_from_slice(self.value(r).values());
        }
        let rg = self.requires(rows);
        Ok(self.push(
            Tensor::matrix(rows.len(), c, out)?,
            rg,
            Op::StackRows(rows.to_vec()),
        ))
    }

    /// Reinterpret the values under a new shape of equal size.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(Error::InvalidArgument(format!(
                "reshape: {:?} -> {shape:?} changes element count",
                self.value(x).shape
            )));
        }
        let t = Tensor {
            shape,
            values: self.value(x).values().to_vec(),
        };
        let rg = self.requires(&[x]);
        Ok(self.push(t, rg, Op::Reshape(x)))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).values().iter().sum();
        let rg = self.requires(&[x]);
        self.push(Tensor::scalar(s), rg, Op::SumAll(x))
    }

    /// `1 - CCC(pred, target)` with population statistics; see [`crate::loss`].
    pub(crate) fn ccc_loss_node(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let n = self.value(pred).len();
        if self.value(target).len() != n || n < 2 {
            return Err(Error::InvalidArgument(format!(
                "ccc_loss: needs two equal-length sequences of >= 2 values, got {} and {}",
                n,
                self.value(target).len()
            )));
        }
        let loss = 1.0 - crate::metrics::ccc(self.value(pred).values(), self.value(target).values());
        let rg = self.requires(&[pred, target]);
        Ok(self.push(Tensor::scalar(loss), rg, Op::CccLoss { pred, target }))
    }

    /// Mean cross-entropy of `[batch x classes]` logits; see [`crate::loss`].
    pub(crate) fn ce_loss_node(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (batch, classes) = self.value(logits).dims2()?;
        if labels.len() != batch {
            return Err(Error::InvalidArgument(format!(
                "ce_loss: {batch} logit rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "ce_loss: label {bad} out of range for {classes} classes"
            )));
        }
        let v = self.value(logits).values();
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &v[i * classes..(i + 1) * classes];
            total += log_sum_exp(row) - row[label];
        }
        let loss = total / batch as f64;
        let rg = self.requires(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::CeLoss {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Backpropagate from a scalar node, accumulating gradients into every
    /// node with `requires_grad`. Each tape node is visited exactly once, in
    /// reverse construction order; fan-out contributions sum.
    pub fn backward(&mut self, out: NodeId) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward: output must be scalar, got shape {:?}",
                self.value(out).shape
            )));
        }
        for n in self.nodes.iter_mut() {
            n.grad = None;
        }
        self.nodes[out.0].grad = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let gy = self.nodes[i].grad.clone().expect("checked above");
            self.backprop_node(i, &op, &gy)?;
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, contrib: &[f64]) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        let grad = node
            .grad
            .get_or_insert_with(|| vec![0.0; node.value.len()]);
        for (g, c) in grad.iter_mut().zip(contrib) {
            *g += c;
        }
    }

    fn backprop_node(&mut self, i: usize, op: &Op, gy: &[f64]) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k) = self.value(a).dims2()?;
                let (_, n) = self.value(b).dims2()?;
                let av = self.value(a).values().to_vec();
                let bv = self.value(b).values().to_vec();
                // dA = dY * B^T
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    for j in 0..n {
                        let g = gy[r * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for c in 0..k {
                            da[r * k + c] += g * bv[c * n + j];
                        }
                    }
                }
                self.accumulate(a, &da);
                // dB = A^T * dY
                let mut db = vec![0.0; k * n];
                for r in 0..m {
                    for c in 0..k {
                        let x = av[r * k + c];
                        if x == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[c * n + j] += x * gy[r * n + j];
                        }
                    }
                }
                self.accumulate(b, &db);
            }
            Op::Transpose(x) => {
                let (c, r) = self.value(NodeId(i)).dims2()?;
                let mut dx = vec![0.0; r * c];
                for a in 0..c {
                    for b in 0..r {
                        dx[b * c + a] = gy[a * r + b];
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::Add(a, b) => {
                self.accumulate(a, gy);
                self.accumulate(b, gy);
            }
            Op::Mul(a, b) => {
                let av = self.value(a).values().to_vec();
                let bv = self.value(b).values().to_vec();
                let da: Vec<f64> = gy.iter().zip(&bv).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = gy.iter().zip(&av).map(|(g, x)| g * x).collect();
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Scale(x, c) => {
                let dx: Vec<f64> = gy.iter().map(|g| g * c).collect();
                self.accumulate(x, &dx);
            }
            Op::AddRow(m, v) => {
                self.accumulate(m, gy);
                let c = self.value(v).len();
                let mut dv = vec![0.0; c];
                for (idx, g) in gy.iter().enumerate() {
                    dv[idx % c] += g;
                }
                self.accumulate(v, &dv);
            }
            Op::Gelu(x) => {
                let xv = self.value(x).values().to_vec();
                let dx: Vec<f64> = gy
                    .iter()
                    .zip(&xv)
                    .map(|(g, &v)| g * gelu_derivative(v))
                    .collect();
                self.accumulate(x, &dx);
            }
            Op::Tanh(x) => {
                let yv = self.value(NodeId(i)).values().to_vec();
                let dx: Vec<f64> = gy.iter().zip(&yv).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accumulate(x, &dx);
            }
            Op::Softmax(x) => {
                let (rows, c) = self.value(NodeId(i)).last_axis();
                let yv = self.value(NodeId(i)).values().to_vec();
                let mut dx = vec![0.0; yv.len()];
                for r in 0..rows {
                    let y = &yv[r * c..(r + 1) * c];
                    let g = &gy[r * c..(r + 1) * c];
                    let dot: f64 = y.iter().zip(g).map(|(yi, gi)| yi * gi).sum();
                    for j in 0..c {
                        dx[r * c + j] = y[j] * (g[j] - dot);
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (rows, c) = self.value(x).last_axis();
                let xv = self.value(x).values().to_vec();
                let gv = self.value(gain).values().to_vec();
                let mut dx = vec![0.0; xv.len()];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for r in 0..rows {
                    let row = &xv[r * c..(r + 1) * c];
                    let g = &gy[r * c..(r + 1) * c];
                    let (m, var) = mean_var(row);
                    let inv = 1.0 / fmath::sqrt(var + eps);
                    let xhat: Vec<f64> = row.iter().map(|&v| (v - m) * inv).collect();
                    let dxhat: Vec<f64> = g.iter().zip(&gv).map(|(gi, gn)| gi * gn).collect();
                    let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / c as f64;
                    let mean_dxhat_xhat: f64 =
                        dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dx[r * c + j] =
                            inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                        dg[j] += g[j] * xhat[j];
                        db[j] += g[j];
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(gain, &dg);
                self.accumulate(bias, &db);
            }
            Op::MeanPool { x, valid_len } => {
                let (_, dim) = self.value(x).dims2()?;
                let mut dx = vec![0.0; self.value(x).len()];
                let scale = 1.0 / valid_len as f64;
                for f in 0..valid_len {
                    for j in 0..dim {
                        dx[f * dim + j] = gy[j] * scale;
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                groups,
                pad,
            } => {
                let (t_in, c_in) = self.value(x).dims2()?;
                let wshape = self.value(w).shape().to_vec();
                let (c_out, c_in_g, k) = (wshape[0], wshape[1], wshape[2]);
                let (t_out, _) = self.value(NodeId(i)).dims2()?;
                let xv = self.value(x).values().to_vec();
                let wv = self.value(w).values().to_vec();
                let mut dx = vec![0.0; t_in * c_in];
                let mut dw = vec![0.0; c_out * c_in_g * k];
                let mut db = vec![0.0; c_out];
                let out_per_group = c_out / groups;
                for t in 0..t_out {
                    for co in 0..c_out {
                        let g = gy[t * c_out + co];
                        if g == 0.0 {
                            continue;
                        }
                        db[co] += g;
                        let ci0 = (co / out_per_group) * c_in_g;
                        for ci in 0..c_in_g {
                            for kk in 0..k {
                                let src = t * stride + kk;
                                if src < pad.0 || src - pad.0 >= t_in {
                                    continue;
                                }
                                let xi = (src - pad.0) * c_in + ci0 + ci;
                                let wi = (co * c_in_g + ci) * k + kk;
                                dx[xi] += g * wv[wi];
                                dw[wi] += g * xv[xi];
                            }
                        }
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(w, &dw);
                self.accumulate(b, &db);
            }
            Op::SliceCols { x, start, len } => {
                let (r, c) = self.value(x).dims2()?;
                let mut dx = vec![0.0; r * c];
                for row in 0..r {
                    for j in 0..len {
                        dx[row * c + start + j] = gy[row * len + j];
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::ConcatCols(ref parts) => {
                let parts = parts.clone();
                let (r, _) = self.value(NodeId(i)).dims2()?;
                let total = self.value(NodeId(i)).len() / r;
                let mut offset = 0;
                for p in parts {
                    let (_, w) = self.value(p).dims2()?;
                    let mut dp = vec![0.0; r * w];
                    for row in 0..r {
                        dp[row * w..(row + 1) * w]
                            .copy_from_slice(&gy[row * total + offset..row * total + offset + w]);
                    }
                    self.accumulate(p, &dp);
                    offset += w;
                }
            }
            Op::StackRows(ref rows) => {
                let rows = rows.clone();
                let c = self.value(rows[0]).len();
                for (idx, r) in rows.into_iter().enumerate() {
                    self.accumulate(r, &gy[idx * c..(idx + 1) * c]);
                }
            }
            Op::Reshape(x) => {
                self.accumulate(x, gy);
            }
            Op::SumAll(x) => {
                let dx = vec![gy[0]; self.value(x).len()];
                self.accumulate(x, &dx);
            }
            Op::CccLoss { pred, target } => {
                let p = self.value(pred).values().to_vec();
                let t = self.value(target).values().to_vec();
                let (dp, dt) = ccc_loss_grads(&p, &t);
                let dp: Vec<f64> = dp.iter().map(|d| d * gy[0]).collect();
                let dt: Vec<f64> = dt.iter().map(|d| d * gy[0]).collect();
                self.accumulate(pred, &dp);
                self.accumulate(target, &dt);
            }
            Op::CeLoss { logits, ref labels } => {
                let labels = labels.clone();
                let (batch, classes) = self.value(logits).dims2()?;
                let v = self.value(logits).values().to_vec();
                let mut dx = vec![0.0; v.len()];
                let scale = gy[0] / batch as f64;
                for (r, &label) in labels.iter().enumerate() {
                    let row = &v[r * classes..(r + 1) * classes];
                    let mut sm = vec![0.0; classes];
                    softmax_row(row, &mut sm);
                    for j in 0..classes {
                        let one_hot = if j == label { 1.0 } else { 0.0 };
                        dx[r * classes + j] = (sm[j] - one_hot) * scale;
                    }
                }
                self.accumulate(logits, &dx);
            }
        }
        Ok(())
    }
}

fn matmul_values(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += x * brow[j];
            }
        }
    }
    out
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = fmath::exp(v - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&v| fmath::exp(v - max)).sum();
    max + fmath::ln(sum)
}

/// Population mean and variance of a slice.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var)
}

/// Exact-erf GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + fmath::erf(x / SQRT_2))
}

fn gelu_derivative(x: f64) -> f64 {
    let phi = 0.5 * (1.0 + fmath::erf(x / SQRT_2));
    let pdf = INV_SQRT_2PI * fmath::exp(-0.5 * x * x);
    phi + x * pdf
}

/// Gradients of `1 - CCC(p, t)` wrt both sequences.
fn ccc_loss_grads(p: &[f64], t: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = p.len() as f64;
    let (mp, vp) = mean_var(p);
    let (mt, vt) = mean_var(t);
    let cov = p
        .iter()
        .zip(t)
        .map(|(&a, &b)| (a - mp) * (b - mt))
        .sum::<f64>()
        / n;
    let gap = mp - mt;
    let denom = vp + vt + gap * gap + crate::metrics::CCC_EPS;
    let num = 2.0 * cov;
    let d2 = denom * denom;
    let mut dp = vec![0.0; p.len()];
    let mut dt = vec![0.0; t.len()];
    for i in 0..p.len() {
        let dnum = 2.0 * (t[i] - mt) / n;
        let ddenom = 2.0 * (p[i] - mp) / n + 2.0 * gap / n;
        dp[i] = -(dnum * denom - num * ddenom) / d2;
        let dnum_t = 2.0 * (p[i] - mp) / n;
        let ddenom_t = 2.0 * (t[i] - mt) / n - 2.0 * gap / n;
        dt[i] = -(dnum_t * denom - num * ddenom_t) / d2;
    }
    (dp, dt)
}

/// Finite-difference verification of the tape gradients.
///
/// Builds the scalar graph `f` at `x`, backpropagates, then compares the
/// gradient per coordinate against central differences
/// `(f(x+h) - f(x-h)) / 2h` computed through fresh graphs. Returns the worst
/// relative error over all coordinates.
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&mut Graph, NodeId) -> Result<NodeId>,
{
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!("grad_check: h {h} <= 0")));
    }
    let mut g = Graph::new();
    let xid = g.input(x.clone(), true);
    let out = f(&mut g, xid)?;
    if g.value(out).len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "grad_check: f must be scalar-valued, got shape {:?}",
            g.value(out).shape()
        )));
    }
    g.backward(out)?;
    let analytic = g
        .grad(xid)
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));

    let mut eval = |values: &[f64]| -> Result<f64> {
        let mut g = Graph::new();
        let t = Tensor::new(x.shape().to_vec(), values.to_vec())?;
        let xid = g.input(t, false);
        let out = f(&mut g, xid)?;
        Ok(g.value(out).values()[0])
    };

    let mut worst = 0.0f64;
    let mut perturbed = x.values().to_vec();
    for i in 0..perturbed.len() {
        let orig = perturbed[i];
        perturbed[i] = orig + h;
        let fp = eval(&perturbed)?;
        perturbed[i] = orig - h;
        let fm = eval(&perturbed)?;
        perturbed[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.values()[i];
        let err = relative_error(a, numeric);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = fmath::fabs(a).max(fmath::fabs(b));
    if scale < 1e-10 {
        return fmath::fabs(a - b);
    }
    fmath::fabs(a - b) / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor2(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i2 = g.constant(tensor2(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(tensor2(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let y = g.matmul(i2, b).unwrap();
        assert_eq!(g.value(y).values(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn matmul_2x2_oracle() {
        // Hand-computed: [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
        let mut g = Graph::new();
        let a = g.constant(tensor2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(tensor2(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let y = g.matmul(a, b).unwrap();
        assert_eq!(g.value(y).values(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        match err {
            Error::ShapeMismatch { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 2]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu(0.0), 0.0);
        // 0.5 * 1 * (1 + erf(1/sqrt 2)), checked against an independent
        // evaluation of the erf form: 0.8413447460685429
        assert!((gelu(1.0) - 0.8413447460685429).abs() < 1e-12);
    }

    #[test]
    fn add_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.5, -2.0, 3.0]));
        let z = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = g.add(x, z).unwrap();
        assert_eq!(g.value(y).values(), &[1.5, -2.0, 3.0]);
    }

    #[test]
    fn softmax_cases() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = g.softmax(x);
        for &v in g.value(y).values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // closed form: [0, ln 2] -> [1/3, 2/3]
        let x = g.constant(Tensor::vector(vec![0.0, fmath::ln(2.0)]));
        let y = g.softmax(x);
        assert!((g.value(y).values()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((g.value(y).values()[1] - 2.0 / 3.0).abs() < 1e-12);
        // stabilization: huge inputs must not overflow
        let x = g.constant(Tensor::vector(vec![1000.0, 1000.0]));
        let y = g.softmax(x);
        assert_eq!(g.value(y).values(), &[0.5, 0.5]);
    }

    #[test]
    fn layernorm_cases() {
        let mut g = Graph::new();
        let gain = g.constant(Tensor::vector(vec![1.0, 1.0]));
        let bias = g.constant(Tensor::vector(vec![0.0, 0.0]));
        // constant row collapses to zero through eps
        let x = g.constant(tensor2(1, 2, &[3.0, 3.0]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert!(g.value(y).values().iter().all(|&v| v.abs() < 1e-9));
        // [1,3] with tiny eps -> [-1, 1]
        let x = g.constant(tensor2(1, 2, &[1.0, 3.0]));
        let y = g.layer_norm(x, gain, bias, 1e-15).unwrap();
        assert!((g.value(y).values()[0] + 1.0).abs() < 1e-7);
        assert!((g.value(y).values()[1] - 1.0).abs() < 1e-7);
        // zero gain broadcasts the bias
        let gain0 = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let bias5 = g.constant(Tensor::vector(vec![5.0, -5.0]));
        let x = g.constant(tensor2(1, 2, &[1.0, 3.0]));
        let y = g.layer_norm(x, gain0, bias5, 1e-5).unwrap();
        assert_eq!(g.value(y).values(), &[5.0, -5.0]);
    }

    #[test]
    fn mean_pool_cases() {
        let mut g = Graph::new();
        let x = g.constant(tensor2(2, 2, &[1.0, 1.0, 3.0, 3.0]));
        let y = g.mean_pool(x, 2).unwrap();
        assert_eq!(g.value(y).values(), &[2.0, 2.0]);
        // padding exclusion
        let x = g.constant(tensor2(2, 2, &[1.0, 1.0, 9.0, 9.0]));
        let y = g.mean_pool(x, 1).unwrap();
        assert_eq!(g.value(y).values(), &[1.0, 1.0]);
        // constant sequence
        let x = g.constant(tensor2(3, 1, &[4.0, 4.0, 4.0]));
        let y = g.mean_pool(x, 3).unwrap();
        assert_eq!(g.value(y).values(), &[4.0]);
        assert!(g.mean_pool(x, 0).is_err());
    }

    #[test]
    fn grad_check_sum_of_squares() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let err = grad_check(
            |g, x| {
                let sq = g.mul(x, x)?;
                Ok(g.sum_all(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn grad_check_constant_is_zero() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err = grad_check(
            |g, x| {
                let zero = g.scale(x, 0.0);
                Ok(g.sum_all(zero))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_rejects_non_scalar() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let res = grad_check(|_, x| Ok(x), &x, 1e-5);
        assert!(res.is_err());
    }

    #[test]
    fn fan_out_gradients_accumulate() {
        // y = sum(x*x) written as two consumers of x equals the single
        // consumer rewrite; both gradients must be 2x.
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let mut g = Graph::new();
        let xid = g.input(x.clone(), true);
        let prod = g.mul(xid, xid).unwrap();
        let y = g.sum_all(prod);
        g.backward(y).unwrap();
        let grad = g.grad(xid).unwrap();
        for (gv, xv) in grad.values().iter().zip(x.values()) {
            assert!((gv - 2.0 * xv).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(g.backward(x).is_err());
    }
}
