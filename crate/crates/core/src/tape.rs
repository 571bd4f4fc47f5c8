//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Tape`] holding its forward value
//! and enough saved state to replay its adjoint. [`Tape::backward`] walks the
//! nodes in exact reverse order, summing adjoint contributions into each
//! input, so a value consumed by several operations receives the sum of all
//! branch gradients.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{ErcError, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    SoftmaxRows(Var),
    MaskedSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    BinaryCrossEntropy {
        logits: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ErcError::NonFinite { op })
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Row-wise softmax where `weights[i*n+j]` multiplies `exp(x_ij)`. A zero
/// weight excludes the entry; a row with no positive weight yields zeros.
fn weighted_softmax_raw(x: &[f64], weights: Option<&[f64]>, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        let w_row = weights.map(|w| &w[i * n..(i + 1) * n]);
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            if w_row.is_none_or(|w| w[j] > 0.0) {
                max = max.max(row[j]);
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let out_row = &mut out[i * n..(i + 1) * n];
        let mut total = 0.0;
        for j in 0..n {
            let w = w_row.map_or(1.0, |w| w[j]);
            if w > 0.0 {
                let e = w * (row[j] - max).exp();
                out_row[j] = e;
                total += e;
            }
        }
        for v in out_row.iter_mut() {
            *v /= total;
        }
    }
    out
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

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(op_name, value.data())?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    /// Records a named trainable parameter. Registering the same name twice
    /// returns the existing node so shared weights accumulate one gradient.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.leaf(t.clone().with_requires_grad(true));
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn param_vars(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    /// Gradients of every registered parameter, after [`Tape::backward`].
    pub fn param_grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.params
            .iter()
            .map(|(name, &v)| {
                let g = self
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; self.value(v).len()]);
                (name.clone(), g)
            })
            .collect()
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.value(v);
        if !t.is_matrix() {
            return Err(ErcError::shape(op, t.shape(), &[]));
        }
        Ok((t.rows(), t.cols()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(ErcError::shape(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], data)?;
        self.push("matmul", t, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(ErcError::shape("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    /// `x[m×n] + bias[n]`, broadcasting the bias over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("add_row", x)?;
        let tb = self.value(bias);
        if tb.shape() != [n] {
            return Err(ErcError::shape("add_row", self.value(x).shape(), tb.shape()));
        }
        let b = tb.data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..m {
            for (o, bv) in data[i * n..(i + 1) * n].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let t = Tensor::new(vec![m, n], data)?;
        self.push("add_row", t, Op::AddRow(x, bias), &[x, bias])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(ErcError::shape("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * s).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("scale", t, Op::Scale(x, s), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("transpose", x)?;
        let data = transpose_raw(self.value(x).data(), m, n);
        let t = Tensor::new(vec![n, m], data)?;
        self.push("transpose", t, Op::Transpose(x), &[x])
    }

    /// Softmax over each row, stabilised by subtracting the row maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("softmax_rows", x)?;
        let data = weighted_softmax_raw(self.value(x).data(), None, m, n);
        let t = Tensor::new(vec![m, n], data)?;
        self.push("softmax_rows", t, Op::SoftmaxRows(x), &[x])
    }

    /// Softmax over the entries of each row with positive `weights`
    /// (multiplicities of parallel edges). Rows without any such entry are
    /// all zero.
    pub fn masked_softmax_rows(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        let (m, n) = self.matrix_dims("masked_softmax_rows", x)?;
        if weights.shape() != [m, n] {
            return Err(ErcError::shape(
                "masked_softmax_rows",
                self.value(x).shape(),
                weights.shape(),
            ));
        }
        let data = weighted_softmax_raw(self.value(x).data(), Some(weights.data()), m, n);
        let t = Tensor::new(vec![m, n], data)?;
        self.push("masked_softmax_rows", t, Op::MaskedSoftmaxRows(x), &[x])
    }

    /// Per-row normalisation to zero mean and unit variance (biased
    /// variance, `eps` inside the square root) followed by `gamma * . + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, d) = self.matrix_dims("layer_norm", x)?;
        if d == 0 {
            return Err(ErcError::InvalidArgument("layer_norm: zero width".into()));
        }
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(ErcError::shape("layer_norm", self.value(x).shape(), tg.shape()));
        }
        let g = tg.data();
        let b = tb.data();
        let xs = self.value(x).data();
        let mut normed = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for i in 0..m {
            let row = &xs[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let xh = (row[j] - mean) * inv;
                normed[i * d + j] = xh;
                out[i * d + j] = xh * g[j] + b[j];
            }
        }
        let t = Tensor::new(vec![m, d], out)?;
        self.push(
            "layer_norm",
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("relu", t, Op::Relu(x), &[x])
    }

    /// Column-wise concatenation of matrices sharing a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| ErcError::InvalidArgument("concat_cols: no parts".into()))?;
        let (m, _) = self.matrix_dims("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.matrix_dims("concat_cols", p)?;
            if pm != m {
                return Err(ErcError::shape(
                    "concat_cols",
                    self.value(first).shape(),
                    self.value(p).shape(),
                ));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![m, total], data)?;
        self.push("concat_cols", t, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims("slice_cols", x)?;
        if start > end || end > n {
            return Err(ErcError::InvalidArgument(format!(
                "slice_cols: range {start}..{end} outside width {n}"
            )));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let t = Tensor::new(vec![m, end - start], data)?;
        self.push("slice_cols", t, Op::SliceCols { x, start }, &[x])
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`. Identity in
    /// eval mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(ErcError::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let tx = self.value(x);
        let mask: Vec<f64> = (0..tx.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("dropout", t, Op::Dropout { x, mask }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean categorical cross-entropy of `labels` under row-wise
    /// `softmax(logits)`, computed through a stabilised log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (m, c) = self.matrix_dims("cross_entropy", logits)?;
        if labels.len() != m || m == 0 {
            return Err(ErcError::shape("cross_entropy", &[m, c], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(ErcError::LabelOutOfRange {
                label: bad,
                num_classes: c,
            });
        }
        let z = self.value(logits).data();
        let probs = weighted_softmax_raw(z, None, m, c);
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &z[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let loss = Tensor::scalar(total / m as f64);
        self.push(
            "cross_entropy",
            loss,
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
        )
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and 0/1 `targets`,
    /// averaged over every entry.
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        let tz = self.value(logits);
        if tz.shape() != targets.shape() || tz.is_empty() {
            return Err(ErcError::shape(
                "binary_cross_entropy",
                tz.shape(),
                targets.shape(),
            ));
        }
        let n = tz.len() as f64;
        let total: f64 = tz
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let loss = Tensor::scalar(total / n);
        self.push(
            "binary_cross_entropy",
            loss,
            Op::BinaryCrossEntropy {
                logits,
                targets: targets.data().to_vec(),
            },
            &[logits],
        )
    }

    /// Populates gradients of `loss` with respect to every node that depends
    /// on a `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(ErcError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            self.nodes[idx].value.set_grad(g);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.nodes[a.0].needs_grad {
                    let bt = transpose_raw(tb.data(), k, n);
                    acc(*a, matmul_raw(g, &bt, m, n, k));
                }
                if self.nodes[b.0].needs_grad {
                    let at = transpose_raw(ta.data(), m, k);
                    acc(*b, matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::AddRow(x, bias) => {
                let n = out.cols();
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    for (s, v) in gb.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                acc(*x, g.to_vec());
                acc(*bias, gb);
            }
            Op::Mul(a, b) => {
                let da = self.value(*a).data();
                let db = self.value(*b).data();
                acc(*a, g.iter().zip(db).map(|(g, y)| g * y).collect());
                acc(*b, g.iter().zip(da).map(|(g, x)| g * x).collect());
            }
            Op::Scale(x, s) => acc(*x, g.iter().map(|v| v * s).collect()),
            Op::Transpose(x) => {
                let (m, n) = (out.rows(), out.cols());
                acc(*x, transpose_raw(g, m, n));
            }
            Op::SoftmaxRows(x) | Op::MaskedSoftmaxRows(x) => {
                let n = out.cols();
                let y = out.data();
                let mut dx = vec![0.0; y.len()];
                for i in 0..out.rows() {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            } => {
                let d = out.cols();
                let m = out.rows();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dx = vec![0.0; m * d];
                for i in 0..m {
                    let gr = &g[i * d..(i + 1) * d];
                    let xh = &normed[i * d..(i + 1) * d];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..d {
                        dgamma[j] += gr[j] * xh[j];
                        dbeta[j] += gr[j];
                        let dxh = gr[j] * gam[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    let scale = inv_std[i] / d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * gam[j];
                        dx[i * d + j] =
                            scale * (d as f64 * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Relu(x) => {
                let xs = self.value(*x).data();
                acc(
                    *x,
                    g.iter()
                        .zip(xs)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect(),
                );
            }
            Op::ConcatCols(parts) => {
                let m = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut dp = Vec::with_capacity(m * w);
                    for i in 0..m {
                        dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    acc(p, dp);
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let tx = self.value(*x);
                let (m, n) = (tx.rows(), tx.cols());
                let w = out.cols();
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                acc(*x, dx);
            }
            Op::Dropout { x, mask } => {
                acc(*x, g.iter().zip(mask).map(|(g, m)| g * m).collect());
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                acc(*x, vec![g[0]; n]);
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let c = self.value(*logits).cols();
                let m = labels.len() as f64;
                let mut dz: Vec<f64> = probs.iter().map(|p| p * g[0] / m).collect();
                for (i, &l) in labels.iter().enumerate() {
                    dz[i * c + l] -= g[0] / m;
                }
                acc(*logits, dz);
            }
            Op::BinaryCrossEntropy { logits, targets } => {
                let z = self.value(*logits).data();
                let n = z.len() as f64;
                acc(
                    *logits,
                    z.iter()
                        .zip(targets)
                        .map(|(&z, &t)| (sigmoid(z) - t) * g[0] / n)
                        .collect(),
                );
            }
        }
    }
}

/// Dropout settings for one forward pass: a rate plus, in training mode,
/// the random stream masks are drawn from. Eval mode never draws.
pub struct DropoutCtx<'a> {
    p: f64,
    rng: Option<&'a mut StreamRng>,
}

impl<'a> DropoutCtx<'a> {
    pub fn eval() -> Self {
        DropoutCtx { p: 0.0, rng: None }
    }

    pub fn train(p: f64, rng: &'a mut StreamRng) -> Self {
        DropoutCtx { p, rng: Some(rng) }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) => tape.dropout(x, self.p, true, rng),
            None => Ok(x),
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
