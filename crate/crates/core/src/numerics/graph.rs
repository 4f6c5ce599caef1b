//! Tape of recorded operations and its reverse sweep.

use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How [`Graph::batch_norm`] obtains its normalization statistics.
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with fixed running statistics.
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
    },
}

/// Per-channel statistics of a train-mode batch-norm call. `var` is the
/// unbiased estimate used to update running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

const BN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Relu(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    AdaptiveAvgPool {
        input: Var,
        out_h: usize,
        out_w: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Reshape(Var),
    Concat(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode tape. Every operation appends a node; [`Graph::backward`]
/// walks the nodes in reverse.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to the leaves and parameters of a
/// graph.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf or parameter node, `None` when unreachable.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds every parameter gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                let dst = store.get_mut(id).grad.data_mut();
                for (d, &s) in dst.iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
    }
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1+eˣ)` via `max(x,0) + ln(1+e^{-|x|})`.
#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Records an input. Gradients are kept for it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records a copy of a stored parameter; its gradient flows back to the
    /// store through [`Gradients::accumulate_into`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("shapes checked");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a length-`C` row vector to every row of `x` (last axis `C`).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.value(x).rows_cols();
        if self.value(row).len() != c || self.value(x).rank() == 0 {
            return Err(dim_err("add_row", self.shape(x), self.shape(row)));
        }
        let r = self.value(row).data();
        let xv = self.value(x);
        let data = xv
            .data()
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&a, &b)| a + b))
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(value, Op::AddRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), |v| v.ln())
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(T::zero()))
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.max(lo).min(hi))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum() / T::lit(v.len() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Sums over the last axis: `[.., C] -> [..]`.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.rank() == 0 {
            return Err(Error::Rank(v.shape().to_vec()));
        }
        let (_, c) = v.rows_cols();
        let data = v
            .data()
            .chunks(c.max(1))
            .map(|row| row.iter().fold(T::zero(), |a, &b| a + b))
            .collect();
        let shape = v.shape()[..v.rank() - 1].to_vec();
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SumLast(x), rg))
    }

    /// `[M,K] × [K,N] -> [M,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Affine map `input · weight + bias` with `weight: [in, out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(input, weight)?;
        self.add_row(y, bias)
    }

    /// Cross-correlation of NHWC `input` with `kernel: [KH, KW, Cin, Cout]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (si, sk) = (self.shape(input), self.shape(kernel));
        if si.len() != 4 || sk.len() != 4 || si[3] != sk[2] {
            return Err(dim_err("conv2d", si, sk));
        }
        let (n, h, w, c) = (si[0], si[1], si[2], si[3]);
        let (kh, kw, cout) = (sk[0], sk[1], sk[3]);
        let (Some(oh), Some(ow)) = (
            kernels::conv_output_size(h, kh, stride, pad),
            kernels::conv_output_size(w, kw, stride, pad),
        ) else {
            return Err(dim_err("conv2d", si, sk));
        };
        let geom = ConvGeom {
            n,
            h,
            w,
            c,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        };
        let cols = kernels::im2col(self.value(input).data(), &geom);
        let mut out = vec![T::zero(); geom.out_rows() * cout];
        kernels::gemm_acc(
            &cols,
            self.value(kernel).data(),
            &mut out,
            geom.out_rows(),
            geom.patch_len(),
            cout,
        );
        let value = Tensor::new(vec![n, oh, ow, cout], out)?;
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Max pooling over `size×size` windows of NHWC input, no padding.
    pub fn max_pool2d(&mut self, input: Var, size: usize, stride: usize) -> Result<Var> {
        let si = self.shape(input).to_vec();
        if si.len() != 4 {
            return Err(dim_err("max_pool2d", &si, &[size, size]));
        }
        let (n, h, w, c) = (si[0], si[1], si[2], si[3]);
        let (Some(oh), Some(ow)) = (
            kernels::conv_output_size(h, size, stride, 0),
            kernels::conv_output_size(w, size, stride, 0),
        ) else {
            return Err(dim_err("max_pool2d", &si, &[size, size]));
        };
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * oh * ow * c);
        let mut argmax = Vec::with_capacity(n * oh * ow * c);
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = T::neg_infinity();
                        let mut at = 0;
                        for ky in 0..size {
                            for kx in 0..size {
                                let idx = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
                                if x[idx] > best {
                                    best = x[idx];
                                    at = idx;
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(at);
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, oh, ow, c], out)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    /// Averages NHWC input into an `out_h × out_w` grid of bins.
    pub fn adaptive_avg_pool(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let si = self.shape(input).to_vec();
        if si.len() != 4 || out_h == 0 || out_w == 0 || out_h > si[1] || out_w > si[2] {
            return Err(dim_err("adaptive_avg_pool", &si, &[out_h, out_w]));
        }
        let (n, h, w, c) = (si[0], si[1], si[2], si[3]);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); n * out_h * out_w * c];
        for b in 0..n {
            for oy in 0..out_h {
                let (y0, y1) = kernels::adaptive_bin(oy, out_h, h);
                for ox in 0..out_w {
                    let (x0, x1) = kernels::adaptive_bin(ox, out_w, w);
                    let inv = T::one() / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                    let dst = ((b * out_h + oy) * out_w + ox) * c;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            let src = ((b * h + y) * w + xx) * c;
                            for ch in 0..c {
                                out[dst + ch] += x[src + ch];
                            }
                        }
                    }
                    for v in &mut out[dst..dst + c] {
                        *v *= inv;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, out_h, out_w, c], out)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::AdaptiveAvgPool { input, out_h, out_w }, rg))
    }

    /// `[N,H,W,C] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let si = self.shape(input).to_vec();
        if si.len() != 4 {
            return Err(dim_err("global_avg_pool", &si, &[]));
        }
        let pooled = self.adaptive_avg_pool(input, 1, 1)?;
        self.reshape(pooled, &[si[0], si[3]])
    }

    /// Batch normalization over every axis except the last (channel) one.
    /// Train mode returns the batch statistics for running-stat updates.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (rows, c) = self.value(input).rows_cols();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(dim_err("batch_norm", self.shape(input), self.shape(gamma)));
        }
        let x = self.value(input).data();
        let eps = T::lit(BN_EPS);
        let (mean, var_biased, stats) = match mode {
            BatchNormMode::Train => {
                if rows < 2 {
                    return Err(Error::DegenerateBatch);
                }
                let mut mean = vec![T::zero(); c];
                for row in x.chunks(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                let nr = T::lit(rows as f64);
                mean.iter_mut().for_each(|m| *m /= nr);
                let mut var = vec![T::zero(); c];
                for row in x.chunks(c) {
                    for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v - m;
                        *s += d * d;
                    }
                }
                let unbiased = var.iter().map(|&s| s / T::lit((rows - 1) as f64)).collect();
                var.iter_mut().for_each(|s| *s /= nr);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(dim_err("batch_norm", self.shape(input), &[running_mean.len()]));
                }
                (running_mean.to_vec(), running_var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks(c) {
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(g[ch] * h + b[ch]);
            }
        }
        let value = Tensor::new(self.shape(input).to_vec(), out)?;
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train: stats.is_some(),
            },
            rg,
        );
        Ok((v, stats))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Concatenates along the last axis; all leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Config("concat of nothing".into()))?;
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(dim_err("concat", self.shape(first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Selects rows (first-axis slices) by index, repeats allowed.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let s = v.shape();
        if s.is_empty() {
            return Err(Error::Rank(s.to_vec()));
        }
        let n = s[0];
        let stride = v.len() / n.max(1);
        let mut out = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            if i >= n {
                return Err(dim_err("gather_rows", s, &[i]));
            }
            out.extend_from_slice(&v.data()[i * stride..(i + 1) * stride]);
        }
        let mut shape = s.to_vec();
        shape[0] = indices.len();
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GatherRows(x, indices.to_vec()), rg))
    }

    /// Mean over rows of `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        if v.rank() != 2 || v.shape()[0] != labels.len() {
            return Err(dim_err("softmax_cross_entropy", v.shape(), &[labels.len()]));
        }
        let (b, k) = (v.shape()[0], v.shape()[1]);
        let mut probs = Vec::with_capacity(b * k);
        let mut total = T::zero();
        for (row, &label) in v.data().chunks(k).zip(labels) {
            if label >= k {
                return Err(Error::Label { label, classes: k });
            }
            let m = row.iter().fold(T::neg_infinity(), |a, &x| a.max(x));
            let s = row.iter().fold(T::zero(), |a, &x| a + (x - m).exp());
            let lse = m + s.ln();
            total += lse - row[label];
            probs.extend(row.iter().map(|&x| (x - lse).exp()));
        }
        let loss = total / T::lit(b as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Rank(lv.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        let mut params = Vec::new();
        if self.rg(loss) {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Param(id) = node.op {
                params.push((id, i));
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            self.backprop_node(node, &gy, &mut grads);
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                grads[i] = Some(gy);
            }
        }
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = &mut grads[v.0];
            let g = slot.get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
            f(g);
        };
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| add_into(g, gy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| g.iter_mut().zip(gy).for_each(|(d, &s)| *d -= s));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for ((d, &s), &o) in g.iter_mut().zip(gy).zip(vb) {
                        *d += s * o;
                    }
                });
                acc(*b, &mut |g| {
                    for ((d, &s), &o) in g.iter_mut().zip(gy).zip(va) {
                        *d += s * o;
                    }
                });
            }
            Op::AddRow(x, row) => {
                acc(*x, &mut |g| add_into(g, gy));
                let c = nodes[row.0].value.len();
                acc(*row, &mut |g| {
                    for chunk in gy.chunks(c) {
                        add_into(g, chunk);
                    }
                });
            }
            Op::Scale(x, s) => {
                acc(*x, &mut |g| g.iter_mut().zip(gy).for_each(|(d, &v)| *d += *s * v));
            }
            Op::AddScalar(x) | Op::Reshape(x) => acc(*x, &mut |g| add_into(g, gy)),
            Op::Exp(x) => {
                let y = node.value.data();
                acc(*x, &mut |g| {
                    for ((d, &s), &o) in g.iter_mut().zip(gy).zip(y) {
                        *d += s * o;
                    }
                });
            }
            Op::Ln(x) => {
                let xv = val(*x);
                acc(*x, &mut |g| {
                    for ((d, &s), &o) in g.iter_mut().zip(gy).zip(xv) {
                        *d += s / o;
                    }
                });
            }
            Op::Softplus(x) => {
                let xv = val(*x);
                acc(*x, &mut |g| {
                    for ((d, &s), &o) in g.iter_mut().zip(gy).zip(xv) {
                        *d += s * sigmoid(o);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |g| {
                    for ((d, &s), &o) in g.iter_mut().zip(gy).zip(xv) {
                        if o > T::zero() {
                            *d += s;
                        }
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let xv = val(*x);
                acc(*x, &mut |g| {
                    for ((d, &s), &o) in g.iter_mut().zip(gy).zip(xv) {
                        if o >= *lo && o <= *hi {
                            *d += s;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |g| g.iter_mut().for_each(|d| *d += gy[0])),
            Op::Mean(x) => {
                let s = gy[0] / T::lit(nodes[x.0].value.len() as f64);
                acc(*x, &mut |g| g.iter_mut().for_each(|d| *d += s));
            }
            Op::SumLast(x) => {
                let (_, c) = nodes[x.0].value.rows_cols();
                acc(*x, &mut |g| {
                    for (chunk, &s) in g.chunks_mut(c).zip(gy) {
                        chunk.iter_mut().for_each(|d| *d += s);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |g| kernels::gemm_a_bt_acc(gy, vb, g, m, n, k));
                acc(*b, &mut |g| kernels::gemm_at_b_acc(va, gy, g, m, k, n));
            }
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            } => {
                let cout = nodes[kernel.0].value.shape()[3];
                let (rows, plen) = (geom.out_rows(), geom.patch_len());
                let kv = val(*kernel);
                acc(*kernel, &mut |g| kernels::gemm_at_b_acc(cols, gy, g, rows, plen, cout));
                acc(*input, &mut |g| {
                    let mut dcols = vec![T::zero(); rows * plen];
                    kernels::gemm_a_bt_acc(gy, kv, &mut dcols, rows, cout, plen);
                    kernels::col2im(&dcols, geom, g);
                });
            }
            Op::MaxPool { input, argmax } => {
                acc(*input, &mut |g| {
                    for (&i, &s) in argmax.iter().zip(gy) {
                        g[i] += s;
                    }
                });
            }
            Op::AdaptiveAvgPool { input, out_h, out_w } => {
                let si = nodes[input.0].value.shape();
                let (n, h, w, c) = (si[0], si[1], si[2], si[3]);
                let (out_h, out_w) = (*out_h, *out_w);
                acc(*input, &mut |g| {
                    for b in 0..n {
                        for oy in 0..out_h {
                            let (y0, y1) = kernels::adaptive_bin(oy, out_h, h);
                            for ox in 0..out_w {
                                let (x0, x1) = kernels::adaptive_bin(ox, out_w, w);
                                let inv = T::one() / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                                let src = ((b * out_h + oy) * out_w + ox) * c;
                                for y in y0..y1 {
                                    for xx in x0..x1 {
                                        let dst = ((b * h + y) * w + xx) * c;
                                        for ch in 0..c {
                                            g[dst + ch] += gy[src + ch] * inv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let c = inv_std.len();
                let rows = xhat.len() / c;
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for (gr, hr) in gy.chunks(c).zip(xhat.chunks(c)) {
                    for ch in 0..c {
                        sum_dy[ch] += gr[ch];
                        sum_dy_xhat[ch] += gr[ch] * hr[ch];
                    }
                }
                acc(*gamma, &mut |g| add_into(g, &sum_dy_xhat));
                acc(*beta, &mut |g| add_into(g, &sum_dy));
                let gv = val(*gamma);
                acc(*input, &mut |g| {
                    let nr = T::lit(rows as f64);
                    for ((dr, gr), hr) in g.chunks_mut(c).zip(gy.chunks(c)).zip(xhat.chunks(c)) {
                        for ch in 0..c {
                            let scale = gv[ch] * inv_std[ch];
                            if *train {
                                dr[ch] += scale / nr * (nr * gr[ch] - sum_dy[ch] - hr[ch] * sum_dy_xhat[ch]);
                            } else {
                                dr[ch] += scale * gr[ch];
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|p| *nodes[p.0].value.shape().last().unwrap())
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = gy.len() / total.max(1);
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    acc(p, &mut |g| {
                        for r in 0..rows {
                            add_into(&mut g[r * w..(r + 1) * w], &gy[r * total + off..r * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::GatherRows(x, indices) => {
                let stride = gy.len() / indices.len().max(1);
                acc(*x, &mut |g| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut g[i * stride..(i + 1) * stride], &gy[r * stride..(r + 1) * stride]);
                    }
                });
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let k = probs.len() / labels.len();
                let s = gy[0] / T::lit(labels.len() as f64);
                acc(*logits, &mut |g| {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..k {
                            let target = if j == label { T::one() } else { T::zero() };
                            g[r * k + j] += s * (probs[r * k + j] - target);
                        }
                    }
                });
            }
        }
    }
}

#[inline]
fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
