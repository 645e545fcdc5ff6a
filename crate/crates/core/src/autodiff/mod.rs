//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and the inputs needed for the backward pass. [`Graph::backward`] may run
//! once per tape. Nodes that do not depend on a gradient-requiring leaf are
//! skipped during the backward sweep.

mod adam;
pub mod kernels;
mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use crate::special::{sigmoid, softplus};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    MeanAxis(Var, usize),
    Reshape(Var),
    SliceLast(Var, usize),
    ConcatLast(Vec<Var>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    CholeskyNll {
        mu: Var,
        diag: Var,
        lower: Var,
        /// Per-sample `L⁻ᵀ z` and `z = L⁻¹(θ - μ)`, row-major `[B, m]`.
        w: Vec<f64>,
        z: Vec<f64>,
    },
    DiagNll {
        mu: Var,
        var: Var,
        /// Residuals `θ - μ`, row-major `[B, m]`.
        resid: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased batch variance, used for the running estimate.
    pub var_unbiased: Vec<f64>,
}

/// Recording tape of tensor operations.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    record: bool,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            record: true,
            backward_done: false,
        }
    }

    /// A tape that computes values only; every node has `requires_grad = false`.
    pub fn no_record() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    /// Gradient of the loss w.r.t. `v` after [`backward`](Self::backward);
    /// `None` if `v` does not require a gradient or no gradient reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Moves the gradient out, leaving `None`.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad && self.record)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        self.record && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn check_live(&self) -> Result<()> {
        if self.backward_done {
            return Err(Error::Autodiff("tape already consumed by backward".into()));
        }
        Ok(())
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(format!("{op}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        self.check_live()?;
        let x = &self.nodes[a.0].value;
        let data = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, op, rg))
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.check_live()?;
        self.same_shape(name, a, b)?;
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = x.data().iter().zip(y.data()).map(|(&u, &v)| f(u, v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |u, v| u + v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |u, v| u * v, Op::Mul(a, b))
    }

    /// `a + b` with `b` of shape `[n]` broadcast over the last axis of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        let (x, bias) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let n = x.last_dim();
        if bias.shape() != [n] {
            return Err(Error::shape(format!("add_bias: {:?} vs {:?}", x.shape(), bias.shape())));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, &c) in row.iter_mut().zip(bias.data()) {
                *v += c;
            }
        }
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::AddBias(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |v| v * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |v| v + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |v| v * v, Op::Square(a))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check_live()?;
        let s = self.nodes[a.0].value.data().iter().sum();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    /// `a[m×k] · b[k×n]`; `a` may carry extra leading axes which are folded
    /// into `m`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if y.shape().len() != 2 || x.shape().is_empty() || x.last_dim() != y.shape()[0] {
            return Err(Error::shape(format!("matmul: {:?} vs {:?}", x.shape(), y.shape())));
        }
        let k = x.last_dim();
        let m = x.numel() / k.max(1);
        let n = y.shape()[1];
        let mut out = vec![0.0; m * n];
        kernels::matmul_nn(x.data(), y.data(), &mut out, m, k, n);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("non-empty") = n;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// 1-D cross-correlation: `x [B, C_in, L]`, `w [C_out, C_in, K]`,
    /// `b [C_out]` → `[B, C_out, L_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        self.check_live()?;
        let (xv, wv, bv) = (&self.nodes[x.0].value, &self.nodes[w.0].value, &self.nodes[b.0].value);
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] || bv.shape() != [ws[0]] {
            return Err(Error::shape(format!(
                "conv1d: input {xs:?}, weight {ws:?}, bias {:?}",
                bv.shape()
            )));
        }
        let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
        let (c_out, kernel) = (ws[0], ws[2]);
        let out_len = kernels::conv1d_out_len(len, kernel, stride, padding).ok_or_else(|| {
            Error::shape(format!("conv1d: input {xs:?} too short for kernel {kernel}, stride {stride}"))
        })?;
        let mut out = vec![0.0; batch * c_out * out_len];
        kernels::conv1d_forward(
            xv.data(),
            wv.data(),
            bv.data(),
            &mut out,
            (batch, c_in, len),
            (c_out, kernel),
            stride,
            padding,
            out_len,
        );
        let value = Tensor::new(vec![batch, c_out, out_len], out)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_live()?;
        let x = &self.nodes[a.0].value;
        let shape = x.shape();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape(format!("mean_axis: axis {axis} of {shape:?}")));
        }
        let (outer, n, inner) = split_axis(shape, axis);
        let mut out = vec![0.0; outer * inner];
        let inv = 1.0 / n as f64;
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for r in 0..n {
                let src = &x.data()[(o * n + r) * inner..(o * n + r + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        let mut new_shape = shape.to_vec();
        new_shape.remove(axis);
        let value = Tensor::new(new_shape, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MeanAxis(a, axis), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check_live()?;
        let value = self.nodes[a.0].value.clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.check_live()?;
        let x = &self.nodes[a.0].value;
        let n = x.last_dim();
        if start > end || end > n || x.shape().is_empty() {
            return Err(Error::shape(format!("slice_last: {start}..{end} of {:?}", x.shape())));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(x.numel() / n.max(1) * w);
        for row in x.data().chunks(n) {
            data.extend_from_slice(&row[start..end]);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("non-empty") = w;
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SliceLast(a, start), rg))
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        self.check_live()?;
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_last: no inputs"))?;
        let lead = {
            let s = self.shape(*first);
            if s.is_empty() {
                return Err(Error::shape("concat_last: scalar input"));
            }
            s[..s.len() - 1].to_vec()
        };
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(format!("concat_last: {:?} vs {:?}", self.shape(*first), s)));
            }
        }
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts.iter().map(|&p| self.nodes[p.0].value.last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[p.0].value.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatLast(parts.to_vec()), rg))
    }

    /// Training-mode batch norm over axis 0 of `x [B, F]`.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        self.check_live()?;
        let (b, f) = self.bn_shapes(x, gamma, beta)?;
        if b < 2 {
            return Err(Error::shape(format!("batch_norm_train needs batch >= 2, got {b}")));
        }
        let xv = self.nodes[x.0].value.data();
        let mut mean = vec![0.0; f];
        for row in xv.chunks(f) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut var = vec![0.0; f];
        for row in xv.chunks(f) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let var_unbiased = var.iter().map(|s| s / (b - 1) as f64).collect();
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s / b as f64 + eps).sqrt()).collect();
        let stats = BatchStats { mean, var_unbiased };
        let v = self.bn_apply(x, gamma, beta, &stats.mean, inv_std, true)?;
        Ok((v, stats))
    }

    /// Eval-mode batch norm: a fixed affine map from running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        self.check_live()?;
        let (_, f) = self.bn_shapes(x, gamma, beta)?;
        if running_mean.len() != f || running_var.len() != f {
            return Err(Error::shape(format!(
                "batch_norm_eval: {f} features vs running stats {}/{}",
                running_mean.len(),
                running_var.len()
            )));
        }
        let inv_std = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, running_mean, inv_std, false)
    }

    fn bn_shapes(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let s = self.shape(x);
        if s.len() != 2 || self.shape(gamma) != [s[1]] || self.shape(beta) != [s[1]] {
            return Err(Error::shape(format!(
                "batch_norm: input {s:?}, gamma {:?}, beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        Ok((s[0], s[1]))
    }

    fn bn_apply(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: Vec<f64>, batch_stats: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let f = xs[1];
        let xv = self.nodes[x.0].value.data();
        let (gv, bv) = (self.nodes[gamma.0].value.data(), self.nodes[beta.0].value.data());
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(f) {
            for j in 0..f {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(gv[j] * h + bv[j]);
            }
        }
        let value = Tensor::new(xs, out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    /// Batch-mean negative log density of `target` under `N(μ, L Lᵀ)`.
    ///
    /// `mu`, `diag` and `target` are `[B, m]`; `lower` is `[B, m(m-1)/2]`
    /// holding the strict lower triangle of `L` row by row
    /// (`L₂₁, L₃₁, L₃₂, ...`). `diag` must be positive.
    pub fn cholesky_nll(&mut self, mu: Var, diag: Var, lower: Var, target: &Tensor) -> Result<Var> {
        self.check_live()?;
        self.same_shape("cholesky_nll", mu, diag)?;
        let ms = self.shape(mu).to_vec();
        if ms.len() != 2 || target.shape() != &ms[..] {
            return Err(Error::shape(format!("cholesky_nll: mean {ms:?}, target {:?}", target.shape())));
        }
        let (b, m) = (ms[0], ms[1]);
        let nl = m * m.saturating_sub(1) / 2;
        if self.shape(lower) != [b, nl] {
            return Err(Error::shape(format!("cholesky_nll: lower {:?}, expected {:?}", self.shape(lower), [b, nl])));
        }
        let (mv, dv, lv) = (
            self.nodes[mu.0].value.data(),
            self.nodes[diag.0].value.data(),
            self.nodes[lower.0].value.data(),
        );
        let mut z = vec![0.0; b * m];
        let mut w = vec![0.0; b * m];
        let mut total = 0.0;
        for s in 0..b {
            let d = &dv[s * m..(s + 1) * m];
            let l = &lv[s * nl..(s + 1) * nl];
            let zs = &mut z[s * m..(s + 1) * m];
            for i in 0..m {
                let mut acc = target.data()[s * m + i] - mv[s * m + i];
                let base = i * (i.saturating_sub(1)) / 2;
                for j in 0..i {
                    acc -= l[base + j] * zs[j];
                }
                zs[i] = acc / d[i];
            }
            let ws = &mut w[s * m..(s + 1) * m];
            for i in (0..m).rev() {
                let mut acc = zs[i];
                for r in i + 1..m {
                    acc -= l[r * (r - 1) / 2 + i] * ws[r];
                }
                ws[i] = acc / d[i];
            }
            total += m as f64 * HALF_LN_2PI
                + d.iter().map(|x| x.ln()).sum::<f64>()
                + 0.5 * zs.iter().map(|x| x * x).sum::<f64>();
        }
        let value = Tensor::scalar(total / b as f64);
        let rg = self.rg(&[mu, diag, lower]);
        Ok(self.push(value, Op::CholeskyNll { mu, diag, lower, w, z }, rg))
    }

    /// Batch-mean negative log density of `target` under independent
    /// Gaussians with means `mu` and variances `var` (all `[B, m]`).
    pub fn diag_nll(&mut self, mu: Var, var: Var, target: &Tensor) -> Result<Var> {
        self.check_live()?;
        self.same_shape("diag_nll", mu, var)?;
        let ms = self.shape(mu).to_vec();
        if ms.len() != 2 || target.shape() != &ms[..] {
            return Err(Error::shape(format!("diag_nll: mean {ms:?}, target {:?}", target.shape())));
        }
        let (mv, vv) = (self.nodes[mu.0].value.data(), self.nodes[var.0].value.data());
        let resid: Vec<f64> = target.data().iter().zip(mv).map(|(t, m)| t - m).collect();
        let total: f64 = resid
            .iter()
            .zip(vv)
            .map(|(r, v)| HALF_LN_2PI + 0.5 * v.ln() + 0.5 * r * r / v)
            .sum();
        let value = Tensor::scalar(total / ms[0] as f64);
        let rg = self.rg(&[mu, var]);
        Ok(self.push(value, Op::DiagNll { mu, var, resid }, rg))
    }

    /// Back-propagates from the scalar `loss`. Callable once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.record {
            return Err(Error::Autodiff("backward on a non-recording tape".into()));
        }
        self.check_live()?;
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::Autodiff(format!("backward needs a scalar loss, got shape {:?}", lv.shape())));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop_node(node, &gout, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(gout);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(nodes, grads, *a, |d| axpy(d, g, 1.0));
                acc(nodes, grads, *b, |d| axpy(d, g, 1.0));
            }
            Op::AddBias(a, b) => {
                acc(nodes, grads, *a, |d| axpy(d, g, 1.0));
                acc(nodes, grads, *b, |d| {
                    let n = d.len();
                    for row in g.chunks(n) {
                        axpy(d, row, 1.0);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                acc(nodes, grads, *a, |d| d.iter_mut().zip(g).zip(y).for_each(|((d, g), y)| *d += g * y));
                acc(nodes, grads, *b, |d| d.iter_mut().zip(g).zip(x).for_each(|((d, g), x)| *d += g * x));
            }
            Op::Scale(a, c) => acc(nodes, grads, *a, |d| axpy(d, g, *c)),
            Op::AddScalar(a) | Op::Reshape(a) => acc(nodes, grads, *a, |d| axpy(d, g, 1.0)),
            Op::MatMul(a, b) => {
                let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
                let k = x.last_dim();
                let m = x.numel() / k.max(1);
                let n = y.shape()[1];
                acc(nodes, grads, *a, |d| {
                    let mut tmp = vec![0.0; m * k];
                    kernels::matmul_nt(g, y.data(), &mut tmp, m, n, k);
                    axpy(d, &tmp, 1.0);
                });
                acc(nodes, grads, *b, |d| {
                    let mut tmp = vec![0.0; k * n];
                    kernels::matmul_tn(x.data(), g, &mut tmp, k, m, n);
                    axpy(d, &tmp, 1.0);
                });
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (xs, ws) = (nodes[x.0].value.shape(), nodes[w.0].value.shape());
                let dims = (xs[0], xs[1], xs[2]);
                let wd = (ws[0], ws[2]);
                let out_len = node.value.shape()[2];
                let mut dx = nodes[x.0].requires_grad.then(|| vec![0.0; nodes[x.0].value.numel()]);
                let mut dw = nodes[w.0].requires_grad.then(|| vec![0.0; nodes[w.0].value.numel()]);
                let mut db = nodes[b.0].requires_grad.then(|| vec![0.0; nodes[b.0].value.numel()]);
                kernels::conv1d_backward(
                    val(*x),
                    val(*w),
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                    dims,
                    wd,
                    *stride,
                    *padding,
                    out_len,
                );
                for (v, d) in [(*x, dx), (*w, dw), (*b, db)] {
                    if let Some(d) = d {
                        acc(nodes, grads, v, |t| axpy(t, &d, 1.0));
                    }
                }
            }
            Op::Relu(a) => acc(nodes, grads, *a, |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(out) {
                    if *y > 0.0 {
                        *d += g;
                    }
                }
            }),
            Op::Softplus(a) => {
                let x = val(*a);
                acc(nodes, grads, *a, |d| d.iter_mut().zip(g).zip(x).for_each(|((d, g), x)| *d += g * sigmoid(*x)));
            }
            Op::Sigmoid(a) => acc(nodes, grads, *a, |d| {
                d.iter_mut().zip(g).zip(out).for_each(|((d, g), y)| *d += g * y * (1.0 - y))
            }),
            Op::Log(a) => {
                let x = val(*a);
                acc(nodes, grads, *a, |d| d.iter_mut().zip(g).zip(x).for_each(|((d, g), x)| *d += g / x));
            }
            Op::Exp(a) => acc(nodes, grads, *a, |d| d.iter_mut().zip(g).zip(out).for_each(|((d, g), y)| *d += g * y)),
            Op::Square(a) => {
                let x = val(*a);
                acc(nodes, grads, *a, |d| d.iter_mut().zip(g).zip(x).for_each(|((d, g), x)| *d += 2.0 * g * x));
            }
            Op::Sum(a) => acc(nodes, grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::MeanAxis(a, axis) => {
                let (outer, n, inner) = split_axis(nodes[a.0].value.shape(), *axis);
                let inv = 1.0 / n as f64;
                acc(nodes, grads, *a, |d| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for r in 0..n {
                            axpy(&mut d[(o * n + r) * inner..(o * n + r + 1) * inner], src, inv);
                        }
                    }
                });
            }
            Op::SliceLast(a, start) => {
                let n = nodes[a.0].value.last_dim();
                let w = node.value.last_dim();
                acc(nodes, grads, *a, |d| {
                    for (drow, grow) in d.chunks_mut(n).zip(g.chunks(w)) {
                        axpy(&mut drow[*start..*start + w], grow, 1.0);
                    }
                });
            }
            Op::ConcatLast(parts) => {
                let total = node.value.last_dim();
                let mut off = 0;
                for p in parts {
                    let w = nodes[p.0].value.last_dim();
                    acc(nodes, grads, *p, |d| {
                        for (drow, grow) in d.chunks_mut(w).zip(g.chunks(total)) {
                            axpy(drow, &grow[off..off + w], 1.0);
                        }
                    });
                    off += w;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let f = inv_std.len();
                let b = xhat.len() / f;
                let gv = val(*gamma);
                let mut sum_g = vec![0.0; f];
                let mut sum_gx = vec![0.0; f];
                for (grow, hrow) in g.chunks(f).zip(xhat.chunks(f)) {
                    for j in 0..f {
                        sum_g[j] += grow[j];
                        sum_gx[j] += grow[j] * hrow[j];
                    }
                }
                acc(nodes, grads, *gamma, |d| axpy(d, &sum_gx, 1.0));
                acc(nodes, grads, *beta, |d| axpy(d, &sum_g, 1.0));
                acc(nodes, grads, *x, |d| {
                    let bf = b as f64;
                    for ((drow, grow), hrow) in d.chunks_mut(f).zip(g.chunks(f)).zip(xhat.chunks(f)) {
                        for j in 0..f {
                            let s = gv[j] * inv_std[j];
                            drow[j] += if *batch_stats {
                                s * (grow[j] - sum_g[j] / bf - hrow[j] * sum_gx[j] / bf)
                            } else {
                                s * grow[j]
                            };
                        }
                    }
                });
            }
            Op::CholeskyNll { mu, diag, lower, w, z } => {
                let m = nodes[mu.0].value.shape()[1];
                let b = w.len() / m.max(1);
                let nl = m * m.saturating_sub(1) / 2;
                let c = g[0] / b as f64;
                acc(nodes, grads, *mu, |d| axpy(d, w, -c));
                let dv = val(*diag);
                acc(nodes, grads, *diag, |d| {
                    for i in 0..b * m {
                        d[i] += c * (1.0 / dv[i] - w[i] * z[i]);
                    }
                });
                acc(nodes, grads, *lower, |d| {
                    for s in 0..b {
                        let (ws, zs) = (&w[s * m..(s + 1) * m], &z[s * m..(s + 1) * m]);
                        for r in 1..m {
                            for col in 0..r {
                                d[s * nl + r * (r - 1) / 2 + col] -= c * ws[r] * zs[col];
                            }
                        }
                    }
                });
            }
            Op::DiagNll { mu, var, resid } => {
                let b = nodes[mu.0].value.shape()[0];
                let c = g[0] / b as f64;
                let vv = val(*var);
                acc(nodes, grads, *mu, |d| {
                    for ((d, r), v) in d.iter_mut().zip(resid).zip(vv) {
                        *d -= c * r / v;
                    }
                });
                acc(nodes, grads, *var, |d| {
                    for ((d, r), v) in d.iter_mut().zip(resid).zip(vv) {
                        *d += c * (0.5 / v - 0.5 * r * r / (v * v));
                    }
                });
            }
        }
    }
}

/// `(outer, n, inner)` sizes around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

fn acc(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]);
    f(buf);
}
