//! The marginal CNN and the copula Deep Sets network, their Gaussian
//! posterior heads, the training loop and checkpoint files.
//!
//! Parameters live in a flat [`ParamStore`]; a forward pass binds them as
//! leaves of a fresh [`Graph`]. Batch-norm running statistics are stored as
//! non-trainable buffers in the same store so snapshots and checkpoints
//! capture them.

mod checkpoint;
mod deepsets;
mod marginal;
mod posterior;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use deepsets::{CopulaArch, CopulaNet};
pub use marginal::{MarginalArch, MarginalNet};
pub use posterior::{GaussianPosterior, PosteriorScale};
pub use train::{evaluate, train, BatchSource, EpochRecord, TrainConfig, TrainReport};

use crate::autodiff::{BatchStats, Graph, Tensor, Var};
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Floor added to softplus outputs used as scales or variances.
pub const SCALE_FLOOR: f64 = 1e-6;
/// Running-statistics momentum of batch norm.
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Trainable tensors plus non-trainable buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    names: Vec<String>,
    buffers: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
            names: Vec::new(),
            buffers: Vec::new(),
        }
    }

    fn add(&mut self, name: String, t: Tensor) -> usize {
        self.tensors.push(t);
        self.names.push(name);
        self.tensors.len() - 1
    }

    fn add_uniform(&mut self, name: String, shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> usize {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches data"))
    }

    fn add_buffer(&mut self, data: Vec<f64>) -> usize {
        self.buffers.push(data);
        self.buffers.len() - 1
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }

    /// Number of trainable scalars.
    pub fn n_trainable(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Trainable scalars followed by buffer scalars.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_trainable() + self.buffers.iter().map(Vec::len).sum::<usize>());
        for t in &self.tensors {
            out.extend_from_slice(t.data());
        }
        for b in &self.buffers {
            out.extend_from_slice(b);
        }
        out
    }

    /// Inverse of [`flat`](Self::flat) for a store of the same layout.
    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        let want = self.flat_len();
        if v.len() != want {
            return Err(Error::shape(format!("parameter payload has {} values, network needs {want}", v.len())));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.data_mut().copy_from_slice(&v[off..off + n]);
            off += n;
        }
        for b in &mut self.buffers {
            let n = b.len();
            b.copy_from_slice(&v[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn flat_len(&self) -> usize {
        self.n_trainable() + self.buffers.iter().map(Vec::len).sum::<usize>()
    }

    /// Binds every tensor as a graph leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        let rg = g.is_recording();
        self.tensors.iter().map(|t| g.leaf(t.clone(), rg)).collect()
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// State threaded through one forward pass.
pub struct Ctx<'a> {
    pub g: &'a mut Graph,
    pub params: &'a [Var],
    pub store: &'a ParamStore,
    pub mode: Mode,
    /// `(mean buffer, var buffer, stats)` collected by training-mode batch norms.
    pub bn_updates: Vec<(usize, usize, BatchStats)>,
}

impl<'a> Ctx<'a> {
    pub fn new(g: &'a mut Graph, params: &'a [Var], store: &'a ParamStore, mode: Mode) -> Self {
        Self {
            g,
            params,
            store,
            mode,
            bn_updates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    pub(crate) fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.add_uniform(format!("{name}.weight"), &[fan_in, fan_out], bound, rng);
        let b = store.add_uniform(format!("{name}.bias"), &[fan_out], bound, rng);
        Self { w, b }
    }

    pub(crate) fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let h = cx.g.matmul(x, cx.params[self.w])?;
        cx.g.add_bias(h, cx.params[self.b])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv1d {
    w: usize,
    b: usize,
    stride: usize,
    padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        let w = store.add_uniform(format!("{name}.weight"), &[c_out, c_in, kernel], bound, rng);
        let b = store.add_uniform(format!("{name}.bias"), &[c_out], bound, rng);
        Self { w, b, stride, padding }
    }

    pub(crate) fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        cx.g.conv1d(x, cx.params[self.w], cx.params[self.b], self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNorm1d {
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

impl BatchNorm1d {
    pub(crate) fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(format!("{name}.weight"), Tensor::full(&[width], 1.0));
        let beta = store.add(format!("{name}.bias"), Tensor::zeros(&[width]));
        let running_mean = store.add_buffer(vec![0.0; width]);
        let running_var = store.add_buffer(vec![1.0; width]);
        Self {
            gamma,
            beta,
            running_mean,
            running_var,
        }
    }

    pub(crate) fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let (gamma, beta) = (cx.params[self.gamma], cx.params[self.beta]);
        match cx.mode {
            Mode::Train => {
                let (y, stats) = cx.g.batch_norm_train(x, gamma, beta, BN_EPS)?;
                cx.bn_updates.push((self.running_mean, self.running_var, stats));
                Ok(y)
            }
            Mode::Eval => cx.g.batch_norm_eval(
                x,
                gamma,
                beta,
                &cx.store.buffers[self.running_mean],
                &cx.store.buffers[self.running_var],
                BN_EPS,
            ),
        }
    }
}

/// Folds training-mode batch statistics into the running buffers.
pub(crate) fn apply_bn_updates(store: &mut ParamStore, updates: &[(usize, usize, BatchStats)]) {
    for (m, v, s) in updates {
        for (r, b) in store.buffers[*m].iter_mut().zip(&s.mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in store.buffers[*v].iter_mut().zip(&s.var_unbiased) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

/// Fully connected stack: hidden layers are `Linear → [BatchNorm] → ReLU`,
/// the output layer is a bare `Linear`.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    linears: Vec<Linear>,
    norms: Vec<BatchNorm1d>,
    /// Whether the last layer is also followed by `[BatchNorm] → ReLU`.
    activate_output: bool,
}

impl Mlp {
    pub(crate) fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        output: usize,
        batch_norm: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut linears = Vec::new();
        let mut norms = Vec::new();
        let mut width = input;
        for (i, &h) in hidden.iter().enumerate() {
            linears.push(Linear::new(store, &format!("{name}.{i}"), width, h, rng));
            if batch_norm {
                norms.push(BatchNorm1d::new(store, &format!("{name}.{i}.bn"), h));
            }
            width = h;
        }
        linears.push(Linear::new(store, &format!("{name}.out"), width, output, rng));
        Self {
            linears,
            norms,
            activate_output: false,
        }
    }

    /// Stack where every layer is `Linear → [BatchNorm] → ReLU`.
    pub(crate) fn trunk(store: &mut ParamStore, name: &str, input: usize, widths: &[usize], batch_norm: bool, rng: &mut ChaCha8Rng) -> Self {
        let (hidden, last) = widths.split_at(widths.len() - 1);
        let mut m = Self::new(store, name, input, hidden, last[0], batch_norm, rng);
        if batch_norm {
            m.norms.push(BatchNorm1d::new(store, &format!("{name}.out.bn"), last[0]));
        }
        m.activate_output = true;
        m
    }

    pub(crate) fn forward(&self, cx: &mut Ctx, x: Var) -> Result<Var> {
        let n = self.linears.len();
        let n_act = if self.activate_output { n } else { n - 1 };
        let mut h = x;
        for i in 0..n_act {
            h = self.linears[i].forward(cx, h)?;
            if let Some(bn) = self.norms.get(i) {
                h = bn.forward(cx, h)?;
            }
            h = cx.g.relu(h)?;
        }
        if self.activate_output {
            Ok(h)
        } else {
            self.linears[n - 1].forward(cx, h)
        }
    }
}

/// Graph nodes of a batch of Gaussian posteriors.
#[derive(Debug, Clone, Copy)]
pub enum HeadOutputs {
    /// `[B, m]` means, `[B, m]` positive Cholesky diagonals and
    /// `[B, m(m-1)/2]` strict-lower entries.
    Cholesky { mean: Var, diag: Var, lower: Var },
    /// `[B, m]` means and positive variances.
    Diagonal { mean: Var, var: Var },
}

impl HeadOutputs {
    /// Batch-mean negative log density of `targets` (`[B, m]`).
    pub fn nll(&self, g: &mut Graph, targets: &Tensor) -> Result<Var> {
        match *self {
            HeadOutputs::Cholesky { mean, diag, lower } => g.cholesky_nll(mean, diag, lower, targets),
            HeadOutputs::Diagonal { mean, var } => g.diag_nll(mean, var, targets),
        }
    }

    /// Per-sample posteriors read off the graph values.
    pub fn posteriors(&self, g: &Graph) -> Result<Vec<GaussianPosterior>> {
        match *self {
            HeadOutputs::Cholesky { mean, diag, lower } => {
                let (b, m) = (g.shape(mean)[0], g.shape(mean)[1]);
                let nl = m * (m - 1) / 2;
                let (mv, dv, lv) = (g.value(mean).data(), g.value(diag).data(), g.value(lower).data());
                (0..b)
                    .map(|s| {
                        GaussianPosterior::from_cholesky_parts(
                            mv[s * m..(s + 1) * m].to_vec(),
                            &dv[s * m..(s + 1) * m],
                            &lv[s * nl..(s + 1) * nl],
                        )
                    })
                    .collect()
            }
            HeadOutputs::Diagonal { mean, var } => {
                let (b, m) = (g.shape(mean)[0], g.shape(mean)[1]);
                let (mv, vv) = (g.value(mean).data(), g.value(var).data());
                (0..b)
                    .map(|s| GaussianPosterior::diagonal(mv[s * m..(s + 1) * m].to_vec(), &vv[s * m..(s + 1) * m]))
                    .collect()
            }
        }
    }
}

/// Common interface of the two network families.
pub trait Network {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Shape of one input sample (without the batch axis).
    fn sample_shape(&self) -> Vec<usize>;
    fn target_width(&self) -> usize;
    /// Forward pass on `x` of shape `[B, sample_shape..]`.
    fn forward(&self, cx: &mut Ctx, x: Var) -> Result<HeadOutputs>;
    /// Key/value architecture descriptor stored in checkpoints.
    fn descriptor(&self) -> Vec<(String, String)>;

    /// Number of trainable scalars.
    fn n_params(&self) -> usize {
        self.store().n_trainable()
    }

    /// Eval-mode posteriors for a batch of inputs.
    fn posteriors(&self, inputs: &Tensor) -> Result<Vec<GaussianPosterior>> {
        check_input_shape(&self.sample_shape(), inputs.shape())?;
        let mut g = Graph::no_record();
        let params = self.store().bind(&mut g);
        let x = g.constant(inputs.clone());
        let mut cx = Ctx::new(&mut g, &params, self.store(), Mode::Eval);
        let heads = self.forward(&mut cx, x)?;
        heads.posteriors(&g)
    }
}

pub(crate) fn check_input_shape(sample: &[usize], got: &[usize]) -> Result<()> {
    if got.len() != sample.len() + 1 || got[1..] != *sample {
        return Err(Error::shape(format!(
            "network expects inputs [B, {}], got {got:?}",
            sample.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(())
}

/// Rows `start..end` along axis 0.
pub fn slice_batch(t: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let shape = t.shape();
    if shape.is_empty() || end > shape[0] || start > end {
        return Err(Error::shape(format!("slice {start}..{end} of {shape:?}")));
    }
    let row: usize = shape[1..].iter().product();
    let mut s = shape.to_vec();
    s[0] = end - start;
    Tensor::new(s, t.data()[start * row..end * row].to_vec())
}

/// Gathers rows `idx` along axis 0.
pub fn gather_batch(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let shape = t.shape();
    let row: usize = shape[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        if i >= shape[0] {
            return Err(Error::shape(format!("row {i} of {shape:?}")));
        }
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut s = shape.to_vec();
    s[0] = idx.len();
    Tensor::new(s, data)
}

#[cfg(test)]
mod tests;
