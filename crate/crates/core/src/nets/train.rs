use super::{apply_bn_updates, gather_batch, slice_batch, Ctx, Mode, Network};
use crate::autodiff::{Adam, AdamConfig, Graph, Tensor};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::simgen::{DataMode, Simulator};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Source of simulated `(inputs, targets)` pairs, indexed for reproducibility.
pub trait BatchSource: Sync {
    fn target_width(&self) -> usize;
    /// Samples `start..start + n` under `base_seed`.
    fn generate(&self, n: usize, base_seed: u64, start: u64) -> Result<(Tensor, Matrix)>;
}

impl BatchSource for Simulator {
    fn target_width(&self) -> usize {
        Simulator::target_width(self)
    }

    fn generate(&self, n: usize, base_seed: u64, start: u64) -> Result<(Tensor, Matrix)> {
        Simulator::generate(self, n, base_seed, start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_frac: f64,
    /// Simulated pairs per epoch (training plus validation share).
    pub n_per_epoch: usize,
    pub seed: u64,
    pub data_mode: DataMode,
    /// Consecutive non-finite batch losses tolerated before aborting.
    pub max_nonfinite: usize,
    /// Print one line per epoch to stderr.
    pub progress: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 9e-5,
            max_epochs: 4000,
            patience: 100,
            val_frac: 0.1,
            n_per_epoch: 30_000,
            seed: 0,
            data_mode: DataMode::Fresh,
            max_nonfinite: 5,
            progress: false,
        }
    }
}

impl TrainConfig {
    /// Settings for the reduced CPU preset.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            max_epochs: 300,
            patience: 30,
            n_per_epoch: 2000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str| Err(Error::Config(format!("training config: invalid {f}")));
        if self.batch_size < 2 {
            return bad("batch_size (need >= 2)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs");
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return bad("val_frac");
        }
        if self.n_val() < 1 || self.n_train() < self.batch_size {
            return bad("n_per_epoch (too small for the batch size and validation share)");
        }
        if self.max_nonfinite == 0 {
            return bad("max_nonfinite");
        }
        Ok(())
    }

    pub fn n_val(&self) -> usize {
        (self.val_frac * self.n_per_epoch as f64).round() as usize
    }

    pub fn n_train(&self) -> usize {
        self.n_per_epoch - self.n_val().min(self.n_per_epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation loss of the initial parameters.
    pub initial_val_loss: f64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub seconds: f64,
}

impl TrainReport {
    /// Loss curves as `epoch,train_loss,val_loss`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_loss"])?;
        for r in &self.history {
            w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

const VAL_SEED_SALT: u64 = 0x5bd1_e995_0000_0000;
const SHUFFLE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const EVAL_CHUNK: usize = 256;

/// Mean per-sample loss of `net` (eval mode) on a dataset.
pub fn evaluate<N: Network>(net: &N, inputs: &Tensor, targets: &Matrix) -> Result<f64> {
    let n = inputs.shape()[0];
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let mut g = Graph::no_record();
        let params = net.store().bind(&mut g);
        let x = g.constant(slice_batch(inputs, start, end)?);
        let heads = {
            let mut cx = Ctx::new(&mut g, &params, net.store(), Mode::Eval);
            net.forward(&mut cx, x)?
        };
        let t = Tensor::new(vec![end - start, targets.cols()], targets.row_range(start, end).into_vec())?;
        let loss = heads.nll(&mut g, &t)?;
        total += g.value(loss).item() * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

/// One optimisation step on a batch; returns the batch loss. Non-finite
/// losses leave the parameters untouched.
fn step<N: Network>(net: &mut N, adam: &mut Adam, x: Tensor, t: Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let params = net.store().bind(&mut g);
    let xv = g.constant(x);
    let (heads, updates) = {
        let mut cx = Ctx::new(&mut g, &params, net.store(), Mode::Train);
        let h = net.forward(&mut cx, xv)?;
        (h, std::mem::take(&mut cx.bn_updates))
    };
    let loss = heads.nll(&mut g, &t)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Ok(value);
    }
    g.backward(loss)?;
    let grads: Vec<Option<&[f64]>> = params.iter().map(|&p| g.grad(p)).collect();
    let store = net.store_mut();
    let mut bufs: Vec<&mut [f64]> = store.tensors_mut().iter_mut().map(|t| t.data_mut()).collect();
    adam.step(&mut bufs, &grads)?;
    apply_bn_updates(store, &updates);
    Ok(value)
}

/// Trains `net` on simulated data with early stopping on the validation
/// loss; the best-validation parameters are restored on return.
pub fn train<N: Network, S: BatchSource + ?Sized>(net: &mut N, source: &S, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if source.target_width() != net.target_width() {
        return Err(Error::shape(format!(
            "source yields {} targets, network predicts {}",
            source.target_width(),
            net.target_width()
        )));
    }
    let started = std::time::Instant::now();
    let (n_train, n_val) = (cfg.n_train(), cfg.n_val());
    let (val_x, val_t) = source.generate(n_val, cfg.seed ^ VAL_SEED_SALT, 0)?;
    super::check_input_shape(&net.sample_shape(), val_x.shape())?;
    let mut fixed = match cfg.data_mode {
        DataMode::Fixed => Some(source.generate(n_train, cfg.seed, 0)?),
        DataMode::Fresh => None,
    };
    let sizes: Vec<usize> = net.store().tensors().iter().map(Tensor::numel).collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &sizes,
    );
    let initial_val_loss = evaluate(net, &val_x, &val_t)?;
    let mut best = (initial_val_loss, 0usize, net.store().clone());
    let mut history = Vec::new();
    let mut since_best = 0;
    let mut nonfinite = 0;
    let mut batch_index = 0usize;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let fresh;
        let (x, t) = match &mut fixed {
            Some(d) => (&d.0, &d.1),
            None => {
                fresh = source.generate(n_train, cfg.seed, ((epoch - 1) * n_train) as u64)?;
                (&fresh.0, &fresh.1)
            }
        };
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT.wrapping_mul(epoch as u64)));
        let mut sum = 0.0;
        let mut count = 0usize;
        for idx in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let bx = gather_batch(x, idx)?;
            let tt: Vec<f64> = idx.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
            let bt = Tensor::new(vec![idx.len(), t.cols()], tt)?;
            let loss = step(net, &mut adam, bx, bt)?;
            batch_index += 1;
            if loss.is_finite() {
                nonfinite = 0;
                sum += loss;
                count += 1;
            } else {
                nonfinite += 1;
                if nonfinite >= cfg.max_nonfinite {
                    return Err(Error::numerical(format!(
                        "loss non-finite for {nonfinite} consecutive batches (epoch {epoch}, batch {batch_index})"
                    )));
                }
            }
        }
        let train_loss = if count > 0 { sum / count as f64 } else { f64::NAN };
        let val_loss = evaluate(net, &val_x, &val_t)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if cfg.progress {
            eprintln!("epoch {epoch:>5}  train {train_loss:>12.6}  val {val_loss:>12.6}");
        }
        if val_loss < best.0 {
            best = (val_loss, epoch, net.store().clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let epochs_run = history.len();
    *net.store_mut() = best.2;
    Ok(TrainReport {
        initial_val_loss,
        history,
        best_epoch: best.1,
        best_val_loss: best.0,
        epochs_run,
        stopped_early,
        seconds: started.elapsed().as_secs_f64(),
    })
}
