use super::McmcChain;
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Target acceptance rate for random-walk proposals.
pub const TARGET_ACCEPTANCE: f64 = 0.234;

/// Consecutive burn-in rejections treated as a badly scaled target.
pub const MAX_STUCK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Retained draws after burn-in.
    pub n_iter: usize,
    pub n_burn: usize,
    /// Adapt the proposal during burn-in.
    pub adapt: bool,
    /// Initial per-coordinate proposal standard deviation.
    pub init_scale: f64,
    /// Recompute the proposal covariance every this many burn-in steps.
    pub adapt_every: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iter: 20_000,
            n_burn: 5_000,
            adapt: true,
            init_scale: 0.1,
            adapt_every: 100,
        }
    }
}

/// Metropolis accept rule shared by every sampler here.
#[inline]
pub fn accept(log_alpha: f64, uniform: f64) -> bool {
    log_alpha >= 0.0 || uniform.ln() < log_alpha
}

/// Adaptive Gaussian random-walk Metropolis.
///
/// During burn-in the proposal covariance tracks the empirical covariance of
/// the chain so far and a global scale is tuned by Robbins–Monro towards
/// [`TARGET_ACCEPTANCE`]. Both are frozen once burn-in ends.
pub fn mh_sample<R: Rng + ?Sized>(
    log_target: impl Fn(&[f64]) -> f64,
    init: &[f64],
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<McmcChain> {
    let m = init.len();
    if m == 0 {
        return Err(Error::shape("MCMC needs at least one parameter"));
    }
    let mut x = init.to_vec();
    let mut lp = log_target(&x);
    if !lp.is_finite() {
        return Err(Error::numerical(format!("log target is not finite at the initial point ({lp})")));
    }
    let base_scale = 2.38 * 2.38 / m as f64;
    let mut log_lambda = 0.0f64;
    let mut cov = Matrix::identity(m);
    for i in 0..m {
        cov[(i, i)] = cfg.init_scale * cfg.init_scale / base_scale;
    }
    let mut chol = Cholesky::new(&cov)?;
    let mut history = vec![cov.clone()];

    // Running moments of the burn-in path (Welford).
    let mut n_seen = 0usize;
    let mut mean = vec![0.0; m];
    let mut m2 = Matrix::zeros(m, m);

    let mut prop = vec![0.0; m];
    let mut step = vec![0.0; m];
    let mut eps = vec![0.0; m];
    let mut stuck = 0usize;
    let mut accepted_post = 0usize;
    let mut draws = Matrix::zeros(cfg.n_iter, m);

    for it in 0..cfg.n_burn + cfg.n_iter {
        let burning = it < cfg.n_burn;
        let scale = (base_scale * log_lambda.exp()).sqrt();
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        chol.mul_lower(&eps, &mut step);
        for j in 0..m {
            prop[j] = x[j] + scale * step[j];
        }
        let lp_prop = log_target(&prop);
        let log_alpha = if lp_prop.is_nan() { f64::NEG_INFINITY } else { lp_prop - lp };
        let u: f64 = rng.random();
        let acc = accept(log_alpha, u);
        if acc {
            x.copy_from_slice(&prop);
            lp = lp_prop;
            stuck = 0;
        } else {
            stuck += 1;
        }
        if burning {
            if stuck >= MAX_STUCK {
                return Err(Error::numerical(format!(
                    "{MAX_STUCK} consecutive rejections during burn-in at iteration {it}"
                )));
            }
            if cfg.adapt {
                let rate = 1.0 / ((it + 1) as f64).powf(0.6);
                let a = log_alpha.min(0.0).exp();
                log_lambda += rate * (a - TARGET_ACCEPTANCE);
                n_seen += 1;
                let prev: Vec<f64> = x.iter().zip(&mean).map(|(v, mu)| v - mu).collect();
                for j in 0..m {
                    mean[j] += prev[j] / n_seen as f64;
                }
                for a in 0..m {
                    for b in 0..m {
                        m2[(a, b)] += prev[a] * (x[b] - mean[b]);
                    }
                }
                if (it + 1) % cfg.adapt_every.max(1) == 0 && n_seen > 2 * m + 10 {
                    let mut c = Matrix::zeros(m, m);
                    for a in 0..m {
                        for b in 0..m {
                            c[(a, b)] = 0.5 * (m2[(a, b)] + m2[(b, a)]) / (n_seen - 1) as f64;
                        }
                        c[(a, a)] += 1e-10;
                    }
                    if let Ok(ch) = Cholesky::new(&c) {
                        chol = ch;
                        cov = c;
                        history.push(cov.clone());
                    }
                }
            }
        } else {
            if acc {
                accepted_post += 1;
            }
            draws.row_mut(it - cfg.n_burn).copy_from_slice(&x);
        }
    }
    let acceptance_rate = if cfg.n_iter > 0 { accepted_post as f64 / cfg.n_iter as f64 } else { 0.0 };
    Ok(McmcChain {
        names: (0..m).map(|j| format!("x{}", j + 1)).collect(),
        draws,
        acceptance_rate,
        proposal_history: history,
        final_scale: (base_scale * log_lambda.exp()).sqrt(),
        seed: None,
    })
}
