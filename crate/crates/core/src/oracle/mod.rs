//! Brute-force posterior sampler used as ground truth at desk scale:
//! adaptive random-walk Metropolis for per-series GARCH posteriors and for
//! copula posteriors given plug-in pseudo-observations.

mod diagnostics;
mod mh;

pub use diagnostics::{diagnostics, ess, split_rhat, ParamDiagnostic, MIN_DRAWS};
pub use mh::{accept, mh_sample, McmcConfig, MAX_STUCK, TARGET_ACCEPTANCE};

use crate::copula::{CopulaData, CopulaDensity, CopulaFamily, CopulaParams};
use crate::error::{Error, Result};
use crate::garch::{self, GarchParams, InnovationKind, TransformedGarchParams};
use crate::linalg::Matrix;
use crate::par;
use crate::priors::PriorSpec;
use crate::special::norm_quantile;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Retained MCMC draws in the sampler's (unconstrained) parameterisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcChain {
    pub names: Vec<String>,
    /// `n_iter × m`.
    pub draws: Matrix,
    pub acceptance_rate: f64,
    /// Proposal covariances in the order they were adopted during burn-in.
    pub proposal_history: Vec<Matrix>,
    pub final_scale: f64,
    pub seed: Option<u64>,
}

impl McmcChain {
    pub fn n_draws(&self) -> usize {
        self.draws.rows()
    }

    pub fn n_params(&self) -> usize {
        self.draws.cols()
    }

    pub fn mean(&self) -> Vec<f64> {
        crate::linalg::mean_and_covariance(&self.draws).0
    }

    pub fn sd(&self) -> Vec<f64> {
        let (_, cov) = crate::linalg::mean_and_covariance(&self.draws);
        (0..self.n_params()).map(|j| cov[(j, j)].sqrt()).collect()
    }

    /// Empirical quantile of column `j`.
    pub fn quantile(&self, j: usize, p: f64) -> f64 {
        let mut col = self.draws.column(j);
        col.sort_by(f64::total_cmp);
        let pos = p.clamp(0.0, 1.0) * (col.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        col[lo] + (pos - lo as f64) * (col[hi] - col[lo])
    }

    /// Posterior mean of the constrained GARCH parameters.
    pub fn constrained_garch_mean(&self, kind: InnovationKind) -> Result<GarchParams> {
        let mut acc = [0.0; 4];
        for t in 0..self.n_draws() {
            let p = TransformedGarchParams::from_slice(self.draws.row(t), kind)?.to_constrained();
            acc[0] += p.alpha1;
            acc[1] += p.alpha2;
            acc[2] += p.gamma;
            acc[3] += p.nu_tilde.unwrap_or(0.0);
        }
        let n = self.n_draws() as f64;
        GarchParams::new(
            acc[0] / n,
            acc[1] / n,
            acc[2] / n,
            (kind == InnovationKind::StudentT).then_some(acc[3] / n),
        )
    }

    /// Writes `iter,<names...>` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["iter".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for t in 0..self.n_draws() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.draws.row(t).iter().map(|v| format!("{v:.17e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Names of the transformed GARCH coordinates.
pub fn garch_param_names(kind: InnovationKind) -> Vec<String> {
    let mut v: Vec<String> = ["phi1", "phi2", "phi3"].iter().map(|s| s.to_string()).collect();
    if kind == InnovationKind::StudentT {
        v.push("df".into());
    }
    v
}

fn prior_center(prior: &PriorSpec) -> Result<Vec<f64>> {
    let p = GarchParams::new(
        prior.alpha1.mean(),
        prior.alpha2.mean(),
        prior.gamma.mean(),
        prior.nu_tilde.map(|g| g.mean().max(2.5)),
    )?;
    Ok(p.to_unconstrained()?.to_vec())
}

/// Log posterior (up to a constant) of transformed GARCH parameters;
/// `y = None` gives the prior alone.
pub fn garch_log_posterior<'a>(y: Option<&'a [f64]>, prior: &PriorSpec) -> impl Fn(&[f64]) -> f64 + 'a {
    let dens = prior.marginal_density();
    let kind = prior.marginal_kind;
    move |x: &[f64]| {
        let Ok(t) = TransformedGarchParams::from_slice(x, kind) else {
            return f64::NEG_INFINITY;
        };
        let lp = dens.log_prior_transformed(&t);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        match y {
            Some(y) => lp + garch::log_likelihood(&t.to_constrained(), y),
            None => lp,
        }
    }
}

/// Posterior of one series' transformed GARCH parameters.
pub fn garch_posterior(y: Option<&[f64]>, prior: &PriorSpec, cfg: &McmcConfig, seed: u64) -> Result<McmcChain> {
    garch_posterior_from(y, prior, cfg, seed, &prior_center(prior)?)
}

fn garch_posterior_from(y: Option<&[f64]>, prior: &PriorSpec, cfg: &McmcConfig, seed: u64, init: &[f64]) -> Result<McmcChain> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = garch_log_posterior(y, prior);
    let mut chain = mh_sample(target, init, cfg, &mut rng)?;
    chain.names = garch_param_names(prior.marginal_kind);
    chain.seed = Some(seed);
    Ok(chain)
}

/// Independent GARCH chains started from prior draws; chain `c` uses
/// seed `seed + c`.
pub fn garch_posterior_chains(
    y: Option<&[f64]>,
    prior: &PriorSpec,
    cfg: &McmcConfig,
    n_chains: usize,
    seed: u64,
) -> Result<Vec<McmcChain>> {
    par::map_indexed(n_chains, |c| {
        let s = seed.wrapping_add(c as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5EED_1417);
        let init = prior.sample_marginal(&mut rng)?.to_unconstrained()?.to_vec();
        garch_posterior_from(y, prior, cfg, s, &init)
    })
    .into_iter()
    .collect()
}

/// Log posterior (up to a constant) over the copula network target.
pub struct CopulaTarget<'a> {
    u: &'a CopulaData,
    prior: &'a PriorSpec,
    family: CopulaFamily,
    /// `Φ⁻¹(u)`, reused for every Gaussian-copula evaluation.
    z: Option<Matrix>,
}

impl<'a> CopulaTarget<'a> {
    pub fn new(u: &'a CopulaData, prior: &'a PriorSpec, family: CopulaFamily) -> Result<Self> {
        if u.dim() != prior.dim {
            return Err(Error::shape(format!("data have {} columns, prior expects D={}", u.dim(), prior.dim)));
        }
        let z = if family == CopulaFamily::Gaussian {
            let mut z = u.matrix().clone();
            for v in z.as_mut_slice() {
                *v = norm_quantile(*v)?;
            }
            Some(z)
        } else {
            None
        };
        Ok(Self { u, prior, family, z })
    }

    pub fn log_posterior(&self, x: &[f64]) -> f64 {
        let lp = self.prior.log_prior_copula_target(self.family, x);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let Ok(params) = CopulaParams::from_target(self.prior.dim, self.prior.n_factors, self.family, x) else {
            return f64::NEG_INFINITY;
        };
        let Ok(dens) = CopulaDensity::for_params(&params) else {
            return f64::NEG_INFINITY;
        };
        let ll = match &self.z {
            Some(z) => {
                let mut scratch = Vec::with_capacity(z.cols());
                (0..z.rows()).map(|t| dens.log_density_latent(z.row(t), &mut scratch)).sum::<f64>()
            }
            None => dens.log_density_sum(self.u).unwrap_or(f64::NEG_INFINITY),
        };
        lp + ll
    }
}

fn copula_init(prior: &PriorSpec, family: CopulaFamily) -> Vec<f64> {
    let loadings = crate::copula::FactorLoadings::new(prior.dim, prior.n_factors, prior.loadings_mean.clone())
        .map(|g| g.to_factor_major())
        .unwrap_or_else(|_| vec![0.0; prior.loadings_mean.len()]);
    let mut x = loadings;
    if family == CopulaFamily::StudentT {
        x.push((prior.nu.mean() - 2.0).max(0.5).ln());
    }
    x
}

/// Posterior of the copula parameters given pseudo-observations.
pub fn copula_posterior(u: &CopulaData, prior: &PriorSpec, family: CopulaFamily, cfg: &McmcConfig, seed: u64) -> Result<McmcChain> {
    copula_posterior_from(u, prior, family, cfg, seed, &copula_init(prior, family))
}

fn copula_posterior_from(
    u: &CopulaData,
    prior: &PriorSpec,
    family: CopulaFamily,
    cfg: &McmcConfig,
    seed: u64,
    init: &[f64],
) -> Result<McmcChain> {
    let target = CopulaTarget::new(u, prior, family)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chain = mh_sample(|x| target.log_posterior(x), init, cfg, &mut rng)?;
    chain.names = CopulaParams::target_names(prior.dim, prior.n_factors, family);
    chain.seed = Some(seed);
    Ok(chain)
}

/// Independent copula chains started from prior draws.
pub fn copula_posterior_chains(
    u: &CopulaData,
    prior: &PriorSpec,
    family: CopulaFamily,
    cfg: &McmcConfig,
    n_chains: usize,
    seed: u64,
) -> Result<Vec<McmcChain>> {
    par::map_indexed(n_chains, |c| {
        let s = seed.wrapping_add(c as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5EED_1417);
        // Start near the prior centre, jittered by a quarter prior sd.
        let mut init = copula_init(prior, family);
        for v in init.iter_mut() {
            *v += 0.25 * rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal);
        }
        copula_posterior_from(u, prior, family, cfg, s, &init)
    })
    .into_iter()
    .collect()
}

/// End-to-end two-stage MCMC run mirroring the amortised pipeline.
#[derive(Debug, Clone)]
pub struct McmcIfm {
    /// Per series, the independent chains.
    pub marginal_chains: Vec<Vec<McmcChain>>,
    /// Transformed-space posterior mean, back-transformed.
    pub marginal_plugins: Vec<GarchParams>,
    pub copula_data: CopulaData,
    pub copula_chains: Vec<McmcChain>,
    pub seconds: f64,
}

/// Runs GARCH chains on every column of `data`, plugs in their means and
/// runs copula chains on the resulting pseudo-observations.
/// Series `d` uses seeds from `seed + 1000·d`; the copula stage from
/// `seed + 1000·D`.
pub fn mcmc_ifm(
    data: &Matrix,
    prior: &PriorSpec,
    family: CopulaFamily,
    cfg: &McmcConfig,
    n_chains: usize,
    seed: u64,
) -> Result<McmcIfm> {
    let started = std::time::Instant::now();
    let (t, d) = (data.rows(), data.cols());
    if n_chains == 0 {
        return Err(Error::Config("at least one chain is required".into()));
    }
    if d != prior.dim {
        return Err(Error::shape(format!("data have {d} columns, prior expects D={}", prior.dim)));
    }
    let mut marginal_chains = Vec::with_capacity(d);
    let mut marginal_plugins = Vec::with_capacity(d);
    let mut u = Matrix::zeros(t, d);
    for j in 0..d {
        let y = data.column(j);
        let chains = garch_posterior_chains(Some(&y), prior, cfg, n_chains, seed.wrapping_add(1000 * j as u64))?;
        let plug = pooled_garch_mean(&chains, prior.marginal_kind)?;
        for (i, v) in garch::marginal_cdf(&plug, &y)?.into_iter().enumerate() {
            u[(i, j)] = v;
        }
        marginal_chains.push(chains);
        marginal_plugins.push(plug);
    }
    let copula_data = CopulaData::new(u)?;
    let copula_chains = copula_posterior_chains(&copula_data, prior, family, cfg, n_chains, seed.wrapping_add(1000 * d as u64))?;
    Ok(McmcIfm {
        marginal_chains,
        marginal_plugins,
        copula_data,
        copula_chains,
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn pooled_mean(chains: &[McmcChain]) -> Vec<f64> {
    let m = chains[0].n_params();
    let mut acc = vec![0.0; m];
    let mut n = 0usize;
    for c in chains {
        for i in 0..c.n_draws() {
            for (a, v) in acc.iter_mut().zip(c.draws.row(i)) {
                *a += v;
            }
        }
        n += c.n_draws();
    }
    acc.iter().map(|a| a / n as f64).collect()
}

fn pooled_garch_mean(chains: &[McmcChain], kind: InnovationKind) -> Result<GarchParams> {
    Ok(TransformedGarchParams::from_slice(&pooled_mean(chains), kind)?.to_constrained())
}

impl McmcIfm {
    /// Diagnostics with parameter names matching the amortised report
    /// (`y{d}.phi1`, ..., then the copula target names).
    pub fn diagnostics(&self) -> Result<Vec<ParamDiagnostic>> {
        let mut rows = Vec::new();
        for (d, chains) in self.marginal_chains.iter().enumerate() {
            for mut r in diagnostics(chains)? {
                r.name = format!("y{}.{}", d + 1, r.name);
                rows.push(r);
            }
        }
        rows.extend(diagnostics(&self.copula_chains)?);
        Ok(rows)
    }

    /// Pooled posterior draws, one column per parameter.
    pub fn pooled_draws(&self) -> (Vec<String>, Matrix) {
        let groups: Vec<(Option<usize>, &Vec<McmcChain>)> = self
            .marginal_chains
            .iter()
            .enumerate()
            .map(|(d, c)| (Some(d), c))
            .chain(std::iter::once((None, &self.copula_chains)))
            .collect();
        let n: usize = self.copula_chains.iter().map(|c| c.n_draws()).sum();
        let mut names = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for (d, chains) in groups {
            for (j, name) in chains[0].names.iter().enumerate() {
                names.push(match d {
                    Some(d) => format!("y{}.{name}", d + 1),
                    None => name.clone(),
                });
                let mut col: Vec<f64> = chains.iter().flat_map(|c| c.draws.column(j)).collect();
                col.truncate(n);
                col.resize(n, f64::NAN);
                cols.push(col);
            }
        }
        let mut m = Matrix::zeros(n, cols.len());
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        (names, m)
    }
}

/// Writes a diagnostics table `parameter,mean,sd,n_eff,rhat`.
pub fn write_diagnostics_csv(rows: &[ParamDiagnostic], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "parameter,mean,sd,n_eff,rhat")?;
    for r in rows {
        writeln!(f, "{},{:.10e},{:.10e},{:.3},{:.6}", r.name, r.mean, r.sd, r.ess, r.rhat)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
