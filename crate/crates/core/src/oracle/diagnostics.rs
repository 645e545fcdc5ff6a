use super::McmcChain;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Minimum retained draws per chain.
pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostic {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    pub rhat: f64,
}

/// Effective sample size and split-R̂ for each parameter across chains.
pub fn diagnostics(chains: &[McmcChain]) -> Result<Vec<ParamDiagnostic>> {
    let first = chains.first().ok_or_else(|| Error::shape("diagnostics need at least one chain"))?;
    let m = first.n_params();
    for c in chains {
        if c.n_params() != m {
            return Err(Error::shape(format!("chains disagree on width: {} vs {}", c.n_params(), m)));
        }
        if c.n_draws() < MIN_DRAWS {
            return Err(Error::Degenerate(format!(
                "chain has {} draws, diagnostics need at least {MIN_DRAWS}",
                c.n_draws()
            )));
        }
    }
    Ok((0..m)
        .map(|j| {
            let series: Vec<Vec<f64>> = chains.iter().map(|c| c.draws.column(j)).collect();
            let refs: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
            let all: Vec<f64> = series.iter().flatten().copied().collect();
            let n = all.len() as f64;
            let mean = all.iter().sum::<f64>() / n;
            let sd = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            ParamDiagnostic {
                name: first.names[j].clone(),
                mean,
                sd,
                ess: ess(&refs),
                rhat: split_rhat(&refs),
            }
        })
        .collect())
}

/// Splits each chain in half, dropping a trailing odd draw.
fn split(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0) / 2;
    chains
        .iter()
        .flat_map(|c| [c[..n].to_vec(), c[n..2 * n].to_vec()])
        .collect()
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// `(W, var⁺, chain means)` of equal-length chains.
fn variance_components(chains: &[Vec<f64>]) -> (f64, f64, Vec<f64>) {
    let n = chains[0].len() as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let b_over_n = if means.len() > 1 { mean_var(&means).1 } else { 0.0 };
    (w, (n - 1.0) / n * w + b_over_n, means)
}

/// Split potential scale reduction factor.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let s = split(chains);
    let (w, var_plus, _) = variance_components(&s);
    if !(w > 0.0) {
        return 1.0;
    }
    (var_plus / w).sqrt()
}

/// Multi-chain effective sample size with Geyer's initial positive and
/// monotone sequence truncation, computed on split chains.
pub fn ess(chains: &[&[f64]]) -> f64 {
    let s = split(chains);
    let n = s[0].len();
    let mc = s.len();
    let total = (mc * n) as f64;
    let (w, var_plus, means) = variance_components(&s);
    if !(var_plus > 0.0) || !(w > 0.0) {
        return total;
    }
    let acov = |lag: usize| -> f64 {
        s.iter()
            .zip(&means)
            .map(|(c, m)| {
                let mut a = 0.0;
                for t in 0..n - lag {
                    a += (c[t] - m) * (c[t + lag] - m);
                }
                a / n as f64
            })
            .sum::<f64>()
            / mc as f64
    };
    // ρ̂_t = 1 - (W - mean acov_t) / var⁺ with W using the (n-1) denominator.
    let rho = |lag: usize| 1.0 - (w - acov(lag)) / var_plus;
    let mut tau_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = if k == 0 { 1.0 + rho(1) } else { rho(2 * k) + rho(2 * k + 1) };
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau_sum += pair;
        prev_pair = pair;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * tau_sum).max(1.0 / total.log10().max(1.0));
    total / tau
}
