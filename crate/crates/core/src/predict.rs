//! Predictive densities, rolling-window log predictive density scores and
//! model comparison.
//!
//! The predictive density of `y_{T+h}` is the average over posterior draws
//! of the copula-model joint density, with each draw's GARCH variance
//! advanced from the observed window.

use crate::copula::{CopulaDensity, CopulaParams};
use crate::error::{Error, Result};
use crate::garch::{self, GarchParams};
use crate::linalg::Matrix;
use crate::nets::{CopulaNet, MarginalNet};
use crate::nifm::{infer, infer_marginals, joint_posterior_sample, PluginMode};
use crate::par;
use crate::special::log_mean_exp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Constrained parameter draws. `copula = None` is the independence copula.
#[derive(Debug, Clone)]
pub struct ParameterDraws {
    /// `J` rows of `D` marginal parameter sets.
    pub marginals: Vec<Vec<GarchParams>>,
    pub copula: Option<Vec<CopulaParams>>,
}

impl ParameterDraws {
    pub fn n_draws(&self) -> usize {
        self.marginals.len()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.marginals.is_empty() {
            return Err(Error::Config("no posterior draws".into()));
        }
        if self.marginals.iter().any(|m| m.len() != dim) {
            return Err(Error::shape(format!("draws do not all have {dim} marginals")));
        }
        if let Some(c) = &self.copula {
            if c.len() != self.marginals.len() {
                return Err(Error::shape(format!("{} copula draws vs {} marginal draws", c.len(), self.marginals.len())));
            }
            if c.iter().any(|p| p.loadings.dim() != dim) {
                return Err(Error::shape(format!("copula draws are not {dim}-dimensional")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDensityEstimate {
    pub horizon: usize,
    pub log_density: f64,
    pub n_draws: usize,
    /// Draws whose density was not finite; excluded from the average.
    pub n_dropped: usize,
    /// One simulated `y_{T+h}` per draw, `J × D`.
    pub draws: Option<Matrix>,
}

/// Joint log density of `y` under one parameter draw at variances `var`.
fn joint_log_density(m: &[GarchParams], c: Option<&CopulaDensity>, var: &[f64], y: &[f64], u: &mut [f64]) -> Result<f64> {
    let mut lp = 0.0;
    for d in 0..m.len() {
        lp += garch::point_log_density(&m[d], var[d], y[d])?;
        u[d] = garch::point_cdf(&m[d], var[d], y[d])?;
    }
    if let Some(c) = c {
        lp += c.log_density(u)?;
    }
    Ok(lp)
}

/// Draws one observation vector given variances.
fn simulate_step<R: Rng + ?Sized>(m: &[GarchParams], c: Option<&CopulaParams>, var: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let u: Vec<f64> = match c {
        Some(c) => crate::copula::simulate_copula_data(c, 1, rng)?.into_matrix().into_vec(),
        None => (0..m.len())
            .map(|_| rng.random::<f64>().clamp(garch::CDF_CLAMP, 1.0 - garch::CDF_CLAMP))
            .collect(),
    };
    m.iter()
        .zip(&u)
        .zip(var)
        .map(|((p, &u), &v)| garch::point_quantile(p, v, u))
        .collect()
}

/// `ln (1/J) Σ_j p(y_next | θ⁽ʲ⁾, window)` for `y_next = y_{T+h}`.
///
/// For `h > 1` each draw simulates the intermediate observations and
/// advances its variances through them. With `keep_draws`, one predictive
/// draw of `y_{T+h}` per parameter draw is also returned.
pub fn predictive_log_density<R: Rng + ?Sized>(
    params: &ParameterDraws,
    window: &Matrix,
    y_next: &[f64],
    horizon: usize,
    keep_draws: bool,
    rng: &mut R,
) -> Result<PredictiveDensityEstimate> {
    let dim = window.cols();
    if y_next.len() != dim {
        return Err(Error::shape(format!("observation has {} entries, window has {dim} series", y_next.len())));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    params.validate(dim)?;
    let cols: Vec<Vec<f64>> = (0..dim).map(|d| window.column(d)).collect();
    let j_total = params.n_draws();
    let mut lps = Vec::with_capacity(j_total);
    let mut dropped = 0;
    let mut sims = keep_draws.then(|| Matrix::zeros(j_total, dim));
    let mut u = vec![0.0; dim];
    for j in 0..j_total {
        let m = &params.marginals[j];
        let cp = params.copula.as_ref().map(|c| &c[j]);
        let mut var: Vec<f64> = m.iter().zip(&cols).map(|(p, y)| garch::forecast_variance(p, y)).collect();
        for _ in 1..horizon {
            let y = simulate_step(m, cp, &var, rng)?;
            for d in 0..dim {
                var[d] = garch::next_variance(&m[d], y[d], var[d]);
            }
        }
        let dens = cp.map(CopulaDensity::for_params).transpose();
        let lp = match dens {
            Ok(c) => joint_log_density(m, c.as_ref(), &var, y_next, &mut u).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        };
        if lp.is_finite() {
            lps.push(lp);
        } else {
            dropped += 1;
        }
        if let Some(s) = sims.as_mut() {
            let y = simulate_step(m, cp, &var, rng)?;
            s.row_mut(j).copy_from_slice(&y);
        }
    }
    if lps.is_empty() {
        return Err(Error::numerical(format!("all {j_total} predictive draws were non-finite")));
    }
    Ok(PredictiveDensityEstimate {
        horizon,
        log_density: log_mean_exp(&lps),
        n_draws: j_total,
        n_dropped: dropped,
        draws: sims,
    })
}

/// Copula stage of a candidate model.
#[derive(Debug, Clone, Copy)]
pub enum CopulaStage<'a> {
    /// Zero-factor model: independent margins.
    Independence,
    Net(&'a CopulaNet),
}

#[derive(Debug, Clone)]
pub struct Candidate<'a> {
    pub label: String,
    pub marginal: &'a MarginalNet,
    pub copula: CopulaStage<'a>,
}

impl<'a> Candidate<'a> {
    pub fn new(label: impl Into<String>, marginal: &'a MarginalNet, copula: CopulaStage<'a>) -> Self {
        Self {
            label: label.into(),
            marginal,
            copula,
        }
    }

    pub fn window(&self) -> usize {
        self.marginal.arch().n_obs
    }

    /// Amortised posterior on `window`, then `J` constrained draws.
    pub fn posterior_draws<R: Rng + ?Sized>(&self, window: &Matrix, n_draws: usize, rng: &mut R) -> Result<ParameterDraws> {
        match self.copula {
            CopulaStage::Net(c) => {
                let r = infer(self.marginal, c, window)?;
                let d = joint_posterior_sample(&r, n_draws, rng)?;
                Ok(ParameterDraws {
                    marginals: d.marginals,
                    copula: Some(d.copula),
                })
            }
            CopulaStage::Independence => {
                let st = infer_marginals(self.marginal, window, PluginMode::TransformedMean)?;
                let mut x = vec![0.0; st.kind.n_params()];
                let mut marginals = Vec::with_capacity(n_draws);
                for _ in 0..n_draws {
                    let mut row = Vec::with_capacity(st.posteriors.len());
                    for p in &st.posteriors {
                        p.sample_one(rng, &mut x);
                        row.push(crate::garch::TransformedGarchParams::from_slice(&x, st.kind)?.to_constrained());
                    }
                    marginals.push(row);
                }
                Ok(ParameterDraws { marginals, copula: None })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub label: String,
    pub window: usize,
    pub rolls: usize,
    pub horizon: usize,
    pub log_densities: Vec<f64>,
    pub dropped: Vec<usize>,
    pub seconds_per_roll: Vec<f64>,
    pub lpds: f64,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
struct RollRow {
    roll: usize,
    log_density: f64,
    dropped: usize,
    seconds: f64,
}

impl ValidationReport {
    /// Per-roll table: `roll,log_density,dropped,seconds`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<RollRow> = (0..self.log_densities.len())
            .map(|i| RollRow {
                roll: i,
                log_density: self.log_densities[i],
                dropped: self.dropped[i],
                seconds: self.seconds_per_roll[i],
            })
            .collect();
        crate::io::write_rows_csv(path, &rows)
    }
}

/// Seed used for roll `i`.
pub fn roll_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// Rolling-window validation over `K = rows − T` out-of-sample points:
/// roll `i` fits rows `i..i+T` and scores row `i+T+h−1`, for
/// `i = 0..=K−h`. Roll `i` draws with seed `seed + i`.
pub fn rolling_validate(candidate: &Candidate, full: &Matrix, horizon: usize, n_draws: usize, seed: u64) -> Result<ValidationReport> {
    let started = Instant::now();
    let t = candidate.window();
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    if full.rows() < t + horizon {
        return Err(Error::shape(format!(
            "{} rows cannot hold a window of {t} plus horizon {horizon}",
            full.rows()
        )));
    }
    let k = full.rows() - t;
    let n_rolls = k - horizon + 1;
    let results = par::map_indexed(n_rolls, |i| -> Result<(f64, usize, f64)> {
        let t0 = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(roll_seed(seed, i));
        let window = full.row_range(i, i + t);
        let draws = candidate.posterior_draws(&window, n_draws, &mut rng)?;
        let est = predictive_log_density(&draws, &window, full.row(i + t + horizon - 1), horizon, false, &mut rng)?;
        Ok((est.log_density, est.n_dropped, t0.elapsed().as_secs_f64()))
    });
    let mut log_densities = Vec::with_capacity(n_rolls);
    let mut dropped = Vec::with_capacity(n_rolls);
    let mut seconds_per_roll = Vec::with_capacity(n_rolls);
    for (i, r) in results.into_iter().enumerate() {
        let (lp, dr, s) = r.map_err(|e| match e {
            Error::Shape(m) => Error::Shape(format!("roll {i}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("roll {i}: {m}")),
            other => other,
        })?;
        log_densities.push(lp);
        dropped.push(dr);
        seconds_per_roll.push(s);
    }
    let lpds = log_densities.iter().sum();
    Ok(ValidationReport {
        label: candidate.label.clone(),
        window: t,
        rolls: k,
        horizon,
        log_densities,
        dropped,
        seconds_per_roll,
        lpds,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Validates every candidate under the same seed and sorts by LPDS,
/// highest first. Ties keep the input order.
pub fn compare_models(candidates: &[Candidate], full: &Matrix, horizon: usize, n_draws: usize, seed: u64) -> Result<Vec<ValidationReport>> {
    if let Some(c) = candidates.iter().find(|c| c.window() != candidates[0].window()) {
        return Err(Error::shape(format!(
            "candidate {} has window {}, {} has {}",
            c.label,
            c.window(),
            candidates[0].label,
            candidates[0].window()
        )));
    }
    let mut reports = candidates
        .iter()
        .map(|c| rolling_validate(c, full, horizon, n_draws, seed))
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| b.lpds.total_cmp(&a.lpds));
    Ok(reports)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RankingRow {
    pub rank: usize,
    pub label: String,
    pub lpds: f64,
    pub seconds: f64,
}

pub fn ranking(reports: &[ValidationReport]) -> Vec<RankingRow> {
    reports
        .iter()
        .enumerate()
        .map(|(i, r)| RankingRow {
            rank: i + 1,
            label: r.label.clone(),
            lpds: r.lpds,
            seconds: r.seconds,
        })
        .collect()
}

/// Silverman's rule-of-thumb bandwidth `0.9 min(sd, IQR/1.34) n^{-1/5}`.
pub fn silverman_bandwidth(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::Degenerate("bandwidth needs at least 2 points".into()));
    }
    let (_, sd) = crate::stats::mean_sd(x);
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (s.len() - 1) as f64;
        let (lo, f) = (h.floor() as usize, h.fract());
        s[lo] + f * (s[(lo + 1).min(s.len() - 1)] - s[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::Degenerate("points have zero spread".into()));
    }
    Ok(0.9 * spread * (x.len() as f64).powf(-0.2))
}

/// Gaussian kernel density estimate of `x` evaluated on `grid`.
pub fn kde(x: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let h = silverman_bandwidth(x)?;
    let norm = 1.0 / (x.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&g| norm * x.iter().map(|&xi| (-0.5 * ((g - xi) / h).powi(2)).exp()).sum::<f64>())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::{CopulaFamily, FactorLoadings};
    use crate::garch::InnovationKind;
    use crate::nets::{CopulaArch, MarginalArch};
    use crate::priors::default_priors;

    fn window(t: usize, d: usize, seed: u64) -> Matrix {
        let spec = default_priors(InnovationKind::Gaussian, d, 1);
        crate::simgen::simulate_joint_from_prior(&spec, CopulaFamily::Gaussian, t, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
            .data
    }

    fn marginal_draws(j: usize, d: usize, seed: u64) -> Vec<Vec<GarchParams>> {
        let spec = default_priors(InnovationKind::Gaussian, d, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..j).map(|_| (0..d).map(|_| spec.sample_marginal(&mut rng).unwrap()).collect()).collect()
    }

    #[test]
    fn identity_copula_factorises() {
        let (j, d) = (200, 3);
        let w = window(100, d, 1);
        let m = marginal_draws(j, d, 2);
        let zero = CopulaParams::gaussian(FactorLoadings::zeros(d, 1).unwrap());
        let with = ParameterDraws {
            marginals: m.clone(),
            copula: Some(vec![zero; j]),
        };
        let without = ParameterDraws { marginals: m, copula: None };
        let y = [0.3, -0.5, 0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = predictive_log_density(&with, &w, &y, 1, false, &mut rng).unwrap();
        let b = predictive_log_density(&without, &w, &y, 1, false, &mut rng).unwrap();
        assert!((a.log_density - b.log_density).abs() < 1e-10);
        // One draw: the joint density is the product of the marginal ones.
        let one = ParameterDraws {
            marginals: vec![without.marginals[0].clone()],
            copula: None,
        };
        let joint = predictive_log_density(&one, &w, &y, 1, false, &mut rng).unwrap().log_density;
        let sum: f64 = (0..d)
            .map(|k| {
                let w1 = Matrix::from_vec(w.rows(), 1, w.column(k)).unwrap();
                let p = ParameterDraws {
                    marginals: vec![vec![one.marginals[0][k]]],
                    copula: None,
                };
                predictive_log_density(&p, &w1, &y[k..k + 1], 1, false, &mut rng).unwrap().log_density
            })
            .sum();
        assert!((joint - sum).abs() < 1e-10);
    }

    /// Direct evaluation: variance recursion and Gaussian density written out.
    fn univariate_oracle(draws: &[GarchParams], y: &[f64], y_next: f64) -> f64 {
        let mut total = 0.0;
        for p in draws {
            let mut s2 = p.gamma / (1.0 - p.alpha1 - p.alpha2);
            for v in y {
                s2 = p.gamma + p.alpha1 * v * v + p.alpha2 * s2;
            }
            total += (-(y_next * y_next) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();
        }
        (total / draws.len() as f64).ln()
    }

    #[test]
    fn univariate_matches_direct_sum() {
        let w = window(150, 1, 3);
        let m = marginal_draws(500, 1, 4);
        let flat: Vec<GarchParams> = m.iter().map(|r| r[0]).collect();
        let p = ParameterDraws { marginals: m, copula: None };
        for y in [-0.8, 0.0, 0.05, 1.7] {
            let got = predictive_log_density(&p, &w, &[y], 1, false, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap()
                .log_density;
            let want = univariate_oracle(&flat, &w.column(0), y);
            assert!(((got - want) / want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn monte_carlo_error_shrinks() {
        // Fixed instance; the spread of independent estimates falls like 1/√J.
        let w = window(100, 2, 5);
        let y = [0.4, 0.6];
        let loadings = FactorLoadings::new(2, 1, vec![0.0, 1.0]).unwrap();
        let spread = |j: usize| {
            let ests: Vec<f64> = (0..12u64)
                .map(|s| {
                    let p = ParameterDraws {
                        marginals: marginal_draws(j, 2, 100 + s),
                        copula: Some(vec![CopulaParams::gaussian(loadings.clone()); j]),
                    };
                    predictive_log_density(&p, &w, &y, 1, false, &mut ChaCha8Rng::seed_from_u64(s))
                        .unwrap()
                        .log_density
                })
                .collect();
            crate::stats::mean_sd(&ests).1
        };
        let (small, large) = (spread(500), spread(32_000));
        let ratio = small / large;
        assert!(ratio > 8.0 * 0.5 && ratio < 8.0 * 2.0, "ratio {ratio}");
    }

    #[test]
    fn horizon_and_draws() {
        let w = window(80, 2, 6);
        let loadings = FactorLoadings::new(2, 1, vec![0.0, 1.0]).unwrap();
        let p = ParameterDraws {
            marginals: marginal_draws(300, 2, 7),
            copula: Some(vec![CopulaParams::gaussian(loadings); 300]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = predictive_log_density(&p, &w, &[0.1, 0.2], 3, true, &mut rng).unwrap();
        assert_eq!(e.horizon, 3);
        assert!(e.log_density.is_finite() && e.n_dropped == 0);
        let draws = e.draws.unwrap();
        assert_eq!((draws.rows(), draws.cols()), (300, 2));
        assert!(crate::stats::pearson(&draws.column(0), &draws.column(1)) > 0.3);
        assert!(predictive_log_density(&p, &w, &[0.1], 1, false, &mut rng).is_err());
        assert!(predictive_log_density(&p, &w, &[0.1, 0.2], 0, false, &mut rng).is_err());
    }

    #[test]
    fn rolling_report_invariants() {
        let t = 60;
        let m = MarginalNet::new(MarginalArch::desk(InnovationKind::Gaussian, t), 1).unwrap();
        let c = CopulaNet::new(CopulaArch::desk(2, 1, CopulaFamily::Gaussian, t), 2).unwrap();
        let full = window(t + 4, 2, 8);
        let cand = Candidate::new("k1", &m, CopulaStage::Net(&c));
        let r = rolling_validate(&cand, &full, 1, 50, 9).unwrap();
        assert_eq!(r.log_densities.len(), 4);
        assert_eq!(r.lpds, r.log_densities.iter().sum::<f64>());
        // K = h: one roll whose value is the total.
        let single = rolling_validate(&cand, &full.row_range(0, t + 2), 2, 50, 9).unwrap();
        assert_eq!(single.log_densities.len(), 1);
        assert_eq!(single.lpds, single.log_densities[0]);
        assert!(rolling_validate(&cand, &full.row_range(0, t), 1, 50, 9).is_err());
        // Identical candidates tie exactly; a single candidate ranks first.
        let twin = Candidate::new("k1-copy", &m, CopulaStage::Net(&c));
        let ind = Candidate::new("k0", &m, CopulaStage::Independence);
        let reps = compare_models(&[cand.clone(), twin, ind], &full, 1, 50, 9).unwrap();
        let a = reps.iter().find(|r| r.label == "k1").unwrap();
        let b = reps.iter().find(|r| r.label == "k1-copy").unwrap();
        assert_eq!(a.lpds.to_bits(), b.lpds.to_bits());
        assert!(reps.windows(2).all(|w| w[0].lpds >= w[1].lpds));
        let solo = compare_models(&[cand], &full, 1, 50, 9).unwrap();
        assert_eq!(ranking(&solo)[0].rank, 1);
        let dir = tempfile::tempdir().unwrap();
        r.write_csv(&dir.path().join("r.csv")).unwrap();
        let (names, mtx) = crate::io::read_matrix_csv(&dir.path().join("r.csv")).unwrap();
        assert_eq!(names, ["roll", "log_density", "dropped", "seconds"]);
        assert_eq!(mtx.rows(), 4);
    }

    #[test]
    fn kde_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..400).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let h = silverman_bandwidth(&x).unwrap();
        assert!(h > 0.2 && h < 0.5);
        let grid: Vec<f64> = (0..2001).map(|i| -8.0 + 16.0 * i as f64 / 2000.0).collect();
        let f = kde(&x, &grid).unwrap();
        let area: f64 = f.iter().sum::<f64>() * 16.0 / 2000.0;
        assert!((area - 1.0).abs() < 1e-3);
        assert!(silverman_bandwidth(&[1.0, 1.0, 1.0]).is_err());
    }
}
