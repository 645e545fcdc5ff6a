//! Prior distributions over GARCH and copula parameters, prior sampling for
//! training-set generation, prior log-densities for the MCMC oracle, and
//! calibration of prior hyperparameters from historical data.
//!
//! Gamma priors are parameterised by shape and rate throughout.

use crate::copula::{loadings_to_correlation, n_free_loadings, CopulaData, CopulaDensity, CopulaFamily, CopulaParams, FactorLoadings};
use crate::error::{Error, Result};
use crate::garch::{self, GarchParams, InnovationKind, TransformedGarchParams};
use crate::linalg::Matrix;
use crate::optim::nelder_mead;
use crate::special::{beta_reg, ln_beta, norm_quantile};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};

/// Cap on rejection-sampling attempts for constrained draws.
pub const MAX_REJECTIONS: usize = 1_000_000;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl BetaPrior {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::domain(format!("beta({a}, {b}) needs positive finite parameters")));
        }
        Ok(Self { a, b })
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0 && x < 1.0) {
            return f64::NEG_INFINITY;
        }
        (self.a - 1.0) * x.ln() + (self.b - 1.0) * (-x).ln_1p() - ln_beta(self.a, self.b)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            beta_reg(self.a, self.b, x)
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        bisect(|x| self.cdf(x), p, 0.0, 1.0)
    }

    fn sampler(&self) -> Result<Beta<f64>> {
        Beta::new(self.a, self.b).map_err(|e| Error::domain(format!("beta({}, {}): {e}", self.a, self.b)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
            return Err(Error::domain(format!("gamma({shape}, rate {rate}) needs positive finite parameters")));
        }
        Ok(Self { shape, rate })
    }

    /// From shape and scale (`rate = 1/scale`).
    pub fn with_scale(shape: f64, scale: f64) -> Result<Self> {
        Self::new(shape, 1.0 / scale)
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln() - self.rate * x
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            gamma_lr(self.shape, self.rate * x)
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let mut hi = self.mean().max(1e-12);
        while self.cdf(hi) < p {
            hi *= 2.0;
        }
        bisect(|x| self.cdf(x), p, 0.0, hi)
    }

    /// Quantile of the distribution truncated to `(lower, ∞)`.
    pub fn truncated_quantile(&self, p: f64, lower: f64) -> f64 {
        let f0 = self.cdf(lower);
        self.quantile(f0 + p * (1.0 - f0))
    }

    fn sampler(&self) -> Result<Gamma<f64>> {
        Gamma::new(self.shape, 1.0 / self.rate)
            .map_err(|e| Error::domain(format!("gamma({}, rate {}): {e}", self.shape, self.rate)))
    }
}

fn bisect(cdf: impl Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Priors for all model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub marginal_kind: InnovationKind,
    pub alpha1: BetaPrior,
    pub alpha2: BetaPrior,
    pub gamma: GammaPrior,
    /// t-innovation degrees of freedom, truncated to `(2, ∞)`.
    pub nu_tilde: Option<GammaPrior>,
    pub dim: usize,
    pub n_factors: usize,
    /// Prior mean `μ*` of the unconstrained loadings (storage order), with
    /// unit variances.
    pub loadings_mean: Vec<f64>,
    /// Copula degrees of freedom, truncated to `(2, ∞)`.
    pub nu: GammaPrior,
}

/// Default hyperparameters for the given marginal kind and copula shape.
pub fn default_priors(marginal_kind: InnovationKind, dim: usize, n_factors: usize) -> PriorSpec {
    let (alpha1, alpha2, gamma, nu_tilde) = match marginal_kind {
        InnovationKind::Gaussian => (
            BetaPrior { a: 11.34, b: 85.12 },
            BetaPrior { a: 19.58, b: 4.62 },
            GammaPrior { shape: 4.69, rate: 1.0 / 0.03 },
            None,
        ),
        InnovationKind::StudentT => (
            BetaPrior { a: 28.75, b: 324.57 },
            BetaPrior { a: 61.61, b: 22.40 },
            GammaPrior { shape: 3.53, rate: 1.0 / 0.0276 },
            Some(GammaPrior { shape: 8.39, rate: 1.0 / 1.45 }),
        ),
    };
    PriorSpec {
        marginal_kind,
        alpha1,
        alpha2,
        gamma,
        nu_tilde,
        dim,
        n_factors,
        loadings_mean: vec![0.0; n_free_loadings(dim, n_factors.min(dim))],
        nu: GammaPrior { shape: 4.74, rate: 1.0 / 2.03 },
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        BetaPrior::new(self.alpha1.a, self.alpha1.b)?;
        BetaPrior::new(self.alpha2.a, self.alpha2.b)?;
        GammaPrior::new(self.gamma.shape, self.gamma.rate)?;
        GammaPrior::new(self.nu.shape, self.nu.rate)?;
        match (self.marginal_kind, self.nu_tilde) {
            (InnovationKind::StudentT, Some(g)) => {
                GammaPrior::new(g.shape, g.rate)?;
            }
            (InnovationKind::Gaussian, None) => {}
            _ => return Err(Error::Config("nu_tilde prior must be present exactly for t innovations".into())),
        }
        if self.n_factors > self.dim {
            return Err(Error::Config(format!("k={} exceeds D={}", self.n_factors, self.dim)));
        }
        let want = n_free_loadings(self.dim, self.n_factors);
        if self.loadings_mean.len() != want {
            return Err(Error::Config(format!(
                "loadings prior mean has {} entries, D={} k={} needs {want}",
                self.loadings_mean.len(),
                self.dim,
                self.n_factors
            )));
        }
        if self.loadings_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("loadings prior mean must be finite".into()));
        }
        Ok(())
    }

    /// Same marginal priors with a different copula shape (`μ*` reset to 0).
    pub fn with_copula_shape(&self, dim: usize, n_factors: usize) -> Self {
        Self {
            dim,
            n_factors,
            loadings_mean: vec![0.0; n_free_loadings(dim, n_factors.min(dim))],
            ..self.clone()
        }
    }

    /// Draws constrained GARCH parameters, resampling `(α₁, α₂)` until
    /// `α₁ + α₂ < 1`.
    pub fn sample_marginal<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GarchParams> {
        let (b1, b2) = (self.alpha1.sampler()?, self.alpha2.sampler()?);
        let a1 = b1.sample(rng);
        let mut accepted = None;
        for _ in 0..MAX_REJECTIONS {
            let a2 = b2.sample(rng);
            if a1 + a2 < 1.0 && a2 > 0.0 {
                accepted = Some(a2);
                break;
            }
        }
        let a2 = accepted.ok_or_else(|| {
            Error::numerical(format!("no stationary alpha2 draw in {MAX_REJECTIONS} attempts (alpha1 = {a1})"))
        })?;
        let mut gamma = 0.0;
        let g = self.gamma.sampler()?;
        for _ in 0..MAX_REJECTIONS {
            gamma = g.sample(rng);
            if gamma > 0.0 {
                break;
            }
        }
        let nu_tilde = match self.nu_tilde {
            Some(p) => Some(sample_truncated_gamma(&p, 2.0, rng)?),
            None => None,
        };
        GarchParams::new(a1, a2, gamma, nu_tilde)
    }

    /// Draws copula parameters of the given family.
    pub fn sample_copula<R: Rng + ?Sized>(&self, family: CopulaFamily, rng: &mut R) -> Result<CopulaParams> {
        let vals = self
            .loadings_mean
            .iter()
            .map(|m| m + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let loadings = FactorLoadings::new(self.dim, self.n_factors, vals)?;
        match family {
            CopulaFamily::Gaussian => Ok(CopulaParams::gaussian(loadings)),
            CopulaFamily::StudentT => CopulaParams::student_t(loadings, sample_truncated_gamma(&self.nu, 2.0, rng)?),
        }
    }

    /// Precomputes the normalising constants of the marginal prior.
    pub fn marginal_density(&self) -> MarginalPriorDensity {
        MarginalPriorDensity::new(self)
    }

    /// Log prior of copula parameters (normalised).
    pub fn log_prior_copula(&self, p: &CopulaParams) -> f64 {
        if p.loadings.values().len() != self.loadings_mean.len() {
            return f64::NEG_INFINITY;
        }
        let lp: f64 = p
            .loadings
            .values()
            .iter()
            .zip(&self.loadings_mean)
            .map(|(v, m)| -HALF_LN_2PI - 0.5 * (v - m) * (v - m))
            .sum();
        match (p.family, p.nu) {
            (CopulaFamily::Gaussian, _) => lp,
            (CopulaFamily::StudentT, Some(nu)) => lp + truncated_gamma_ln_pdf(&self.nu, nu, 2.0),
            (CopulaFamily::StudentT, None) => f64::NEG_INFINITY,
        }
    }

    /// Log prior of the copula network target (factor-major loadings, then
    /// `df = ln(ν - 2)`), including the Jacobian of `ν = e^df + 2`.
    pub fn log_prior_copula_target(&self, family: CopulaFamily, target: &[f64]) -> f64 {
        match CopulaParams::from_target(self.dim, self.n_factors, family, target) {
            Ok(p) => {
                let jac = if family == CopulaFamily::StudentT { target[target.len() - 1] } else { 0.0 };
                self.log_prior_copula(&p) + jac
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }
}

/// Draw from `Gamma` truncated to `(lower, ∞)` by rejection.
pub fn sample_truncated_gamma<R: Rng + ?Sized>(p: &GammaPrior, lower: f64, rng: &mut R) -> Result<f64> {
    let g = p.sampler()?;
    for _ in 0..MAX_REJECTIONS {
        let x = g.sample(rng);
        if x > lower {
            return Ok(x);
        }
    }
    Err(Error::numerical(format!(
        "no gamma({}, rate {}) draw above {lower} in {MAX_REJECTIONS} attempts",
        p.shape, p.rate
    )))
}

fn truncated_gamma_ln_pdf(p: &GammaPrior, x: f64, lower: f64) -> f64 {
    if !(x > lower) {
        return f64::NEG_INFINITY;
    }
    p.ln_pdf(x) - (1.0 - p.cdf(lower)).ln()
}

/// Normalised log prior of GARCH parameters, accounting for the
/// `α₁ + α₂ < 1` rejection step and the `ν̃ > 2` truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPriorDensity {
    spec: PriorSpec,
    ln_nu_tail: f64,
}

impl MarginalPriorDensity {
    pub fn new(spec: &PriorSpec) -> Self {
        let tail = spec.nu_tilde.map_or(1.0, |g| 1.0 - g.cdf(2.0));
        Self {
            spec: spec.clone(),
            ln_nu_tail: tail.ln(),
        }
    }

    pub fn log_prior(&self, p: &GarchParams) -> f64 {
        if p.validate().is_err() || p.alpha1 <= 0.0 || p.alpha2 <= 0.0 || p.kind() != self.spec.marginal_kind {
            return f64::NEG_INFINITY;
        }
        // α₂ is drawn from its Beta prior truncated to (0, 1 - α₁).
        let mut lp = self.spec.alpha1.ln_pdf(p.alpha1) + self.spec.alpha2.ln_pdf(p.alpha2) + self.spec.gamma.ln_pdf(p.gamma)
            - self.spec.alpha2.cdf(1.0 - p.alpha1).ln();
        if let (Some(g), Some(nu)) = (self.spec.nu_tilde, p.nu_tilde) {
            lp += g.ln_pdf(nu) - self.ln_nu_tail;
        }
        lp
    }

    /// Log prior density of the transformed parameters (with Jacobian).
    pub fn log_prior_transformed(&self, t: &TransformedGarchParams) -> f64 {
        if !t.is_finite() {
            return f64::NEG_INFINITY;
        }
        self.log_prior(&t.to_constrained()) + t.log_jacobian()
    }
}

/// How each series is summarised during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CalibrationMethod {
    /// Per-series maximum likelihood.
    MaximumLikelihood,
    /// Per-series posterior means from the MCMC oracle under the default priors.
    Mcmc { n_iter: usize, n_burn: usize, seed: u64 },
}

/// Maximum-likelihood GARCH fit, optimised over the transformed parameters.
pub fn fit_garch_ml(y: &[f64], kind: InnovationKind) -> Result<GarchParams> {
    let var = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    if !(var > 0.0) {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    let mut x0 = vec![(0.9f64 / 0.1).ln(), var.ln(), (0.1f64 / 0.8).ln()];
    if kind == InnovationKind::StudentT {
        x0.push(6f64.ln());
    }
    let nll = |x: &[f64]| match TransformedGarchParams::from_slice(x, kind) {
        Ok(t) => -garch::log_likelihood(&t.to_constrained(), y),
        Err(_) => f64::INFINITY,
    };
    let mut best = nelder_mead(nll, &x0, 0.5, 1e-10, 4000);
    // A restart guards against premature simplex collapse.
    best = nelder_mead(nll, &best.x, 0.1, 1e-12, 4000);
    if !best.value.is_finite() {
        return Err(Error::numerical("GARCH likelihood is not finite anywhere on the search path"));
    }
    Ok(TransformedGarchParams::from_slice(&best.x, kind)?.to_constrained())
}

/// Beta maximum-likelihood fit.
pub fn fit_beta_ml(xs: &[f64]) -> Result<BetaPrior> {
    let (mean, var) = moments(xs)?;
    if xs.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::domain("beta fit needs values in (0,1)"));
    }
    let common = (mean * (1.0 - mean) / var - 1.0).max(1e-3);
    let x0 = [(mean * common).ln(), ((1.0 - mean) * common).ln()];
    let n = xs.len() as f64;
    let s1: f64 = xs.iter().map(|x| x.ln()).sum();
    let s2: f64 = xs.iter().map(|x| (-x).ln_1p()).sum();
    let nll = |p: &[f64]| {
        let (a, b) = (p[0].exp(), p[1].exp());
        -((a - 1.0) * s1 + (b - 1.0) * s2 - n * ln_beta(a, b))
    };
    let m = nelder_mead(nll, &x0, 0.3, 1e-13, 5000);
    let m = nelder_mead(nll, &m.x, 0.05, 1e-14, 5000);
    BetaPrior::new(m.x[0].exp(), m.x[1].exp())
}

/// Gamma maximum-likelihood fit (shape from `ln a - ψ(a) = ln x̄ - mean(ln x)`).
pub fn fit_gamma_ml(xs: &[f64]) -> Result<GammaPrior> {
    let (mean, _) = moments(xs)?;
    if xs.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::domain("gamma fit needs positive values"));
    }
    let mean_log = xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64;
    let s = mean.ln() - mean_log;
    if !(s > 0.0) {
        return Err(Error::Degenerate("gamma fit: log-moment gap is not positive".into()));
    }
    let f = |a: f64| a.ln() - digamma(a) - s;
    let (mut lo, mut hi) = (1e-8, 1.0);
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::numerical("gamma shape search diverged"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shape = 0.5 * (lo + hi);
    GammaPrior::new(shape, shape / mean)
}

fn moments(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 values, got {}", xs.len())));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    if xs.iter().all(|&x| x == xs[0]) || !(var > 0.0) || !var.is_finite() {
        return Err(Error::Degenerate("values have zero variance".into()));
    }
    Ok((mean, var))
}

/// Calibrates prior hyperparameters from historical series (`T* × D`).
///
/// Each series is summarised by ML or oracle posterior means; Beta and Gamma
/// priors are fitted to the per-series estimates by maximum likelihood; `μ*`
/// is set to the maximum-likelihood Gaussian-copula loadings of the implied
/// pseudo-observations. The copula `ν` prior keeps its default.
pub fn calibrate_priors(
    histories: &Matrix,
    n_factors: usize,
    kind: InnovationKind,
    method: CalibrationMethod,
) -> Result<PriorSpec> {
    let (t_len, dim) = (histories.rows(), histories.cols());
    if t_len < 100 {
        return Err(Error::Degenerate(format!("calibration needs at least 100 observations, got {t_len}")));
    }
    if dim < 3 {
        return Err(Error::Degenerate(format!("calibration needs at least 3 series, got {dim}")));
    }
    let base = default_priors(kind, dim, n_factors);
    let fits: Vec<Result<GarchParams>> = crate::par::map_indexed(dim, |d| {
        let y = histories.column(d);
        match method {
            CalibrationMethod::MaximumLikelihood => fit_garch_ml(&y, kind),
            CalibrationMethod::Mcmc { n_iter, n_burn, seed } => {
                let cfg = crate::oracle::McmcConfig {
                    n_iter,
                    n_burn,
                    ..Default::default()
                };
                let chain = crate::oracle::garch_posterior(Some(&y), &base, &cfg, seed.wrapping_add(d as u64))?;
                let mean = chain.constrained_garch_mean(kind)?;
                Ok(mean)
            }
        }
    });
    let fits: Vec<GarchParams> = fits.into_iter().collect::<Result<_>>()?;
    let a1: Vec<f64> = fits.iter().map(|p| p.alpha1).collect();
    let a2: Vec<f64> = fits.iter().map(|p| p.alpha2).collect();
    let g: Vec<f64> = fits.iter().map(|p| p.gamma).collect();
    let mut spec = base.clone();
    spec.alpha1 = fit_beta_ml(&a1)?;
    spec.alpha2 = fit_beta_ml(&a2)?;
    spec.gamma = fit_gamma_ml(&g)?;
    if kind == InnovationKind::StudentT {
        let nus: Vec<f64> = fits.iter().filter_map(|p| p.nu_tilde).collect();
        spec.nu_tilde = Some(fit_gamma_ml(&nus)?);
    }
    let mut u = Matrix::zeros(t_len, dim);
    for (d, p) in fits.iter().enumerate() {
        for (t, v) in garch::marginal_cdf(p, &histories.column(d))?.into_iter().enumerate() {
            u[(t, d)] = v;
        }
    }
    spec.loadings_mean = fit_gaussian_copula_ml(&CopulaData::new(u)?, n_factors)?.values().to_vec();
    spec.validate()?;
    Ok(spec)
}

/// Maximum-likelihood Gaussian factor-copula loadings.
pub fn fit_gaussian_copula_ml(u: &CopulaData, n_factors: usize) -> Result<FactorLoadings> {
    let dim = u.dim();
    let n = n_free_loadings(dim, n_factors);
    if n == 0 {
        return FactorLoadings::zeros(dim, n_factors);
    }
    let mut z = Matrix::zeros(u.n_obs(), dim);
    for (dst, &src) in z.as_mut_slice().iter_mut().zip(u.matrix().as_slice()) {
        *dst = norm_quantile(src)?;
    }
    let nll = |v: &[f64]| {
        let Ok(g) = FactorLoadings::new(dim, n_factors, v.to_vec()) else {
            return f64::INFINITY;
        };
        let Ok(dens) = CopulaDensity::gaussian(&loadings_to_correlation(&g)) else {
            return f64::INFINITY;
        };
        let mut scratch = Vec::new();
        -(0..z.rows()).map(|t| dens.log_density_latent(z.row(t), &mut scratch)).sum::<f64>()
    };
    let m = nelder_mead(nll, &vec![0.0; n], 0.5, 1e-10, 400 * n);
    let m = nelder_mead(nll, &m.x, 0.1, 1e-12, 400 * n);
    FactorLoadings::new(dim, n_factors, m.x)
}
