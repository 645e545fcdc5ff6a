//! The two-stage amortised pipeline: marginal posteriors per series, plug-in
//! marginal estimates, pseudo-observations, then the copula posterior.

use crate::autodiff::Tensor;
use crate::copula::{CopulaData, CopulaFamily, CopulaParams};
use crate::error::{Error, Result};
use crate::garch::{self, GarchParams, InnovationKind, TransformedGarchParams};
use crate::linalg::Matrix;
use crate::nets::{CopulaNet, GaussianPosterior, MarginalNet, Network};
use crate::oracle::garch_param_names;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Default number of posterior draws.
pub const DEFAULT_DRAWS: usize = 1000;

/// How the plug-in marginal estimate is formed from the marginal posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PluginMode {
    /// Back-transform of the analytic mean in transformed space.
    TransformedMean,
    /// Monte Carlo mean of back-transformed draws.
    ConstrainedMean { n_draws: usize, seed: u64 },
}

impl Default for PluginMode {
    fn default() -> Self {
        PluginMode::TransformedMean
    }
}

/// Output of one amortised inference run.
#[derive(Debug, Clone)]
pub struct NifmResult {
    pub marginal_kind: InnovationKind,
    pub family: CopulaFamily,
    pub n_factors: usize,
    pub marginal_posteriors: Vec<GaussianPosterior>,
    pub marginal_plugins: Vec<GarchParams>,
    pub copula_data: CopulaData,
    pub copula_posterior: GaussianPosterior,
    pub seconds: f64,
}

/// Runs both networks on a `T × D` dataset.
pub fn infer(marginal: &MarginalNet, copula: &CopulaNet, data: &Matrix) -> Result<NifmResult> {
    infer_with(marginal, copula, data, PluginMode::TransformedMean)
}

pub fn infer_with(marginal: &MarginalNet, copula: &CopulaNet, data: &Matrix, mode: PluginMode) -> Result<NifmResult> {
    let started = Instant::now();
    let (t, d) = (data.rows(), data.cols());
    if d < 2 {
        return Err(Error::shape(format!("the copula stage needs D >= 2 series, got {d}")));
    }
    let ca = copula.arch();
    if t != ca.n_obs || d != ca.dim {
        return Err(Error::shape(format!(
            "data are {t}x{d}; copula network expects {}x{}",
            ca.n_obs, ca.dim
        )));
    }
    let m = infer_marginals(marginal, data, mode)?;
    let copula_posterior = copula.posterior(&m.copula_data)?;
    Ok(NifmResult {
        marginal_kind: m.kind,
        family: ca.family,
        n_factors: ca.n_factors,
        marginal_posteriors: m.posteriors,
        marginal_plugins: m.plugins,
        copula_data: m.copula_data,
        copula_posterior,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// First stage alone: marginal posteriors, plug-ins and pseudo-observations.
#[derive(Debug, Clone)]
pub struct MarginalStage {
    pub kind: InnovationKind,
    pub posteriors: Vec<GaussianPosterior>,
    pub plugins: Vec<GarchParams>,
    pub copula_data: CopulaData,
}

pub fn infer_marginals(marginal: &MarginalNet, data: &Matrix, mode: PluginMode) -> Result<MarginalStage> {
    let (t, d) = (data.rows(), data.cols());
    let ma = marginal.arch();
    if t != ma.n_obs {
        return Err(Error::shape(format!("data have T = {t}; marginal network expects T = {}", ma.n_obs)));
    }
    if d == 0 {
        return Err(Error::shape("data have no series"));
    }
    let mut series = Vec::with_capacity(t * d);
    for j in 0..d {
        let col = data.column(j);
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("series {} has a non-finite value at row {}", j + 1, i + 1)));
        }
        series.extend(col);
    }
    let posteriors = marginal.posteriors(&Tensor::new(vec![d, 1, t], series)?)?;
    let kind = ma.kind;
    let mut plugins = Vec::with_capacity(d);
    let mut u = Matrix::zeros(t, d);
    for (j, post) in posteriors.iter().enumerate() {
        let plug = plugin(post, kind, mode).map_err(|e| Error::numerical(format!("series {}: {e}", j + 1)))?;
        let col = garch::marginal_cdf(&plug, &data.column(j)).map_err(|e| Error::numerical(format!("series {}: {e}", j + 1)))?;
        for (i, v) in col.into_iter().enumerate() {
            u[(i, j)] = v;
        }
        plugins.push(plug);
    }
    Ok(MarginalStage {
        kind,
        posteriors,
        plugins,
        copula_data: CopulaData::new(u)?,
    })
}

/// Plug-in GARCH parameters from a transformed-space posterior.
pub fn plugin(post: &GaussianPosterior, kind: InnovationKind, mode: PluginMode) -> Result<GarchParams> {
    match mode {
        PluginMode::TransformedMean => {
            let t = TransformedGarchParams::from_slice(post.mean(), kind)?;
            let p = t.to_constrained();
            p.validate()?;
            Ok(p)
        }
        PluginMode::ConstrainedMean { n_draws, seed } => {
            if n_draws == 0 {
                return Err(Error::Config("plug-in draws must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut acc = [0.0; 4];
            let mut x = vec![0.0; post.dim()];
            for _ in 0..n_draws {
                post.sample_one(&mut rng, &mut x);
                let p = TransformedGarchParams::from_slice(&x, kind)?.to_constrained();
                acc[0] += p.alpha1;
                acc[1] += p.alpha2;
                acc[2] += p.gamma;
                acc[3] += p.nu_tilde.unwrap_or(0.0);
            }
            let n = n_draws as f64;
            let nu = (kind == InnovationKind::StudentT).then_some(acc[3] / n);
            GarchParams::new(acc[0] / n, acc[1] / n, acc[2] / n, nu)
        }
    }
}

impl NifmResult {
    pub fn dim(&self) -> usize {
        self.marginal_posteriors.len()
    }

    /// Copula parameters at the posterior mean.
    pub fn copula_plugin(&self) -> Result<CopulaParams> {
        CopulaParams::from_target(self.dim(), self.n_factors, self.family, self.copula_posterior.mean())
    }

    /// Parameter names in transformed space: `y{d}.phi1`, ..., then the
    /// copula target names.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for d in 0..self.dim() {
            for n in garch_param_names(self.marginal_kind) {
                names.push(format!("y{}.{n}", d + 1));
            }
        }
        names.extend(CopulaParams::target_names(self.dim(), self.n_factors, self.family));
        names
    }

    /// Summary rows in transformed space.
    pub fn summary(&self, level: f64) -> Result<Vec<SummaryRow>> {
        let names = self.parameter_names();
        let mut rows = Vec::with_capacity(names.len());
        let posts = self.marginal_posteriors.iter().chain(std::iter::once(&self.copula_posterior));
        let mut k = 0;
        for p in posts {
            let sd = p.sd();
            for i in 0..p.dim() {
                let (lo, hi) = p.interval(i, level)?;
                rows.push(SummaryRow {
                    parameter: names[k].clone(),
                    mean: p.mean()[i],
                    sd: sd[i],
                    lower: lo,
                    upper: hi,
                });
                k += 1;
            }
        }
        Ok(rows)
    }

    /// Structured report of the run.
    pub fn report(&self, level: f64) -> Result<NifmReport> {
        Ok(NifmReport {
            marginal_kind: self.marginal_kind.as_str().into(),
            family: self.family.as_str().into(),
            n_factors: self.n_factors,
            n_obs: self.copula_data.n_obs(),
            dim: self.dim(),
            credible_level: level,
            seconds: self.seconds,
            parameters: self.summary(level)?,
            plugins: self.marginal_plugins.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NifmReport {
    pub marginal_kind: String,
    pub family: String,
    pub n_factors: usize,
    pub n_obs: usize,
    pub dim: usize,
    pub credible_level: f64,
    pub seconds: f64,
    pub parameters: Vec<SummaryRow>,
    pub plugins: Vec<GarchParams>,
}

/// Independent draws from every factor of the approximate posterior.
#[derive(Debug, Clone)]
pub struct JointDraws {
    /// `J × m` draws in transformed space, columns as in
    /// [`NifmResult::parameter_names`].
    pub transformed: Matrix,
    pub marginals: Vec<Vec<GarchParams>>,
    pub copula: Vec<CopulaParams>,
}

/// `J` draws of `(θ₁, ..., θ_D, θ_cop)`; marginal and copula parameters are
/// back-transformed.
pub fn joint_posterior_sample<R: Rng + ?Sized>(result: &NifmResult, n_draws: usize, rng: &mut R) -> Result<JointDraws> {
    let m_d = result.marginal_kind.n_params();
    let d = result.dim();
    let width = d * m_d + result.copula_posterior.dim();
    let mut transformed = Matrix::zeros(n_draws, width);
    let mut marginals = Vec::with_capacity(n_draws);
    let mut copula = Vec::with_capacity(n_draws);
    for j in 0..n_draws {
        let row = transformed.row_mut(j);
        let mut ms = Vec::with_capacity(d);
        for (k, post) in result.marginal_posteriors.iter().enumerate() {
            let slot = &mut row[k * m_d..(k + 1) * m_d];
            post.sample_one(rng, slot);
            ms.push(TransformedGarchParams::from_slice(slot, result.marginal_kind)?.to_constrained());
        }
        let slot = &mut row[d * m_d..];
        result.copula_posterior.sample_one(rng, slot);
        copula.push(CopulaParams::from_target(d, result.n_factors, result.family, slot)?);
        marginals.push(ms);
    }
    Ok(JointDraws {
        transformed,
        marginals,
        copula,
    })
}

impl JointDraws {
    /// Writes the transformed draws with a header row.
    pub fn write_csv(&self, names: &[String], path: &std::path::Path) -> Result<()> {
        crate::io::write_matrix_csv(path, names, &self.transformed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{CopulaArch, MarginalArch};
    use crate::priors::default_priors;
    use crate::simgen::simulate_joint_from_prior;

    fn nets(t: usize, d: usize, k: usize) -> (MarginalNet, CopulaNet) {
        (
            MarginalNet::new(MarginalArch::desk(InnovationKind::Gaussian, t), 1).unwrap(),
            CopulaNet::new(CopulaArch::desk(d, k, CopulaFamily::Gaussian, t), 2).unwrap(),
        )
    }

    fn data(t: usize, d: usize, seed: u64) -> Matrix {
        let spec = default_priors(InnovationKind::Gaussian, d, 1);
        simulate_joint_from_prior(&spec, CopulaFamily::Gaussian, t, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
            .data
    }

    #[test]
    fn shapes_and_invariants() {
        let (m, c) = nets(60, 3, 2);
        let r = infer(&m, &c, &data(60, 3, 1)).unwrap();
        assert_eq!(r.marginal_posteriors.len(), 3);
        assert_eq!(r.copula_posterior.dim(), 5);
        assert!(r.marginal_plugins.iter().all(|p| p.validate().is_ok()));
        assert!(r.copula_data.matrix().as_slice().iter().all(|&u| u > 0.0 && u < 1.0));
        assert_eq!(r.parameter_names().len(), 3 * 3 + 5);
        assert_eq!(r.summary(0.9).unwrap().len(), 14);
        let json = serde_json::to_string(&r.report(0.9).unwrap()).unwrap();
        assert!(json.contains("\"parameter\":\"y2.phi3\""));
    }

    #[test]
    fn deterministic() {
        let (m, c) = nets(60, 3, 1);
        let x = data(60, 3, 2);
        let a = infer(&m, &c, &x).unwrap();
        let b = infer(&m, &c, &x).unwrap();
        assert_eq!(a.marginal_posteriors, b.marginal_posteriors);
        assert_eq!(a.copula_posterior, b.copula_posterior);
        let da = joint_posterior_sample(&a, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let db = joint_posterior_sample(&b, 50, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(da.transformed, db.transformed);
    }

    #[test]
    fn rejects_bad_shapes() {
        let (m, c) = nets(60, 3, 1);
        assert!(matches!(infer(&m, &c, &data(59, 3, 3)), Err(Error::Shape(_))));
        let x = data(60, 3, 3);
        let one = Matrix::from_vec(60, 1, x.column(0)).unwrap();
        assert!(matches!(infer(&m, &c, &one), Err(Error::Shape(_))));
        let mut bad = x.clone();
        bad[(4, 1)] = f64::NAN;
        let msg = infer(&m, &c, &bad).unwrap_err().to_string();
        assert!(msg.contains("series 2"), "{msg}");
    }

    #[test]
    fn joint_draws_respect_constraints_and_means() {
        let (m, c) = nets(60, 3, 1);
        let r = infer(&m, &c, &data(60, 3, 4)).unwrap();
        let j = 4000;
        let draws = joint_posterior_sample(&r, j, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for ms in &draws.marginals {
            assert!(ms.iter().all(|p| p.alpha1 + p.alpha2 < 1.0));
        }
        let rows = r.summary(0.9).unwrap();
        for (col, row) in rows.iter().enumerate() {
            let mean = draws.transformed.column(col).iter().sum::<f64>() / j as f64;
            assert!((mean - row.mean).abs() < 3.0 * row.sd / (j as f64).sqrt() + 1e-12, "{}", row.parameter);
        }
        // Marginal and copula blocks are drawn independently.
        let a = draws.transformed.column(0);
        let b = draws.transformed.column(9);
        assert!(crate::stats::pearson(&a, &b).abs() < 4.0 / (j as f64).sqrt());
    }

    #[test]
    fn plugin_modes() {
        let post = GaussianPosterior::from_cholesky_parts(vec![2.0, -3.0, -1.0], &[0.1, 0.1, 0.1], &[0.0; 3]).unwrap();
        let a = plugin(&post, InnovationKind::Gaussian, PluginMode::TransformedMean).unwrap();
        let want = TransformedGarchParams::from_slice(&[2.0, -3.0, -1.0], InnovationKind::Gaussian).unwrap().to_constrained();
        assert_eq!(a, want);
        let b = plugin(
            &post,
            InnovationKind::Gaussian,
            PluginMode::ConstrainedMean { n_draws: 20_000, seed: 1 },
        )
        .unwrap();
        assert!((b.alpha1 - a.alpha1).abs() < 0.01 && (b.gamma - a.gamma).abs() / a.gamma < 0.02);
    }
}
