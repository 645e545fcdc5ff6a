use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use rand::Rng;
use rand_distr::StandardNormal;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub enum PosteriorScale {
    /// Full covariance `L Lᵀ`.
    Cholesky(Cholesky),
    /// Per-coordinate standard deviations.
    Diagonal(Vec<f64>),
}

/// A Gaussian approximate posterior in transformed parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    mean: Vec<f64>,
    scale: PosteriorScale,
}

impl GaussianPosterior {
    /// From a Cholesky diagonal and the strict lower triangle row by row.
    pub fn from_cholesky_parts(mean: Vec<f64>, diag: &[f64], lower: &[f64]) -> Result<Self> {
        let m = mean.len();
        if diag.len() != m || lower.len() != m * m.saturating_sub(1) / 2 {
            return Err(Error::shape(format!(
                "posterior of dimension {m}: {} diagonal and {} lower entries",
                diag.len(),
                lower.len()
            )));
        }
        let mut l = vec![0.0; m * m];
        for i in 0..m {
            l[i * m + i] = diag[i];
            for j in 0..i {
                l[i * m + j] = lower[i * (i - 1) / 2 + j];
            }
        }
        Ok(Self {
            mean,
            scale: PosteriorScale::Cholesky(Cholesky::from_lower(m, l)?),
        })
    }

    /// Mean-field posterior from variances.
    pub fn diagonal(mean: Vec<f64>, var: &[f64]) -> Result<Self> {
        if var.len() != mean.len() {
            return Err(Error::shape(format!("{} means vs {} variances", mean.len(), var.len())));
        }
        if let Some(v) = var.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::numerical(format!("posterior variance {v} is not positive")));
        }
        Ok(Self {
            mean,
            scale: PosteriorScale::Diagonal(var.iter().map(|v| v.sqrt()).collect()),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The posterior mean (exact).
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &PosteriorScale {
        &self.scale
    }

    /// Marginal standard deviations.
    pub fn sd(&self) -> Vec<f64> {
        match &self.scale {
            PosteriorScale::Diagonal(s) => s.clone(),
            PosteriorScale::Cholesky(c) => (0..self.dim())
                .map(|i| (0..=i).map(|k| c.get(i, k).powi(2)).sum::<f64>().sqrt())
                .collect(),
        }
    }

    pub fn covariance(&self) -> Matrix {
        match &self.scale {
            PosteriorScale::Cholesky(c) => c.reconstruct(),
            PosteriorScale::Diagonal(s) => {
                let mut m = Matrix::zeros(s.len(), s.len());
                for (i, v) in s.iter().enumerate() {
                    m[(i, i)] = v * v;
                }
                m
            }
        }
    }

    /// One draw `μ + L η`.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let m = self.dim();
        let eta: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        match &self.scale {
            PosteriorScale::Cholesky(c) => c.mul_lower(&eta, out),
            PosteriorScale::Diagonal(s) => {
                for i in 0..m {
                    out[i] = s[i] * eta[i];
                }
            }
        }
        for (o, mu) in out.iter_mut().zip(&self.mean) {
            *o += mu;
        }
    }

    /// `J × m` draws.
    pub fn sample<R: Rng + ?Sized>(&self, n_draws: usize, rng: &mut R) -> Matrix {
        let mut out = Matrix::zeros(n_draws, self.dim());
        for j in 0..n_draws {
            self.sample_one(rng, out.row_mut(j));
        }
        out
    }

    /// Log density at `x`.
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let m = self.dim();
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        match &self.scale {
            PosteriorScale::Cholesky(c) => {
                let mut scratch = Vec::new();
                -(m as f64) * HALF_LN_2PI - 0.5 * c.log_det() - 0.5 * c.quad_form_inv(&r, &mut scratch)
            }
            PosteriorScale::Diagonal(s) => r
                .iter()
                .zip(s)
                .map(|(ri, si)| -HALF_LN_2PI - si.ln() - 0.5 * (ri / si).powi(2))
                .sum(),
        }
    }

    /// Negative log density, the per-sample training loss.
    pub fn nll(&self, target: &[f64]) -> f64 {
        -self.log_pdf(target)
    }

    /// Central credible interval of coordinate `i`.
    pub fn interval(&self, i: usize, level: f64) -> Result<(f64, f64)> {
        let z = crate::special::norm_quantile(0.5 + 0.5 * level)?;
        let s = self.sd()[i];
        Ok((self.mean[i] - z * s, self.mean[i] + z * s))
    }
}
