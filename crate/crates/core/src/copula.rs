//! Gaussian and t factor copulas: loading transforms, correlation
//! construction, copula log-densities and simulation of pseudo-observations.

use crate::error::{Error, Result};
use crate::garch::CDF_CLAMP;
use crate::linalg::{Cholesky, Matrix};
use crate::special::{norm_cdf, norm_quantile, StudentT};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

pub use crate::special::{t_cdf, t_quantile};

/// Free entries of the lower-trapezoidal `dim × k` loading matrix.
pub fn n_free_loadings(dim: usize, k: usize) -> usize {
    dim * k - k * k.saturating_sub(1) / 2
}

/// Unconstrained factor loadings `G̃`.
///
/// `values` holds the free entries row by row: row `i` contributes columns
/// `0..=min(i, k-1)`. Diagonal entries are on the log scale, so
/// `G_ii = exp(G̃_ii)`; off-diagonal entries are used as is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorLoadings {
    dim: usize,
    n_factors: usize,
    values: Vec<f64>,
}

impl FactorLoadings {
    /// `n_factors` may equal `dim`; zero factors gives the independence copula.
    pub fn new(dim: usize, n_factors: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || n_factors > dim {
            return Err(Error::domain(format!(
                "need 0 <= k <= D with D >= 1, got D={dim}, k={n_factors}"
            )));
        }
        let want = n_free_loadings(dim, n_factors);
        if values.len() != want {
            return Err(Error::shape(format!(
                "D={dim}, k={n_factors} needs {want} loadings, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("loading {i} is not finite")));
        }
        Ok(Self {
            dim,
            n_factors,
            values,
        })
    }

    pub fn zeros(dim: usize, n_factors: usize) -> Result<Self> {
        Self::new(dim, n_factors, vec![0.0; n_free_loadings(dim, n_factors)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_factors(&self) -> usize {
        self.n_factors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(row, col)` of each entry of `values`, in storage order.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.values.len());
        for i in 0..self.dim {
            for j in 0..=i.min(self.n_factors.saturating_sub(1)) {
                if j < self.n_factors {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Constrained loading matrix `G` (`dim × k`).
    pub fn g_matrix(&self) -> Matrix {
        let mut g = Matrix::zeros(self.dim, self.n_factors);
        for (&(i, j), &v) in self.positions().iter().zip(&self.values) {
            g[(i, j)] = if i == j { v.exp() } else { v };
        }
        g
    }

    /// Inverse of [`g_matrix`](Self::g_matrix). Entries above the diagonal
    /// must be zero and diagonal entries positive.
    pub fn from_g_matrix(g: &Matrix) -> Result<Self> {
        let (dim, k) = (g.rows(), g.cols());
        let mut tmp = Self::zeros(dim, k)?;
        for i in 0..dim.min(k) {
            for j in i + 1..k {
                if g[(i, j)] != 0.0 {
                    return Err(Error::domain(format!("G[{},{}] lies above the diagonal and must be 0", i + 1, j + 1)));
                }
            }
        }
        let pos = tmp.positions();
        for (slot, &(i, j)) in tmp.values.iter_mut().zip(&pos) {
            let v = g[(i, j)];
            *slot = if i == j {
                if !(v > 0.0) {
                    return Err(Error::domain(format!("G[{},{}] must be positive", i + 1, j + 1)));
                }
                v.ln()
            } else {
                v
            };
        }
        Self::new(dim, k, tmp.values)
    }

    /// Values reordered factor by factor: column `j` contributes rows
    /// `j..dim`, giving blocks of length `dim, dim-1, ...`.
    pub fn to_factor_major(&self) -> Vec<f64> {
        let pos = self.positions();
        let mut out = Vec::with_capacity(self.values.len());
        for j in 0..self.n_factors {
            for (p, &v) in pos.iter().zip(&self.values) {
                if p.1 == j {
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn from_factor_major(dim: usize, n_factors: usize, v: &[f64]) -> Result<Self> {
        let mut tmp = Self::zeros(dim, n_factors)?;
        if v.len() != tmp.values.len() {
            return Err(Error::shape(format!(
                "D={dim}, k={n_factors} needs {} loadings, got {}",
                tmp.values.len(),
                v.len()
            )));
        }
        let pos = tmp.positions();
        let mut offsets = vec![0usize; n_factors];
        for j in 1..n_factors {
            offsets[j] = offsets[j - 1] + (dim - (j - 1));
        }
        for (slot, &(i, j)) in tmp.values.iter_mut().zip(&pos) {
            *slot = v[offsets[j] + (i - j)];
        }
        Self::new(dim, n_factors, tmp.values)
    }

    /// Human-readable names `gtilde_i_j` (1-based), in storage order.
    pub fn names(&self) -> Vec<String> {
        self.positions()
            .iter()
            .map(|(i, j)| format!("gtilde_{}_{}", i + 1, j + 1))
            .collect()
    }
}

/// Symmetric positive-definite matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix(Matrix);

impl CorrelationMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() || m.rows() == 0 {
            return Err(Error::shape(format!("correlation matrix must be square, got {}x{}", m.rows(), m.cols())));
        }
        for i in 0..m.rows() {
            if (m[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::domain(format!("diagonal entry {i} is {}", m[(i, i)])));
            }
        }
        if !m.is_symmetric(1e-12) {
            return Err(Error::domain("correlation matrix is not symmetric"));
        }
        Cholesky::new(&m)?;
        Ok(Self(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(Matrix::identity(dim))
    }

    /// Two-dimensional matrix with off-diagonal `rho`.
    pub fn bivariate(rho: f64) -> Result<Self> {
        Self::new(Matrix::from_rows(&[vec![1.0, rho], vec![rho, 1.0]])?)
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::new(&self.0)
    }
}

/// `Ω̄ = R₁ (G Gᵀ + I) R₁` with `R₁ = diag(G Gᵀ + I)^{-1/2}`.
pub fn loadings_to_correlation(g: &FactorLoadings) -> CorrelationMatrix {
    let gm = g.g_matrix();
    let d = g.dim();
    let k = g.n_factors();
    let mut r = Matrix::identity(d);
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..k).map(|c| gm[(i, c)] * gm[(j, c)]).sum();
            r[(i, j)] += s;
            if i != j {
                r[(j, i)] = r[(i, j)];
            }
        }
    }
    let scale: Vec<f64> = (0..d).map(|i| 1.0 / r[(i, i)].sqrt()).collect();
    for i in 0..d {
        for j in 0..d {
            r[(i, j)] = if i == j { 1.0 } else { r[(i, j)] * scale[i] * scale[j] };
        }
    }
    // GGᵀ + I is SPD, so the rescaled matrix is a valid correlation matrix.
    CorrelationMatrix(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Gaussian,
    #[serde(rename = "t")]
    StudentT,
}

impl CopulaFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            CopulaFamily::Gaussian => "gaussian",
            CopulaFamily::StudentT => "t",
        }
    }
}

impl std::str::FromStr for CopulaFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Self::Gaussian),
            "t" | "student-t" | "studentt" => Ok(Self::StudentT),
            other => Err(Error::Config(format!("unknown copula family '{other}'"))),
        }
    }
}

/// Copula parameters `θ_cop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaParams {
    pub loadings: FactorLoadings,
    pub family: CopulaFamily,
    /// Degrees of freedom, present iff `family` is t.
    pub nu: Option<f64>,
}

impl CopulaParams {
    pub fn gaussian(loadings: FactorLoadings) -> Self {
        Self {
            loadings,
            family: CopulaFamily::Gaussian,
            nu: None,
        }
    }

    pub fn student_t(loadings: FactorLoadings, nu: f64) -> Result<Self> {
        if !(nu > 2.0 && nu.is_finite()) {
            return Err(Error::domain(format!("copula nu must exceed 2, got {nu}")));
        }
        Ok(Self {
            loadings,
            family: CopulaFamily::StudentT,
            nu: Some(nu),
        })
    }

    /// Unconstrained degrees of freedom `ln(ν - 2)`.
    pub fn df(&self) -> Option<f64> {
        self.nu.map(|nu| (nu - 2.0).ln())
    }

    pub fn correlation(&self) -> CorrelationMatrix {
        loadings_to_correlation(&self.loadings)
    }

    /// Width of the network target for this configuration.
    pub fn target_width(dim: usize, k: usize, family: CopulaFamily) -> usize {
        n_free_loadings(dim, k) + usize::from(family == CopulaFamily::StudentT)
    }

    /// Network target: factor-major loadings, then `df` for the t family.
    pub fn to_target(&self) -> Vec<f64> {
        let mut v = self.loadings.to_factor_major();
        if let Some(df) = self.df() {
            v.push(df);
        }
        v
    }

    pub fn from_target(dim: usize, k: usize, family: CopulaFamily, v: &[f64]) -> Result<Self> {
        let want = Self::target_width(dim, k, family);
        if v.len() != want {
            return Err(Error::shape(format!("copula target needs {want} values, got {}", v.len())));
        }
        let n = n_free_loadings(dim, k);
        let loadings = FactorLoadings::from_factor_major(dim, k, &v[..n])?;
        match family {
            CopulaFamily::Gaussian => Ok(Self::gaussian(loadings)),
            CopulaFamily::StudentT => {
                let df = v[n];
                if !df.is_finite() {
                    return Err(Error::domain("copula df is not finite"));
                }
                Self::student_t(loadings, df.exp() + 2.0)
            }
        }
    }

    /// Target coordinate names in network order.
    pub fn target_names(dim: usize, k: usize, family: CopulaFamily) -> Vec<String> {
        let mut names = Vec::new();
        for j in 0..k {
            for i in j..dim {
                names.push(format!("gtilde_{}_{}", i + 1, j + 1));
            }
        }
        if family == CopulaFamily::StudentT {
            names.push("df".into());
        }
        names
    }
}

/// Copula pseudo-observations: a `T × D` matrix with entries in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaData(Matrix);

impl CopulaData {
    pub fn new(u: Matrix) -> Result<Self> {
        if let Some(i) = u.as_slice().iter().position(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::domain(format!(
                "copula data entry ({}, {}) = {} is outside (0,1)",
                i / u.cols().max(1),
                i % u.cols().max(1),
                u.as_slice()[i]
            )));
        }
        Ok(Self(u))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn n_obs(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

/// Copula log-density with the correlation factorised once.
#[derive(Debug, Clone)]
pub struct CopulaDensity {
    chol: Cholesky,
    half_log_det: f64,
    t: Option<(StudentT, f64)>,
}

impl CopulaDensity {
    pub fn gaussian(omega: &CorrelationMatrix) -> Result<Self> {
        let chol = omega.cholesky()?;
        Ok(Self {
            half_log_det: 0.5 * chol.log_det(),
            chol,
            t: None,
        })
    }

    pub fn student_t(omega: &CorrelationMatrix, nu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::domain(format!("t copula needs nu > 0, got {nu}")));
        }
        let chol = omega.cholesky()?;
        let d = omega.dim() as f64;
        let norm = ln_gamma(0.5 * (nu + d)) - ln_gamma(0.5 * nu) - 0.5 * d * (nu * PI).ln();
        Ok(Self {
            half_log_det: 0.5 * chol.log_det(),
            chol,
            t: Some((StudentT::new(nu)?, norm)),
        })
    }

    pub fn for_params(p: &CopulaParams) -> Result<Self> {
        let omega = p.correlation();
        match (p.family, p.nu) {
            (CopulaFamily::Gaussian, _) => Self::gaussian(&omega),
            (CopulaFamily::StudentT, Some(nu)) => Self::student_t(&omega, nu),
            (CopulaFamily::StudentT, None) => Err(Error::domain("t copula without nu")),
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    /// Maps `u` to the latent scale (`Φ⁻¹` or `T_ν⁻¹`).
    pub fn latent(&self, u: &[f64], z: &mut [f64]) -> Result<()> {
        for (zi, &ui) in z.iter_mut().zip(u) {
            *zi = match &self.t {
                None => norm_quantile(ui)?,
                Some((t, _)) => t.quantile(ui)?,
            };
        }
        Ok(())
    }

    /// Log-density at latent values `z`; `scratch` is reused between calls.
    pub fn log_density_latent(&self, z: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let q = self.chol.quad_form_inv(z, scratch);
        match &self.t {
            None => {
                let zz: f64 = z.iter().map(|v| v * v).sum();
                -self.half_log_det - 0.5 * (q - zz)
            }
            Some((t, norm)) => {
                let nu = t.nu();
                let d = z.len() as f64;
                let joint = norm - self.half_log_det - 0.5 * (nu + d) * (q / nu).ln_1p();
                joint - z.iter().map(|&v| t.ln_pdf(v)).sum::<f64>()
            }
        }
    }

    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim() {
            return Err(Error::shape(format!("copula of dimension {} got a row of length {}", self.dim(), u.len())));
        }
        let mut z = vec![0.0; u.len()];
        self.latent(u, &mut z)?;
        let mut scratch = Vec::with_capacity(u.len());
        Ok(self.log_density_latent(&z, &mut scratch))
    }

    /// `Σ_t ln c(u_t)` over all rows.
    pub fn log_density_sum(&self, u: &CopulaData) -> Result<f64> {
        if u.dim() != self.dim() {
            return Err(Error::shape(format!("copula of dimension {} got data with {} columns", self.dim(), u.dim())));
        }
        let mut z = vec![0.0; u.dim()];
        let mut scratch = Vec::with_capacity(u.dim());
        let mut total = 0.0;
        for t in 0..u.n_obs() {
            self.latent(u.matrix().row(t), &mut z)?;
            total += self.log_density_latent(&z, &mut scratch);
        }
        Ok(total)
    }
}

pub fn gaussian_copula_logdensity(omega: &CorrelationMatrix, u_row: &[f64]) -> Result<f64> {
    CopulaDensity::gaussian(omega)?.log_density(u_row)
}

pub fn t_copula_logdensity(omega: &CorrelationMatrix, nu: f64, u_row: &[f64]) -> Result<f64> {
    CopulaDensity::student_t(omega, nu)?.log_density(u_row)
}

/// Draws latent rows `z` (before the marginal CDF) for `n_obs` time points.
pub fn simulate_latent<R: Rng + ?Sized>(params: &CopulaParams, n_obs: usize, rng: &mut R) -> Result<Matrix> {
    let chol = params.correlation().cholesky()?;
    let d = params.loadings.dim();
    let chi2 = match (params.family, params.nu) {
        (CopulaFamily::StudentT, Some(nu)) => Some((
            nu,
            Gamma::new(0.5 * nu, 2.0).map_err(|e| Error::domain(format!("chi-square({nu}): {e}")))?,
        )),
        (CopulaFamily::StudentT, None) => return Err(Error::domain("t copula without nu")),
        _ => None,
    };
    let mut out = Matrix::zeros(n_obs, d);
    let mut eps = vec![0.0; d];
    for t in 0..n_obs {
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let row = out.row_mut(t);
        chol.mul_lower(&eps, row);
        if let Some((nu, g)) = &chi2 {
            let s: f64 = g.sample(rng);
            let scale = 1.0 / (s / nu).sqrt();
            row.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(out)
}

/// Simulates `n_obs` rows of copula data.
pub fn simulate_copula_data<R: Rng + ?Sized>(params: &CopulaParams, n_obs: usize, rng: &mut R) -> Result<CopulaData> {
    let mut z = simulate_latent(params, n_obs, rng)?;
    let t = params.nu.map(StudentT::new).transpose()?;
    for v in z.as_mut_slice() {
        let u = match &t {
            None => norm_cdf(*v),
            Some(t) => t.cdf(*v),
        };
        *v = u.clamp(CDF_CLAMP, 1.0 - CDF_CLAMP);
    }
    CopulaData::new(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::gauss_legendre;
    use crate::stats::{ks_uniform, pearson};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn free_entry_counts() {
        assert_eq!(
            (1..=4).map(|k| n_free_loadings(20, k)).collect::<Vec<_>>(),
            vec![20, 39, 57, 74]
        );
        let g = FactorLoadings::zeros(5, 2).unwrap();
        assert_eq!(g.positions()[..3], [(0, 0), (1, 0), (1, 1)]);
        assert!(FactorLoadings::zeros(3, 4).is_err());
    }

    #[test]
    fn factor_major_roundtrip() {
        let g = FactorLoadings::new(4, 2, (0..7).map(|i| i as f64).collect()).unwrap();
        // rows: (0,0)=0; (1,0)=1,(1,1)=2; (2,0)=3,(2,1)=4; (3,0)=5,(3,1)=6
        assert_eq!(g.to_factor_major(), vec![0.0, 1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
        let back = FactorLoadings::from_factor_major(4, 2, &g.to_factor_major()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn correlation_hand_examples() {
        let omega = loadings_to_correlation(&FactorLoadings::new(2, 1, vec![0.0, 0.0]).unwrap());
        assert_eq!(omega.matrix(), &Matrix::identity(2));
        let omega = loadings_to_correlation(&FactorLoadings::new(2, 1, vec![0.0, 1.0]).unwrap());
        assert!((omega.matrix()[(0, 1)] - 0.5).abs() < 1e-15);
        let omega = loadings_to_correlation(&FactorLoadings::zeros(4, 0).unwrap());
        assert_eq!(omega.matrix(), &Matrix::identity(4));
    }

    #[test]
    fn gaussian_identity_is_zero() {
        let omega = CorrelationMatrix::identity(3);
        for u in [[0.5, 0.5, 0.5], [1e-9, 0.3, 0.999], [0.01, 0.99, 0.7]] {
            assert_eq!(gaussian_copula_logdensity(&omega, &u).unwrap(), 0.0);
        }
    }

    #[test]
    fn gaussian_at_origin() {
        let omega = CorrelationMatrix::bivariate(0.5).unwrap();
        let v = gaussian_copula_logdensity(&omega, &[0.5, 0.5]).unwrap();
        assert!((v + 0.5 * 0.75f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn t_univariate_is_uniform() {
        let omega = CorrelationMatrix::identity(1);
        for u in [0.01, 0.3, 0.5, 0.97] {
            assert!(t_copula_logdensity(&omega, 4.0, &[u]).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn t_origin_matches_direct_formula() {
        // Bivariate t density at 0 with identity scale: Γ(7/2)/(Γ(5/2) 5π);
        // univariate t₅ at 0: Γ(3)/(Γ(5/2) √(5π)).
        let nu: f64 = 5.0;
        let joint = ln_gamma(3.5) - ln_gamma(2.5) - (nu * PI).ln();
        let marg = ln_gamma(3.0) - ln_gamma(2.5) - 0.5 * (nu * PI).ln();
        let want = joint - 2.0 * marg;
        let got = t_copula_logdensity(&CorrelationMatrix::identity(2), nu, &[0.5, 0.5]).unwrap();
        assert!((got - want).abs() < 1e-13, "{got} vs {want}");
    }

    #[test]
    fn t_large_nu_matches_gaussian() {
        let omega = loadings_to_correlation(&FactorLoadings::new(3, 1, vec![0.2, -0.7, 1.1]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(0.02..0.98)).collect();
            let g = gaussian_copula_logdensity(&omega, &u).unwrap();
            let t = t_copula_logdensity(&omega, 1e6, &u).unwrap();
            assert!((g - t).abs() < 1e-3, "{g} vs {t}");
        }
    }

    #[test]
    fn quadrature_normalisation() {
        let (x, w) = gauss_legendre(200);
        let omega = CorrelationMatrix::bivariate(0.5).unwrap();
        let dens = [CopulaDensity::gaussian(&omega).unwrap(), CopulaDensity::student_t(&omega, 5.0).unwrap()];
        for d in &dens {
            let mut total = 0.0;
            for (xi, wi) in x.iter().zip(&w) {
                for (xj, wj) in x.iter().zip(&w) {
                    let u = [0.5 * (xi + 1.0), 0.5 * (xj + 1.0)];
                    total += 0.25 * wi * wj * d.log_density(&u).unwrap().exp();
                }
            }
            assert!((total - 1.0).abs() < 1e-4, "{total}");
        }
    }

    #[test]
    fn permutation_invariance() {
        let g = FactorLoadings::new(3, 2, vec![0.1, 0.8, -0.3, -0.5, 0.4]).unwrap();
        let omega = loadings_to_correlation(&g);
        let perm = [2, 0, 1];
        let mut pm = Matrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                pm[(i, j)] = omega.matrix()[(perm[i], perm[j])];
            }
        }
        let pomega = CorrelationMatrix::new(pm).unwrap();
        let u = [0.2, 0.7, 0.45];
        let pu: Vec<f64> = perm.iter().map(|&p| u[p]).collect();
        let a = gaussian_copula_logdensity(&omega, &u).unwrap();
        let b = gaussian_copula_logdensity(&pomega, &pu).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn simulated_correlation() {
        let params = CopulaParams::gaussian(FactorLoadings::new(2, 1, vec![0.0, 3.0]).unwrap());
        let rho = params.correlation().matrix()[(0, 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let u = simulate_copula_data(&params, n, &mut rng).unwrap();
        let z: Vec<Vec<f64>> = (0..2)
            .map(|c| u.matrix().column(c).iter().map(|&v| norm_quantile(v).unwrap()).collect())
            .collect();
        let corr = pearson(&z[0], &z[1]);
        assert!((corr - rho).abs() < 0.01, "{corr} vs {rho}");
        for c in 0..2 {
            let col = u.matrix().column(c);
            assert!(ks_uniform(&col) < 1.63 / (n as f64).sqrt());
        }
    }

    #[test]
    fn independence_spearman_near_zero() {
        let params = CopulaParams::gaussian(FactorLoadings::zeros(3, 0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 5000;
        let u = simulate_copula_data(&params, n, &mut rng).unwrap();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            // Columns are already uniform, so Pearson on u is Spearman.
            assert!(pearson(&u.matrix().column(a), &u.matrix().column(b)).abs() < 3.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn t_simulation_is_uniform() {
        let params = CopulaParams::student_t(FactorLoadings::new(3, 1, vec![0.3, 1.0, -1.0]).unwrap(), 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let u = simulate_copula_data(&params, n, &mut rng).unwrap();
        for c in 0..3 {
            assert!(ks_uniform(&u.matrix().column(c)) < 1.63 / (n as f64).sqrt());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn correlation_is_valid(
            dim in 2usize..7, k in 0usize..4, seed in any::<u64>()
        ) {
            let k = k.min(dim);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals = (0..n_free_loadings(dim, k)).map(|_| rng.random_range(-4.0..4.0)).collect();
            let omega = loadings_to_correlation(&FactorLoadings::new(dim, k, vals).unwrap());
            for i in 0..dim {
                prop_assert!((omega.matrix()[(i, i)] - 1.0).abs() <= 1e-12);
            }
            prop_assert!(omega.cholesky().is_ok());
            prop_assert!(CorrelationMatrix::new(omega.matrix().clone()).is_ok());
        }
    }

    #[test]
    fn g_matrix_round_trip() {
        let g = Matrix::from_rows(&[vec![2.0, 0.0], vec![2.0, 2.0], vec![2.0, -2.0]]).unwrap();
        let l = FactorLoadings::from_g_matrix(&g).unwrap();
        let back = l.g_matrix();
        assert!(back.as_slice().iter().zip(g.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12));
        let bad = Matrix::from_rows(&[vec![2.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert!(FactorLoadings::from_g_matrix(&bad).is_err());
        let neg = Matrix::from_rows(&[vec![-1.0], vec![2.0]]).unwrap();
        assert!(FactorLoadings::from_g_matrix(&neg).is_err());
    }
}
