//! GARCH(1,1) marginal model: parameter transforms, variance recursion,
//! likelihood, simulation and probability-integral transforms.
//!
//! Student-t innovations use the unit-scale t distribution (not rescaled to
//! unit variance), so `y_t / σ_t` is distributed as a standard t with
//! `nu_tilde` degrees of freedom.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::special::{logit, norm_cdf, norm_ln_pdf, norm_quantile, sigmoid, StudentT};
use serde::{Deserialize, Serialize};

/// Lower/upper clamp applied to probability-integral transforms.
pub const CDF_CLAMP: f64 = 1e-12;

/// Innovation law of a GARCH marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnovationKind {
    Gaussian,
    #[serde(rename = "t")]
    StudentT,
}

impl InnovationKind {
    /// Width of the transformed parameter vector (3 or 4).
    pub fn n_params(self) -> usize {
        match self {
            InnovationKind::Gaussian => 3,
            InnovationKind::StudentT => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InnovationKind::Gaussian => "gaussian",
            InnovationKind::StudentT => "t",
        }
    }
}

impl std::str::FromStr for InnovationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Self::Gaussian),
            "t" | "student-t" | "studentt" => Ok(Self::StudentT),
            other => Err(Error::Config(format!("unknown innovation kind '{other}'"))),
        }
    }
}

/// Constrained GARCH(1,1) parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub gamma: f64,
    /// Degrees of freedom of t innovations; `None` for Gaussian innovations.
    pub nu_tilde: Option<f64>,
}

impl GarchParams {
    pub fn new(alpha1: f64, alpha2: f64, gamma: f64, nu_tilde: Option<f64>) -> Result<Self> {
        let p = Self {
            alpha1,
            alpha2,
            gamma,
            nu_tilde,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn gaussian(alpha1: f64, alpha2: f64, gamma: f64) -> Result<Self> {
        Self::new(alpha1, alpha2, gamma, None)
    }

    pub fn student_t(alpha1: f64, alpha2: f64, gamma: f64, nu_tilde: f64) -> Result<Self> {
        Self::new(alpha1, alpha2, gamma, Some(nu_tilde))
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha1 >= 0.0
            && self.alpha2 >= 0.0
            && self.alpha1 + self.alpha2 < 1.0
            && self.gamma > 0.0
            && self.gamma.is_finite();
        if !ok {
            return Err(Error::domain(format!(
                "GARCH parameters violate alpha1, alpha2 >= 0, alpha1 + alpha2 < 1, gamma > 0: {self:?}"
            )));
        }
        if let Some(nu) = self.nu_tilde {
            if !(nu > 2.0 && nu.is_finite()) {
                return Err(Error::domain(format!("nu_tilde must exceed 2, got {nu}")));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> InnovationKind {
        if self.nu_tilde.is_some() {
            InnovationKind::StudentT
        } else {
            InnovationKind::Gaussian
        }
    }

    /// Unconditional variance `γ / (1 - α₁ - α₂)`, used as `σ²₁`.
    pub fn unconditional_variance(&self) -> f64 {
        self.gamma / (1.0 - self.alpha1 - self.alpha2)
    }

    /// Maps to the unconstrained parameterisation.
    ///
    /// Fails when α₁ or α₂ is zero: the persistence split `α₁/(α₁+α₂)` then
    /// sits on the boundary of (0,1) and its logit is infinite.
    pub fn to_unconstrained(&self) -> Result<TransformedGarchParams> {
        self.validate()?;
        let psi1 = self.alpha1 + self.alpha2;
        if psi1 == 0.0 {
            return Err(Error::domain("alpha1 + alpha2 = 0 leaves phi3 undefined"));
        }
        let one_minus_psi1 = 1.0 - self.alpha1 - self.alpha2;
        let phi1 = psi1.ln() - one_minus_psi1.ln();
        let phi2 = self.gamma.ln() - one_minus_psi1.ln();
        let phi3 = self.alpha1.ln() - self.alpha2.ln();
        let df_tilde = self.nu_tilde.map(|nu| (nu - 2.0).ln());
        let t = TransformedGarchParams {
            phi1,
            phi2,
            phi3,
            df_tilde,
        };
        if !t.is_finite() {
            return Err(Error::domain(format!(
                "transform of {self:?} is not finite (alpha1 and alpha2 must both be positive)"
            )));
        }
        Ok(t)
    }

    pub fn from_unconstrained(t: &TransformedGarchParams) -> GarchParams {
        t.to_constrained()
    }
}

/// Unconstrained GARCH parameters `(φ₁, φ₂, φ₃[, d̃f])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformedGarchParams {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
    pub df_tilde: Option<f64>,
}

impl TransformedGarchParams {
    pub fn is_finite(&self) -> bool {
        self.phi1.is_finite()
            && self.phi2.is_finite()
            && self.phi3.is_finite()
            && self.df_tilde.map_or(true, f64::is_finite)
    }

    pub fn kind(&self) -> InnovationKind {
        if self.df_tilde.is_some() {
            InnovationKind::StudentT
        } else {
            InnovationKind::Gaussian
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.phi1, self.phi2, self.phi3];
        if let Some(df) = self.df_tilde {
            v.push(df);
        }
        v
    }

    pub fn from_slice(v: &[f64], kind: InnovationKind) -> Result<Self> {
        if v.len() != kind.n_params() {
            return Err(Error::shape(format!(
                "{} GARCH parameters need {} values, got {}",
                kind.as_str(),
                kind.n_params(),
                v.len()
            )));
        }
        let t = Self {
            phi1: v[0],
            phi2: v[1],
            phi3: v[2],
            df_tilde: (kind == InnovationKind::StudentT).then(|| v[3]),
        };
        if !t.is_finite() {
            return Err(Error::domain(format!("non-finite transformed parameters {v:?}")));
        }
        Ok(t)
    }

    /// Inverse transform; any finite input lands in the stationary region.
    pub fn to_constrained(&self) -> GarchParams {
        let psi1 = sigmoid(self.phi1);
        let one_minus_psi1 = sigmoid(-self.phi1);
        let psi2 = self.phi2.exp();
        let psi3 = sigmoid(self.phi3);
        let one_minus_psi3 = sigmoid(-self.phi3);
        GarchParams {
            alpha1: psi1 * psi3,
            alpha2: psi1 * one_minus_psi3,
            gamma: psi2 * one_minus_psi1,
            nu_tilde: self.df_tilde.map(|df| df.exp() + 2.0),
        }
    }

    /// `ln |∂(α₁, α₂, γ[, ν̃]) / ∂(φ₁, φ₂, φ₃[, d̃f])|`.
    pub fn log_jacobian(&self) -> f64 {
        // d(alpha1, alpha2, gamma)/d(psi) has |det| = psi1 (1 - psi1); each
        // logistic/exp link contributes its own derivative.
        let lp1 = log_logistic_derivative(self.phi1);
        let lp3 = log_logistic_derivative(self.phi3);
        2.0 * lp1 + self.phi2 + lp3 + self.df_tilde.unwrap_or(0.0)
    }
}

/// `ln(σ(x)(1 - σ(x)))`, stable for large |x|.
fn log_logistic_derivative(x: f64) -> f64 {
    -x.abs() - 2.0 * (-x.abs()).exp().ln_1p()
}

/// Inverse logit of the persistence, exposed for tests and priors.
pub fn persistence_logit(alpha1: f64, alpha2: f64) -> f64 {
    logit(alpha1 + alpha2)
}

/// One marginal series `y_(d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesData(Vec<f64>);

impl SeriesData {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::shape(format!("series needs at least 2 observations, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("series value {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for SeriesData {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-law innovation density/CDF helper.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Innovation {
    Gaussian,
    StudentT(StudentT),
}

impl Innovation {
    pub(crate) fn for_params(p: &GarchParams) -> Result<Self> {
        Ok(match p.nu_tilde {
            None => Innovation::Gaussian,
            Some(nu) => Innovation::StudentT(StudentT::new(nu)?),
        })
    }

    #[inline]
    pub(crate) fn ln_pdf(&self, e: f64) -> f64 {
        match self {
            Innovation::Gaussian => norm_ln_pdf(e),
            Innovation::StudentT(t) => t.ln_pdf(e),
        }
    }

    #[inline]
    pub(crate) fn cdf(&self, e: f64) -> f64 {
        match self {
            Innovation::Gaussian => norm_cdf(e),
            Innovation::StudentT(t) => t.cdf(e),
        }
    }

    pub(crate) fn quantile(&self, u: f64) -> Result<f64> {
        match self {
            Innovation::Gaussian => norm_quantile(u),
            Innovation::StudentT(t) => t.quantile(u),
        }
    }
}

/// Next conditional variance `γ + α₁ y² + α₂ σ²`.
#[inline]
pub fn next_variance(p: &GarchParams, y_prev: f64, var_prev: f64) -> f64 {
    p.gamma + p.alpha1 * y_prev * y_prev + p.alpha2 * var_prev
}

/// Conditional variances `σ²_1..σ²_T`.
pub fn conditional_variances(p: &GarchParams, y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    let mut var = p.unconditional_variance();
    for (t, &yt) in y.iter().enumerate() {
        if t > 0 {
            var = next_variance(p, y[t - 1], var);
        }
        out.push(var);
        let _ = yt;
    }
    out
}

/// Variance for the step after the end of `y`, i.e. `σ²_{T+1}`.
pub fn forecast_variance(p: &GarchParams, y: &[f64]) -> f64 {
    let mut var = p.unconditional_variance();
    for t in 1..=y.len() {
        var = next_variance(p, y[t - 1], var);
    }
    var
}

/// Log-likelihood `Σ_t ln p(y_t | σ_t)`. Returns `-∞` for invalid parameters
/// or non-finite intermediate values.
pub fn log_likelihood(p: &GarchParams, y: &[f64]) -> f64 {
    if p.validate().is_err() {
        return f64::NEG_INFINITY;
    }
    let innov = match Innovation::for_params(p) {
        Ok(i) => i,
        Err(_) => return f64::NEG_INFINITY,
    };
    let mut var = p.unconditional_variance();
    let mut ll = 0.0;
    for t in 0..y.len() {
        if t > 0 {
            var = next_variance(p, y[t - 1], var);
        }
        let sd = var.sqrt();
        ll += innov.ln_pdf(y[t] / sd) - sd.ln();
    }
    if ll.is_finite() {
        ll
    } else {
        f64::NEG_INFINITY
    }
}

/// Applies the variance recursion to caller-supplied standardised innovations.
pub fn simulate(p: &GarchParams, innovations: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(innovations.len());
    let mut var = p.unconditional_variance();
    for (t, &e) in innovations.iter().enumerate() {
        if t > 0 {
            var = next_variance(p, y[t - 1], var);
        }
        y.push(var.sqrt() * e);
    }
    y
}

/// Probability-integral transform `u_t = F(y_t / σ_t)`, clamped to
/// `[CDF_CLAMP, 1 - CDF_CLAMP]`.
pub fn marginal_cdf(p: &GarchParams, y: &[f64]) -> Result<Vec<f64>> {
    p.validate()?;
    let innov = Innovation::for_params(p)?;
    let vars = conditional_variances(p, y);
    Ok(y.iter()
        .zip(&vars)
        .map(|(&yt, &v)| innov.cdf(yt / v.sqrt()).clamp(CDF_CLAMP, 1.0 - CDF_CLAMP))
        .collect())
}

/// Log density of `y` given conditional variance `var`.
pub fn point_log_density(p: &GarchParams, var: f64, y: f64) -> Result<f64> {
    let innov = Innovation::for_params(p)?;
    let sd = var.sqrt();
    Ok(innov.ln_pdf(y / sd) - sd.ln())
}

/// Clamped CDF of `y` given conditional variance `var`.
pub fn point_cdf(p: &GarchParams, var: f64, y: f64) -> Result<f64> {
    let innov = Innovation::for_params(p)?;
    Ok(innov.cdf(y / var.sqrt()).clamp(CDF_CLAMP, 1.0 - CDF_CLAMP))
}

/// Quantile of `u` given conditional variance `var`.
pub fn point_quantile(p: &GarchParams, var: f64, u: f64) -> Result<f64> {
    Ok(Innovation::for_params(p)?.quantile(u)? * var.sqrt())
}

/// Inverse of [`marginal_cdf`] at given conditional variances.
pub fn marginal_quantile(p: &GarchParams, u: &[f64], variances: &[f64]) -> Result<Vec<f64>> {
    if u.len() != variances.len() {
        return Err(Error::shape(format!("{} probabilities vs {} variances", u.len(), variances.len())));
    }
    let innov = Innovation::for_params(p)?;
    u.iter()
        .zip(variances)
        .map(|(&ut, &v)| Ok(innov.quantile(ut)? * v.sqrt()))
        .collect()
}

/// Gaussian-innovation log-likelihood as a differentiable function of the
/// transformed parameters `(φ₁, φ₂, φ₃)` held in three scalar graph nodes.
pub fn log_likelihood_graph(g: &mut Graph, phi: [Var; 3], y: &[f64]) -> Result<Var> {
    let [phi1, phi2, phi3] = phi;
    let psi1 = g.sigmoid(phi1)?;
    let neg_phi1 = g.scale(phi1, -1.0)?;
    let one_minus_psi1 = g.sigmoid(neg_phi1)?;
    let psi3 = g.sigmoid(phi3)?;
    let neg_phi3 = g.scale(phi3, -1.0)?;
    let one_minus_psi3 = g.sigmoid(neg_phi3)?;
    let psi2 = g.exp(phi2)?;
    let alpha1 = g.mul(psi1, psi3)?;
    let alpha2 = g.mul(psi1, one_minus_psi3)?;
    let gamma = g.mul(psi2, one_minus_psi1)?;
    // σ²₁ = γ / (1 - ψ₁) = ψ₂
    let mut var = psi2;
    let mut total: Option<Var> = None;
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    for t in 0..y.len() {
        if t > 0 {
            let shock = g.scale(alpha1, y[t - 1] * y[t - 1])?;
            let carry = g.mul(alpha2, var)?;
            let s = g.add(gamma, shock)?;
            var = g.add(s, carry)?;
        }
        let log_var = g.log(var)?;
        let neg_log_var = g.scale(log_var, -1.0)?;
        let prec = g.exp(neg_log_var)?;
        let quad = g.scale(prec, -0.5 * y[t] * y[t])?;
        let half_log = g.scale(log_var, -0.5)?;
        let term = g.add(quad, half_log)?;
        let term = g.add_scalar(term, -half_ln_2pi)?;
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    total.ok_or_else(|| Error::shape("empty series"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn transform_reference_point() {
        let p = GarchParams::gaussian(0.1, 0.8, 0.1).unwrap();
        let t = p.to_unconstrained().unwrap();
        assert!((t.phi1 - 9f64.ln()).abs() < 1e-12);
        assert!(t.phi2.abs() < 1e-12);
        assert!((t.phi3 - (1.0f64 / 8.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn transform_even_split_is_zero() {
        let t = GarchParams::gaussian(0.25, 0.25, 0.3).unwrap().to_unconstrained().unwrap();
        assert!(t.phi1.abs() < 1e-15);
        assert!(t.phi3.abs() < 1e-15);
        let t = GarchParams::student_t(0.25, 0.25, 0.3, 3.0).unwrap().to_unconstrained().unwrap();
        assert_eq!(t.df_tilde, Some(0.0));
    }

    #[test]
    fn inverse_at_origin() {
        let p = TransformedGarchParams {
            phi1: 0.0,
            phi2: 0.0,
            phi3: 0.0,
            df_tilde: Some(8f64.ln()),
        }
        .to_constrained();
        assert!((p.alpha1 - 0.25).abs() < 1e-15);
        assert!((p.alpha2 - 0.25).abs() < 1e-15);
        assert!((p.gamma - 0.5).abs() < 1e-15);
        assert!((p.nu_tilde.unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_persistence_rejected() {
        let p = GarchParams::gaussian(0.0, 0.0, 1.0).unwrap();
        assert!(matches!(p.to_unconstrained(), Err(Error::Domain(_))));
        let p = GarchParams::gaussian(0.0, 0.5, 1.0).unwrap();
        assert!(matches!(p.to_unconstrained(), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(GarchParams::gaussian(0.5, 0.5, 1.0).is_err());
        assert!(GarchParams::gaussian(0.1, 0.1, 0.0).is_err());
        assert!(GarchParams::student_t(0.1, 0.1, 1.0, 2.0).is_err());
    }

    #[test]
    fn variance_recursion_by_hand() {
        let p = GarchParams::gaussian(0.1, 0.8, 0.1).unwrap();
        let v = conditional_variances(&p, &[2.0, 0.0, 0.0]);
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert!((v[1] - 1.3).abs() < 1e-15);
        let flat = GarchParams::gaussian(0.0, 0.0, 0.7).unwrap();
        assert!(conditional_variances(&flat, &[1.0, -3.0, 2.0]).iter().all(|&s| s == 0.7));
    }

    #[test]
    fn likelihood_closed_form() {
        let p = GarchParams::gaussian(0.0, 0.0, 1.0).unwrap();
        let ll = log_likelihood(&p, &[0.0, 0.0]);
        assert!((ll + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        let single = log_likelihood(&p, &[0.0]);
        assert!((single - norm_ln_pdf(0.0)).abs() < 1e-15);
    }

    #[test]
    fn likelihood_invalid_is_neg_inf() {
        let p = GarchParams {
            alpha1: 0.6,
            alpha2: 0.6,
            gamma: 1.0,
            nu_tilde: None,
        };
        assert_eq!(log_likelihood(&p, &[0.1, 0.2]), f64::NEG_INFINITY);
    }

    #[test]
    fn simulate_two_steps_by_hand() {
        let p = GarchParams::gaussian(0.1, 0.8, 0.1).unwrap();
        let y = simulate(&p, &[1.0, 1.0]);
        assert!((y[0] - 1.0).abs() < 1e-15);
        assert!((y[1] - 1.0).abs() < 1e-15);
        let zero = simulate(&p, &[0.0; 5]);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cdf_at_zero_is_half() {
        for p in [
            GarchParams::gaussian(0.1, 0.8, 0.1).unwrap(),
            GarchParams::student_t(0.1, 0.8, 0.1, 5.0).unwrap(),
        ] {
            assert!(marginal_cdf(&p, &[0.0; 4]).unwrap().iter().all(|&u| u == 0.5));
        }
    }

    #[test]
    fn cdf_normal_quantile() {
        let p = GarchParams::gaussian(0.0, 0.0, 1.0).unwrap();
        let u = marginal_cdf(&p, &[1.6448536, 1.6448536]).unwrap();
        assert!((u[1] - 0.95).abs() < 1e-7);
    }

    #[test]
    fn cdf_quantile_roundtrip() {
        for p in [
            GarchParams::gaussian(0.08, 0.85, 0.05).unwrap(),
            GarchParams::student_t(0.08, 0.85, 0.05, 6.0).unwrap(),
        ] {
            let y = [0.3, -1.2, 2.5, 0.01, -0.7];
            let u = marginal_cdf(&p, &y).unwrap();
            let back = marginal_quantile(&p, &u, &conditional_variances(&p, &y)).unwrap();
            for (a, b) in back.iter().zip(&y) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn log_jacobian_matches_finite_differences() {
        let t = TransformedGarchParams {
            phi1: 1.3,
            phi2: -0.4,
            phi3: -1.1,
            df_tilde: Some(1.7),
        };
        let x0 = t.to_vec();
        let h = 1e-6;
        let mut jac = [[0.0; 4]; 4];
        for j in 0..4 {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[j] += h;
            xm[j] -= h;
            let cp = TransformedGarchParams::from_slice(&xp, InnovationKind::StudentT).unwrap().to_constrained();
            let cm = TransformedGarchParams::from_slice(&xm, InnovationKind::StudentT).unwrap().to_constrained();
            let fp = [cp.alpha1, cp.alpha2, cp.gamma, cp.nu_tilde.unwrap()];
            let fm = [cm.alpha1, cm.alpha2, cm.gamma, cm.nu_tilde.unwrap()];
            for i in 0..4 {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let det = det4(&jac);
        assert!(rel(det.abs().ln(), t.log_jacobian()).abs() < 1e-6);
    }

    fn det4(m: &[[f64; 4]; 4]) -> f64 {
        let mut a = *m;
        let mut det = 1.0;
        for c in 0..4 {
            let p = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            if p != c {
                a.swap(p, c);
                det = -det;
            }
            det *= a[c][c];
            for r in c + 1..4 {
                let f = a[r][c] / a[c][c];
                for k in c..4 {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        det
    }

    #[test]
    fn graph_likelihood_matches_direct() {
        let t = TransformedGarchParams {
            phi1: 2.0,
            phi2: -0.5,
            phi3: -1.5,
            df_tilde: None,
        };
        let y: Vec<f64> = (0..30).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect();
        let mut g = Graph::new();
        let v = [t.phi1, t.phi2, t.phi3].map(|x| g.leaf(Tensor::scalar(x), true));
        let ll = log_likelihood_graph(&mut g, v, &y).unwrap();
        let direct = log_likelihood(&t.to_constrained(), &y);
        assert!(rel(g.value(ll).item(), direct) < 1e-12);
    }

    proptest! {
        #[test]
        fn stationarity_for_any_finite_input(
            phi1 in -30.0f64..30.0, phi2 in -20.0f64..20.0, phi3 in -30.0f64..30.0
        ) {
            let p = TransformedGarchParams { phi1, phi2, phi3, df_tilde: None }.to_constrained();
            prop_assert!(p.alpha1 + p.alpha2 < 1.0);
            prop_assert!(p.gamma > 0.0);
            prop_assert!(p.alpha1 >= 0.0 && p.alpha2 >= 0.0);
        }

        #[test]
        fn variances_positive(
            a1 in 0.0f64..0.5, a2 in 0.0f64..0.49, gamma in 1e-4f64..5.0,
            y in proptest::collection::vec(-50.0f64..50.0, 1..60)
        ) {
            let p = GarchParams::gaussian(a1, a2, gamma).unwrap();
            prop_assert!(conditional_variances(&p, &y).iter().all(|&v| v > 0.0));
        }

        #[test]
        fn cdf_monotone_inside_unit_interval(
            a in -40.0f64..40.0, b in -40.0f64..40.0, nu in 2.1f64..50.0
        ) {
            let p = GarchParams::student_t(0.0, 0.0, 1.3, nu).unwrap();
            let ua = marginal_cdf(&p, &[a]).unwrap()[0];
            let ub = marginal_cdf(&p, &[b]).unwrap()[0];
            prop_assert!(ua > 0.0 && ua < 1.0);
            if a < b { prop_assert!(ua <= ub); }
        }
    }
}
