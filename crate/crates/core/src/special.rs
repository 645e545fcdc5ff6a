//! Univariate normal and Student-t primitives: densities, CDFs and quantiles.

use crate::error::{Error, Result};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal log-density.
#[inline]
pub fn norm_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile (Wichura's AS241 rational approximation followed
/// by one Newton step against `norm_cdf`).
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("normal quantile needs p in (0,1), got {p}")));
    }
    let x = as241(p);
    // One Newton step; in the upper tail work with the complement to keep precision.
    let x = if x <= 0.0 {
        x - (norm_cdf(x) - p) / norm_ln_pdf(x).exp()
    } else {
        x + (norm_cdf(-x) - (1.0 - p)) / norm_ln_pdf(x).exp()
    };
    Ok(x)
}

#[allow(clippy::excessive_precision)]
fn as241(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((r * 2509.0809287301226727 + 33430.575583588128105) * r
            + 67265.770927008700853)
            * r
            + 45921.953931549871457)
            * r
            + 13731.693765509461125)
            * r
            + 1971.5909503065514427)
            * r
            + 133.14166789178437745)
            * r
            + 3.387132872796366608;
        let den = ((((((r * 5226.495278852545925 + 28729.085735721942674) * r
            + 39307.89580009271061)
            * r
            + 21213.794301586595867)
            * r
            + 5394.1960214247511077)
            * r
            + 687.1870074920579083)
            * r
            + 42.313330701600911252)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r
            + 0.24178072517745061177)
            * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734;
        let den = ((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r
            + 0.0151986665636164571966)
            * r
            + 0.14810397642748007459)
            * r
            + 0.68976733498510000455)
            * r
            + 1.6763848301838038494)
            * r
            + 2.05319162663775882187)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r
            + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772;
        let den = ((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r
            + 1.8463183175100546818e-5)
            * r
            + 7.868691311456132591e-4)
            * r
            + 0.0148753612908506148525)
            * r
            + 0.13692988092273580531)
            * r
            + 0.59983220655588793769)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularised incomplete beta function `I_x(a, b)`.
///
/// Lentz's continued fraction with a generous iteration cap, so that the
/// large shape values met by Student-t CDFs with huge degrees of freedom
/// still converge.
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_cf(a, b, x) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b).clamp(0.0, 1.0)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 20_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Standard (unit-scale) Student-t distribution with cached normalising constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentT {
    nu: f64,
    ln_norm: f64,
}

impl StudentT {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::domain(format!("t degrees of freedom must be > 0, got {nu}")));
        }
        let ln_norm = if nu.is_infinite() {
            -LN_SQRT_2PI
        } else {
            ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
        };
        Ok(Self { nu, ln_norm })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if self.nu.is_infinite() {
            return norm_ln_pdf(x);
        }
        self.ln_norm - 0.5 * (self.nu + 1.0) * (x * x / self.nu).ln_1p()
    }

    /// Upper tail `P(T > x)` for `x >= 0`.
    fn upper_tail(&self, x: f64) -> f64 {
        let nu = self.nu;
        let x2 = x * x;
        if x2 < nu {
            0.5 - 0.5 * beta_reg(0.5, 0.5 * nu, x2 / (nu + x2))
        } else {
            0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x2))
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if self.nu.is_infinite() {
            return norm_cdf(x);
        }
        if x.is_nan() {
            return f64::NAN;
        }
        if x == 0.0 {
            return 0.5;
        }
        if x.is_infinite() {
            return if x > 0.0 { 1.0 } else { 0.0 };
        }
        let tail = self.upper_tail(x.abs());
        if x > 0.0 {
            1.0 - tail
        } else {
            tail
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain(format!("t quantile needs p in (0,1), got {p}")));
        }
        let nu = self.nu;
        if nu.is_infinite() {
            return norm_quantile(p);
        }
        if p == 0.5 {
            return Ok(0.0);
        }
        if nu == 1.0 {
            return Ok((PI * (p - 0.5)).tan());
        }
        if nu == 2.0 {
            return Ok((2.0 * p - 1.0) / (2.0 * p * (1.0 - p)).sqrt());
        }
        let (q, sign) = if p < 0.5 { (p, -1.0) } else { (1.0 - p, 1.0) };
        Ok(sign * self.upper_quantile(q))
    }

    /// Solves `P(T > x) = q` for `x > 0`, `q < 0.5`, by safeguarded Newton
    /// iterations on `ln P(T > x)`.
    fn upper_quantile(&self, q: f64) -> f64 {
        let ln_q = q.ln();
        let z = -as241(q);
        // Cornish-Fisher start
        let mut x = z + (z * z * z + z) / (4.0 * self.nu);
        if !(x.is_finite() && x > 0.0) {
            x = z.max(1.0);
        }
        let mut lo = 0.0_f64;
        let mut hi = f64::INFINITY;
        for _ in 0..200 {
            let tail = self.upper_tail(x);
            if tail > q {
                lo = x;
            } else {
                hi = x;
            }
            let g = tail.ln() - ln_q;
            let dens = self.ln_pdf(x).exp();
            let mut next = x + g * tail / dens;
            if !(next.is_finite() && next > lo && next < hi) {
                next = if hi.is_infinite() {
                    2.0 * x.max(1.0)
                } else if lo > 0.0 && hi / lo > 4.0 {
                    (lo * hi).sqrt()
                } else {
                    0.5 * (lo + hi)
                };
            }
            if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) {
                return next;
            }
            x = next;
        }
        x
    }
}

/// Student-t CDF with `nu` degrees of freedom.
pub fn t_cdf(nu: f64, x: f64) -> Result<f64> {
    Ok(StudentT::new(nu)?.cdf(x))
}

/// Student-t quantile with `nu` degrees of freedom.
pub fn t_quantile(nu: f64, p: f64) -> Result<f64> {
    StudentT::new(nu)?.quantile(p)
}

/// Log-density of the standard Student-t.
pub fn t_ln_pdf(nu: f64, x: f64) -> Result<f64> {
    Ok(StudentT::new(nu)?.ln_pdf(x))
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// `ln(mean(exp(xs)))`, ignoring nothing: any NaN propagates.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NEG_INFINITY;
    }
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + (s / xs.len() as f64).ln()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Newton on `P_n`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}
