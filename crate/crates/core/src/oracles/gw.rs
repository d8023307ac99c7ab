//! The population size process: a continuous-time binary Galton-Watson process.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::model::ModelParams;

/// Law of `|X_t|` and of `V_inf`, determined by `lambda` and `p` alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GwLaw {
    lambda: f64,
    p: f64,
    p_e: f64,
}

impl GwLaw {
    pub fn new(params: &ModelParams) -> Self {
        Self { lambda: params.lambda(), p: params.p(), p_e: params.extinction_probability() }
    }

    pub fn from_rates(lambda: f64, p: f64) -> Result<Self> {
        let params = ModelParams::new(1, 1.0, 1.0, lambda, p)?;
        Ok(Self::new(&params))
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn lambda_p(&self) -> f64 {
        (2.0 * self.p - 1.0) * self.lambda
    }

    /// Extinction probability `(1 - p) / p`.
    pub fn extinction_probability(&self) -> f64 {
        self.p_e
    }

    /// Rate `(2p - 1) / p` of the exponential law of `V_inf` on survival.
    pub fn vinf_rate(&self) -> f64 {
        (2.0 * self.p - 1.0) / self.p
    }

    /// Mean `p / (2p - 1)` of `V_inf` on survival.
    pub fn vinf_conditional_mean(&self) -> f64 {
        1.0 / self.vinf_rate()
    }

    /// `E V_inf = 1`.
    pub fn vinf_mean(&self) -> f64 {
        (1.0 - self.p_e) * self.vinf_conditional_mean()
    }

    /// `Var V_inf = 1 / (2p - 1)`.
    pub fn vinf_variance(&self) -> f64 {
        let second = (1.0 - self.p_e) * 2.0 / self.vinf_rate().powi(2);
        second - self.vinf_mean().powi(2)
    }

    /// Probability that the population is extinct by time `t`, `w(t, inf)`.
    pub fn extinction_probability_by(&self, t: f64) -> f64 {
        let (b, d) = (self.lambda * self.p, self.lambda * (1.0 - self.p));
        let em = (-(b - d) * t).exp_m1(); // exp(-(b-d) t) - 1
        // d (1 - e) / (b - d e) with e = exp(-(b - d) t)
        d * -em / (b - d * (1.0 + em))
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(LabError::Parameter(format!("{name} must be finite and nonnegative, got {v}")))
    }
}

/// `E exp(-theta |X_t|)`, the closed-form solution of the Riccati equation
/// `w' = lambda p w^2 - lambda w + lambda (1 - p)`, `w(0) = exp(-theta)`.
pub fn gw_laplace(t: f64, theta: f64, law: &GwLaw) -> Result<f64> {
    check_nonneg("t", t)?;
    check_nonneg("theta", theta)?;
    Ok(laplace_unchecked(t, theta, law))
}

/// The same rational expression without the sign checks; it stays analytic for small negative
/// `theta`, which central differences at zero rely on.
fn laplace_unchecked(t: f64, theta: f64, law: &GwLaw) -> f64 {
    let (lambda, p) = (law.lambda, law.p);
    let s_minus_1 = (-theta).exp_m1();
    let s = 1.0 + s_minus_1;
    let e = (-law.lambda_p() * t).exp();
    let tail = e * (lambda * p * s - lambda * (1.0 - p));
    (lambda * (1.0 - p) * s_minus_1 - tail) / (lambda * p * s_minus_1 - tail)
}

/// Laplace transform of `V_t = exp(-lambda_p t) |X_t|`.
pub fn normalized_laplace(t: f64, theta: f64, law: &GwLaw) -> Result<f64> {
    gw_laplace(t, theta * (-law.lambda_p() * t).exp(), law)
}

/// `E exp(-theta V_inf) = p_e + (1 - p_e) r / (r + theta)` with `r = (2p - 1) / p`.
pub fn vinf_laplace(theta: f64, law: &GwLaw) -> Result<f64> {
    check_nonneg("theta", theta)?;
    let r = law.vinf_rate();
    Ok(law.p_e + (1.0 - law.p_e) * r / (r + theta))
}

/// CDF of `V_inf` conditioned on survival: `1 - exp(-((2p - 1) / p) v)`.
pub fn vinf_conditional_cdf(v: f64, law: &GwLaw) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        -(-law.vinf_rate() * v).exp_m1()
    }
}

/// `E |X_t|^k` for `k = 1` (`exp(lambda_p t)`) and `k = 4` (closed form).
pub fn population_moment(t: f64, k: u32, law: &GwLaw) -> Result<f64> {
    check_nonneg("t", t)?;
    let e = (law.lambda_p() * t).exp();
    let p = law.p;
    match k {
        1 => Ok(e),
        4 => Ok(e
            * (-1.0
                + 2.0 * (-4.0 + 7.0 * e) * p
                + (8.0 + 16.0 * e - 36.0 * e * e) * p * p
                + 8.0 * e * (-2.0 + 3.0 * e * e) * p.powi(3))
            / (2.0 * p - 1.0).powi(3)),
        _ => Err(LabError::Unsupported(format!(
            "population moment of order {k}; only orders 1 and 4 have closed forms here"
        ))),
    }
}

/// `E |X_t|^4` as the fourth derivative of `gw_laplace` at `theta = 0`, by a fourth-order
/// accurate seven-point central difference with step `step * exp(-lambda_p t)`.
pub fn fourth_moment_by_differentiation(t: f64, law: &GwLaw, step: f64) -> Result<f64> {
    check_nonneg("t", t)?;
    let h = step * (-law.lambda_p() * t).exp();
    let w = |k: f64| laplace_unchecked(t, k * h, law);
    let num = -w(-3.0) + 12.0 * w(-2.0) - 39.0 * w(-1.0) + 56.0 * w(0.0) - 39.0 * w(1.0)
        + 12.0 * w(2.0)
        - w(3.0);
    Ok(num / (6.0 * h.powi(4)))
}

/// Size after time `s` of a population that currently has `n` members.
///
/// Each member's descendance is linear fractional: extinct with probability `a`, otherwise
/// geometric on `{1, 2, ...}` with ratio `b`. The total is drawn as `K ~ Bin(n, 1 - a)` surviving
/// lines plus a negative binomial excess obtained by Gamma-Poisson mixing.
pub fn sample_count<R: Rng>(n: u64, s: f64, law: &GwLaw, rng: &mut R) -> Result<u64> {
    check_nonneg("s", s)?;
    if n == 0 || s == 0.0 {
        return Ok(n);
    }
    let (b, d) = (law.lambda * law.p, law.lambda * (1.0 - law.p));
    let growth = ((b - d) * s).exp_m1(); // e^{(b-d)s} - 1
    let denom = b * (growth + 1.0) - d;
    let a = d * growth / denom;
    let beta = b * growth / denom;
    let survivors = if a == 0.0 {
        n
    } else {
        Binomial::new(n, 1.0 - a)
            .map_err(|e| LabError::Parameter(e.to_string()))?
            .sample(rng)
    };
    if survivors == 0 || beta == 0.0 {
        return Ok(survivors);
    }
    let mix = Gamma::new(survivors as f64, beta / (1.0 - beta))
        .map_err(|e| LabError::Parameter(e.to_string()))?
        .sample(rng);
    let excess = if mix > 0.0 {
        Poisson::new(mix)
            .map_err(|e| LabError::Parameter(e.to_string()))?
            .sample(rng)
    } else {
        0.0
    };
    Ok(survivors + excess as u64)
}
