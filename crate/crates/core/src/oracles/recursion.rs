//! Moments `E_x <X_t, f>^k` from the moment recursion, in one dimension.
//!
//! `m_k(x, t) = e^{lambda_p t} T_t f^k(x)
//!     + lambda p int_0^t e^{lambda_p (t - s)} T_{t-s}[sum_{l=1}^{k-1} C(k, l) m_l m_{k-l}(., s)](x) ds`.
//!
//! Each `m_k(., s)` is a polynomial in `x`, held through its coefficients in the orthonormal
//! Hermite basis, on which `e^{lambda_p tau} T_tau` acts diagonally with factor
//! `exp((lambda_p - n mu) tau)`. Products are formed at Gauss-Hermite nodes and projected back
//! exactly. The time convolution is marched with an exponentially weighted trapezoid rule and
//! Richardson-extrapolated from three step sizes.

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::hermite::{he, SpectralFunction};
use crate::model::ModelParams;
use crate::ou_kernel::{cached_hermite_rule, ou_semigroup_apply, transition_coefficients};
use crate::poly::binomial;
use crate::quadrature::integrate;

/// Largest moment order handled by the recursion.
pub const MAX_ORDER: u32 = 6;

/// Discretisation of [`moment_recursion`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecursionGrid {
    /// Coarsest time step in units of `1 / lambda_p`.
    pub step: f64,
    /// Gauss-Hermite nodes of the spatial grid.
    pub nodes: usize,
    /// Largest acceptable relative Richardson error estimate.
    pub rel_tol: f64,
}

impl Default for RecursionGrid {
    fn default() -> Self {
        Self { step: 0.01, nodes: 64, rel_tol: 1e-7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecursionResult {
    /// Richardson-extrapolated value.
    pub value: f64,
    /// Plain trapezoid value on the finest grid.
    pub fine: f64,
    /// Plain trapezoid value on the middle grid.
    pub coarse: f64,
    /// Gap between the two Richardson estimates.
    pub error_estimate: f64,
}

/// `E_x <X_t, f>^k` for a polynomial `f` in one dimension.
pub fn moment_recursion(
    f: &SpectralFunction,
    k: u32,
    t: f64,
    x: f64,
    params: &ModelParams,
    grid: &RecursionGrid,
) -> Result<RecursionResult> {
    Ok(moment_recursion_all(f, k, t, x, params, grid)?.pop().expect("k >= 1"))
}

/// All moments of orders `1..=k_max`.
pub fn moment_recursion_all(
    f: &SpectralFunction,
    k_max: u32,
    t: f64,
    x: f64,
    params: &ModelParams,
    grid: &RecursionGrid,
) -> Result<Vec<RecursionResult>> {
    if params.d() != 1 {
        return Err(LabError::Unsupported("moment recursion is implemented for d = 1".into()));
    }
    if !(1..=MAX_ORDER).contains(&k_max) {
        return Err(LabError::Unsupported(format!(
            "moment order {k_max}; orders 1..={MAX_ORDER} are supported"
        )));
    }
    let poly = f.as_polynomial().ok_or_else(|| {
        LabError::Unsupported("moment recursion needs a polynomial test function".into())
    })?;
    if !(t.is_finite() && t >= 0.0) || !x.is_finite() {
        return Err(LabError::Parameter("t must be nonnegative and x finite".into()));
    }
    if !(grid.step > 0.0) {
        return Err(LabError::Parameter("recursion step must be positive".into()));
    }
    let modes = (k_max * poly.degree()) as usize + 1;
    if modes > grid.nodes {
        return Err(LabError::Parameter("too few quadrature nodes for the requested order".into()));
    }
    let setup = Setup::new(f, k_max, modes, params, grid.nodes);
    let base_steps = ((params.lambda_p() * t / grid.step).ceil() as usize).max(1);
    let runs: Vec<Vec<f64>> = [1, 2, 4]
        .iter()
        .map(|m| setup.march(t, base_steps * m, x))
        .collect();
    let extrapolated: Vec<(f64, f64, f64)> = (0..k_max as usize)
        .map(|k| {
            let (v1, v2, v3) = (runs[0][k], runs[1][k], runs[2][k]);
            ((4.0 * v2 - v1) / 3.0, (4.0 * v3 - v2) / 3.0, v3)
        })
        .collect();
    // Odd moments can vanish by symmetry, so errors are measured against the
    // larger of |m_k| and m_2^{k/2}, a lower bound for E|<X_t, f>|^k.
    let m2 = extrapolated.get(1).map_or(0.0, |e| e.1.abs());
    let mut out = Vec::with_capacity(k_max as usize);
    for (k, &(r1, r2, v3)) in extrapolated.iter().enumerate() {
        let err = (r2 - r1).abs();
        let scale = r2.abs().max(m2.powf((k + 1) as f64 / 2.0)).max(f64::MIN_POSITIVE);
        if err > grid.rel_tol * scale && err > 1e-300 {
            return Err(LabError::Tolerance {
                requested: grid.rel_tol,
                achieved: err / scale,
                estimate: r2,
                alternative: r1,
            });
        }
        out.push(RecursionResult { value: r2, fine: v3, coarse: runs[1][k], error_estimate: err });
    }
    Ok(out)
}

struct Setup {
    k_max: usize,
    modes: usize,
    lambda_p_rate: Vec<f64>,
    branch: f64,
    weights: Vec<f64>,
    /// basis[n][i] = h_n(z_i)
    basis: Vec<Vec<f64>>,
    /// Hermite coefficients of f^k, k = 1..=k_max (index k - 1).
    powers: Vec<Vec<f64>>,
    scale: f64,
}

impl Setup {
    fn new(f: &SpectralFunction, k_max: u32, modes: usize, params: &ModelParams, nodes: usize) -> Self {
        let rule = cached_hermite_rule(nodes);
        let scale = params.equilibrium_variance().sqrt();
        let basis: Vec<Vec<f64>> = (0..modes)
            .map(|n| {
                let norm = (1..=n).map(|j| j as f64).product::<f64>().sqrt();
                rule.nodes.iter().map(|&z| he(n as u32, z) / norm).collect()
            })
            .collect();
        let fvals: Vec<f64> = rule.nodes.iter().map(|&z| f.eval(&[z * scale])).collect();
        let mut s = Self {
            k_max: k_max as usize,
            modes,
            lambda_p_rate: (0..modes).map(|n| params.lambda_p() - n as f64 * params.mu()).collect(),
            branch: params.lambda() * params.p(),
            weights: rule.weights.clone(),
            basis,
            powers: Vec::new(),
            scale,
        };
        s.powers = (1..=k_max as i32)
            .map(|k| s.project(&fvals.iter().map(|v| v.powi(k)).collect::<Vec<_>>()))
            .collect();
        s
    }

    fn project(&self, values: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|h| h.iter().zip(values).zip(&self.weights).map(|((a, b), w)| a * b * w).sum())
            .collect()
    }

    fn at_nodes(&self, coeffs: &[f64]) -> Vec<f64> {
        (0..self.weights.len())
            .map(|i| coeffs.iter().zip(&self.basis).map(|(c, h)| c * h[i]).sum())
            .collect()
    }

    /// Trapezoid march with `steps` steps; returns `m_k(x, t)` for k = 1..=k_max.
    fn march(&self, t: f64, steps: usize, x: f64) -> Vec<f64> {
        let h = t / steps as f64;
        let decay_h: Vec<f64> = self.lambda_p_rate.iter().map(|a| (a * h).exp()).collect();
        // history[k][j] = node values of m_{k+1}(., s_j)
        let mut history: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.k_max);
        let mut finals = Vec::with_capacity(self.k_max);
        for k in 1..=self.k_max {
            let mut coeffs_t = Vec::new();
            let mut values = Vec::with_capacity(steps + 1);
            let mut integral = vec![0.0; self.modes];
            let mut prev_source: Option<Vec<f64>> = None;
            for j in 0..=steps {
                let s = j as f64 * h;
                let source = (k > 1).then(|| {
                    let nodes = self.weights.len();
                    let mut prod = vec![0.0; nodes];
                    for l in 1..k {
                        let c = binomial(k as u32, l as u32);
                        let a = &history[l - 1][j];
                        let b = &history[k - l - 1][j];
                        for i in 0..nodes {
                            prod[i] += c * a[i] * b[i];
                        }
                    }
                    let mut proj = self.project(&prod);
                    proj.iter_mut().for_each(|v| *v *= self.branch);
                    proj
                });
                if let (Some(src), Some(prev)) = (&source, &prev_source) {
                    for n in 0..self.modes {
                        integral[n] = decay_h[n] * integral[n] + 0.5 * h * (decay_h[n] * prev[n] + src[n]);
                    }
                }
                let coeffs: Vec<f64> = (0..self.modes)
                    .map(|n| (self.lambda_p_rate[n] * s).exp() * self.powers[k - 1][n] + integral[n])
                    .collect();
                if k < self.k_max {
                    values.push(self.at_nodes(&coeffs));
                }
                if j == steps {
                    coeffs_t = coeffs;
                }
                prev_source = source;
            }
            let z = x / self.scale;
            let value = coeffs_t
                .iter()
                .enumerate()
                .map(|(n, c)| {
                    let norm = (1..=n).map(|j| j as f64).product::<f64>().sqrt();
                    c * he(n as u32, z) / norm
                })
                .sum();
            finals.push(value);
            history.push(values);
        }
        finals
    }
}

/// `E_x <X_t, f>^2` from the explicit second-moment formula
/// `e^{lambda_p t} T_t f^2(x) + 2 lambda p int_0^t e^{lambda_p (t-s)} T_{t-s}[(e^{lambda_p s} T_s f)^2](x) ds`,
/// with every semigroup evaluated by Gauss-Hermite quadrature and the time integral by adaptive
/// Gauss-Kronrod. Independent of the Hermite machinery of [`moment_recursion`].
pub fn second_moment_quadrature(
    f: &SpectralFunction,
    t: f64,
    x: f64,
    params: &ModelParams,
) -> Result<f64> {
    if params.d() != 1 {
        return Err(LabError::Unsupported("second-moment quadrature is implemented for d = 1".into()));
    }
    let lp = params.lambda_p();
    let f2 = {
        let f = f.clone();
        SpectralFunction::custom(1, "f^2", move |y| f.eval(y).powi(2))
    };
    let first = (lp * t).exp() * ou_semigroup_apply(&f2, t, &[x], params)?;
    let rule = cached_hermite_rule(64);
    let mut failure = None;
    let integrand = |s: f64| {
        let (decay, sd) = transition_coefficients(params, t - s);
        let inner = rule.apply(|z| {
            let y = x * decay + sd * z;
            match ou_semigroup_apply(f, s, &[y], params) {
                Ok(v) => ((lp * s).exp() * v).powi(2),
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        });
        (lp * (t - s)).exp() * inner
    };
    let integral = integrate(integrand, 0.0, t, 0.0, 1e-11);
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(first + 2.0 * params.lambda() * params.p() * integral?.value)
}
