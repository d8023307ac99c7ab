//! Exact OU transitions, the equilibrium law and the semigroup `T_t`.
//!
//! Per coordinate the transition over `dt` is Gaussian with mean `x exp(-mu dt)` and variance
//! `v (1 - exp(-2 mu dt))`, `v = sigma^2 / (2 mu)`, which keeps the equilibrium `N(0, v I)`
//! invariant.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;

use crate::error::{LabError, Result};
use crate::hermite::SpectralFunction;
use crate::model::{ModelParams, Position};
use crate::quadrature::{self, Rule};
use crate::rng::{derive_stream, NormalSource, StreamPurpose};

/// Mean contraction factor and innovation standard deviation of a step of length `dt`.
#[inline]
pub fn transition_coefficients(params: &ModelParams, dt: f64) -> (f64, f64) {
    let mu = params.mu();
    let decay = (-mu * dt).exp();
    let sd = (params.equilibrium_variance() * -(-2.0 * mu * dt).exp_m1()).sqrt();
    (decay, sd)
}

fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt >= 0.0 {
        Ok(())
    } else {
        Err(LabError::Parameter(format!("time step must be finite and nonnegative, got {dt}")))
    }
}

/// Samples the OU position after `dt` starting from `x`.
pub fn ou_transition_sample<R: Rng>(
    params: &ModelParams,
    x: &Position,
    dt: f64,
    normals: &mut NormalSource<R>,
) -> Result<Position> {
    check_dt(dt)?;
    x.check_dim(params)?;
    if dt == 0.0 {
        return Ok(x.clone());
    }
    let (decay, sd) = transition_coefficients(params, dt);
    Ok(Position::from_raw(
        x.iter().map(|&xi| xi * decay + sd * normals.next_normal()).collect(),
    ))
}

/// Advances `x` and `y` over `dt` with one shared Gaussian innovation per coordinate, so that
/// `x' - y' = (x - y) exp(-mu dt)` up to rounding.
pub fn coupled_pair_transition<R: Rng>(
    params: &ModelParams,
    x: &Position,
    y: &Position,
    dt: f64,
    normals: &mut NormalSource<R>,
) -> Result<(Position, Position)> {
    check_dt(dt)?;
    x.check_dim(params)?;
    y.check_dim(params)?;
    if dt == 0.0 {
        return Ok((x.clone(), y.clone()));
    }
    let (decay, sd) = transition_coefficients(params, dt);
    let mut xs = Vec::with_capacity(x.dim());
    let mut ys = Vec::with_capacity(y.dim());
    for (&xi, &yi) in x.iter().zip(y.iter()) {
        let noise = sd * normals.next_normal();
        xs.push(xi * decay + noise);
        ys.push(yi * decay + noise);
    }
    Ok((Position::from_raw(xs), Position::from_raw(ys)))
}

/// Density of the equilibrium law, `(mu / (pi sigma^2))^{d/2} exp(-(mu / sigma^2) |x|^2)`.
pub fn equilibrium_density(params: &ModelParams, x: &Position) -> Result<f64> {
    x.check_dim(params)?;
    let s2 = params.sigma().powi(2);
    let r2: f64 = x.iter().map(|c| c * c).sum();
    let prefactor = (params.mu() / (std::f64::consts::PI * s2)).powf(params.d() as f64 / 2.0);
    Ok(prefactor * (-params.mu() / s2 * r2).exp())
}

/// One draw from the equilibrium law.
pub fn equilibrium_sample<R: Rng>(params: &ModelParams, normals: &mut NormalSource<R>) -> Position {
    let sd = params.equilibrium_variance().sqrt();
    Position::from_raw((0..params.d()).map(|_| sd * normals.next_normal()).collect())
}

/// Accuracy controls for [`ou_semigroup_apply_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemigroupOptions {
    /// Gauss-Hermite nodes per axis.
    pub nodes: usize,
    /// Tolerance for the quadrature paths; absolute for values up to 1 in size, relative beyond.
    pub tol: f64,
    /// Draws used by the Monte Carlo fallback for non-polynomial functions when `d > 3`.
    pub mc_draws: usize,
    pub mc_seed: u64,
    /// Absolute tolerance (four standard errors) accepted from the Monte Carlo fallback.
    pub mc_tol: f64,
}

impl Default for SemigroupOptions {
    fn default() -> Self {
        Self { nodes: 64, tol: 1e-10, mc_draws: 1_000_000, mc_seed: 0, mc_tol: 1e-2 }
    }
}

pub(crate) fn cached_hermite_rule(n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("rule cache poisoned");
    Arc::clone(guard.entry(n).or_insert_with(|| Arc::new(quadrature::gauss_hermite(n))))
}

/// `E f(mean + sd Z)` by a tensor Gauss-Hermite rule, `d <= 3`.
fn tensor_gauss(f: &SpectralFunction, mean: &[f64], sd: f64, rule: &Rule) -> f64 {
    let d = mean.len();
    let n = rule.len();
    let mut x = [0.0f64; 3];
    let mut total = 0.0;
    let mut idx = [0usize; 3];
    for _ in 0..n.pow(d as u32) {
        let mut w = 1.0;
        for j in 0..d {
            x[j] = mean[j] + sd * rule.nodes[idx[j]];
            w *= rule.weights[idx[j]];
        }
        total += w * f.eval(&x[..d]);
        for slot in idx.iter_mut().take(d) {
            *slot += 1;
            if *slot < n {
                break;
            }
            *slot = 0;
        }
    }
    total
}

/// `E f(mean + sd Z)` for `Z ~ N(0, I_d)`, choosing exact, quadrature or Monte Carlo evaluation.
pub(crate) fn gaussian_expectation(
    f: &SpectralFunction,
    mean: &[f64],
    sd: f64,
    opts: &SemigroupOptions,
) -> Result<f64> {
    let d = mean.len();
    if sd == 0.0 {
        return Ok(f.eval(mean));
    }
    if d > 3 {
        if let Some(p) = f.as_polynomial() {
            return Ok(p.gaussian_expectation(mean, sd));
        }
        let mut normals =
            NormalSource::new(derive_stream(opts.mc_seed, 0, StreamPurpose::Auxiliary));
        let mut x = vec![0.0; d];
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..opts.mc_draws {
            for (xi, m) in x.iter_mut().zip(mean) {
                *xi = m + sd * normals.next_normal();
            }
            let v = f.eval(&x);
            s1 += v;
            s2 += v * v;
        }
        let n = opts.mc_draws as f64;
        let est = s1 / n;
        let se = ((s2 / n - est * est).max(0.0) / n).sqrt();
        if 4.0 * se > opts.mc_tol {
            return Err(LabError::Tolerance {
                requested: opts.mc_tol,
                achieved: 4.0 * se,
                estimate: est,
                alternative: est,
            });
        }
        return Ok(est);
    }
    let rule = cached_hermite_rule(opts.nodes);
    let value = tensor_gauss(f, mean, sd, &rule);
    let exact = f
        .as_polynomial()
        .is_some_and(|p| (p.degree() as usize) < 2 * opts.nodes);
    if exact {
        return Ok(value);
    }
    let coarse = tensor_gauss(f, mean, sd, &cached_hermite_rule((opts.nodes / 2).max(1)));
    let gap = (value - coarse).abs();
    if !value.is_finite() || gap > opts.tol * value.abs().max(1.0) {
        return Err(LabError::Tolerance {
            requested: opts.tol,
            achieved: gap,
            estimate: value,
            alternative: coarse,
        });
    }
    Ok(value)
}

/// `T_t f(x) = E f(x exp(-mu t) + sqrt(v (1 - exp(-2 mu t))) Z)` with default accuracy.
pub fn ou_semigroup_apply(
    f: &SpectralFunction,
    t: f64,
    x: &[f64],
    params: &ModelParams,
) -> Result<f64> {
    ou_semigroup_apply_with(f, t, x, params, &SemigroupOptions::default())
}

pub fn ou_semigroup_apply_with(
    f: &SpectralFunction,
    t: f64,
    x: &[f64],
    params: &ModelParams,
    opts: &SemigroupOptions,
) -> Result<f64> {
    check_dt(t)?;
    f.check_dim(params)?;
    if x.len() != params.d() || x.iter().any(|c| !c.is_finite()) {
        return Err(LabError::Parameter(format!(
            "evaluation point must have {} finite coordinates",
            params.d()
        )));
    }
    let (decay, sd) = transition_coefficients(params, t);
    let mean: Vec<f64> = x.iter().map(|xi| xi * decay).collect();
    gaussian_expectation(f, &mean, sd, opts)
}

/// `<f, phi>`, the integral of `f` against the equilibrium law.
pub fn equilibrium_expectation(f: &SpectralFunction, params: &ModelParams) -> Result<f64> {
    f.check_dim(params)?;
    let zero = vec![0.0; params.d()];
    let sd = params.equilibrium_variance().sqrt();
    match f.as_polynomial() {
        Some(p) => Ok(p.gaussian_expectation(&zero, sd)),
        None => gaussian_expectation(f, &zero, sd, &SemigroupOptions::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pr(d: usize, sigma: f64, mu: f64) -> ModelParams {
        ModelParams::new(d, sigma, mu, 1.0, 0.75).unwrap()
    }

    #[test]
    fn zero_step_is_identity() {
        let params = pr(2, 1.0, 1.0);
        let mut n = NormalSource::new(derive_stream(3, 0, StreamPurpose::Motion));
        let x = Position::new(vec![1.5, -0.2]).unwrap();
        assert_eq!(ou_transition_sample(&params, &x, 0.0, &mut n).unwrap(), x);
        assert!(ou_transition_sample(&params, &x, -1.0, &mut n).is_err());
        assert!(ou_transition_sample(&params, &x, f64::NAN, &mut n).is_err());
        let wrong = Position::new(vec![1.0]).unwrap();
        assert!(ou_transition_sample(&params, &wrong, 1.0, &mut n).is_err());
    }

    #[test]
    fn density_values() {
        let p = ModelParams::new(1, 1.0, std::f64::consts::PI, 1.0, 0.75).unwrap();
        assert!((equilibrium_density(&p, &Position::origin(1)).unwrap() - 1.0).abs() < 1e-15);
        let p = pr(1, 1.0, 1.0);
        let at0 = equilibrium_density(&p, &Position::origin(1)).unwrap();
        assert!((at0 - std::f64::consts::FRAC_1_PI.sqrt()).abs() < 1e-15);
        let a = equilibrium_density(&p, &Position::new(vec![0.7]).unwrap()).unwrap();
        let b = equilibrium_density(&p, &Position::new(vec![-0.7]).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn semigroup_of_low_degree_functions() {
        let params = pr(1, 2f64.sqrt(), 1.0);
        let one = SpectralFunction::constant(1, 1.0);
        assert!((ou_semigroup_apply(&one, 0.7, &[3.0], &params).unwrap() - 1.0).abs() < 1e-14);
        let x = SpectralFunction::parse_polynomial("x", 1).unwrap();
        let t = 0.9;
        let got = ou_semigroup_apply(&x, t, &[2.0], &params).unwrap();
        assert!((got - 2.0 * (-t as f64).exp()).abs() < 1e-14);
        let x2 = SpectralFunction::parse_polynomial("x^2", 1).unwrap();
        let got = ou_semigroup_apply(&x2, 2f64.ln(), &[2.0], &params).unwrap();
        assert!((got - 1.75).abs() < 1e-13);
    }

    #[test]
    fn high_dimension_uses_exact_polynomials() {
        let params = pr(4, 1.0, 0.5);
        let f = SpectralFunction::parse_polynomial("x1^2 + x4", 4).unwrap();
        let t: f64 = 0.3;
        let got = ou_semigroup_apply(&f, t, &[1.0, 0.0, 0.0, 2.0], &params).unwrap();
        let want = (-2.0 * 0.5 * t).exp() + (1.0 - (-2.0 * 0.5 * t).exp()) + 2.0 * (-0.5 * t).exp();
        assert!((got - want).abs() < 1e-13);
    }

    #[test]
    fn rough_functions_report_tolerance() {
        let params = pr(1, 1.0, 1.0);
        let step = SpectralFunction::custom(1, "step", |x: &[f64]| if x[0] > 1.0 { 1.0 } else { 0.0 });
        match ou_semigroup_apply(&step, 1.0, &[0.0], &params) {
            Err(LabError::Tolerance { estimate, .. }) => assert!(estimate > 0.0 && estimate < 1.0),
            other => panic!("expected a tolerance error, got {other:?}"),
        }
        let smooth = SpectralFunction::custom(1, "cos", |x: &[f64]| x[0].cos());
        let got = ou_semigroup_apply(&smooth, 1.0, &[0.0], &params).unwrap();
        // E cos(sZ) = exp(-s^2/2)
        let s2 = 0.5 * (1.0 - (-2.0f64).exp());
        assert!((got - (-s2 / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn coupled_difference_contracts() {
        let params = pr(1, 1.0, 1.0);
        let mut n = NormalSource::new(derive_stream(5, 0, StreamPurpose::Motion));
        let x = Position::new(vec![1.0]).unwrap();
        let y = Position::new(vec![0.0]).unwrap();
        let (a, b) = coupled_pair_transition(&params, &x, &y, 2f64.ln(), &mut n).unwrap();
        assert!((a[0] - b[0] - 0.5).abs() <= 8.0 * f64::EPSILON * a[0].abs().max(b[0].abs()).max(1.0));
        let (c, d) = coupled_pair_transition(&params, &x, &x, 3.0, &mut n).unwrap();
        assert_eq!(c, d);
    }
}
