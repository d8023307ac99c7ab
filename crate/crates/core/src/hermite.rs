//! Hermite eigenbasis of the OU semigroup and the asymptotic variance functionals.
//!
//! The basis is orthonormal in `L^2(phi)`: `h_a(x) = prod_j He_{a_j}(x_j / sqrt(v)) / sqrt(a_j!)`
//! with `v = sigma^2 / (2 mu)` and `He_n` the probabilist Hermite polynomials. Each `h_a` is an
//! eigenfunction of `T_t` with eigenvalue `exp(-|a| mu t)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{ModelParams, Regime};
use crate::ou_kernel::{equilibrium_expectation, ou_semigroup_apply, SemigroupOptions};
use crate::poly::Polynomial;
use crate::quadrature::{self, integrate_to_infinity};

/// Default truncation degree for Hermite series of non-polynomial functions.
pub const DEFAULT_MAX_DEGREE: u32 = 12;

/// Exponent vector of a Hermite basis element.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(alpha: Vec<u32>) -> Self {
        Self(alpha)
    }

    pub fn zero(d: usize) -> Self {
        Self(vec![0; d])
    }

    /// The unit index `e_i` (zero based).
    pub fn unit(d: usize, i: usize) -> Self {
        let mut a = vec![0; d];
        a[i] = 1;
        Self(a)
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    /// All indices of length `d` with degree at most `max_degree`, in lexicographic order.
    pub fn all_up_to(d: usize, max_degree: u32) -> Vec<MultiIndex> {
        fn rec(d: usize, budget: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
            if prefix.len() == d {
                out.push(MultiIndex(prefix.clone()));
                return;
            }
            for k in 0..=budget {
                prefix.push(k);
                rec(d, budget - k, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(d, max_degree, &mut Vec::with_capacity(d), &mut out);
        out
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Probabilist Hermite polynomial `He_n(x)` by the three-term recurrence.
pub fn he(n: u32, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, x);
    if n == 0 {
        return a;
    }
    for k in 1..n {
        let c = x * b - f64::from(k) * a;
        a = b;
        b = c;
    }
    b
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// `h_alpha(x)` for the variance-adapted orthonormal basis.
pub fn eigenfunction_eval(alpha: &MultiIndex, x: &[f64], params: &ModelParams) -> f64 {
    let scale = params.equilibrium_variance().sqrt();
    alpha
        .0
        .iter()
        .zip(x)
        .map(|(&n, &xi)| he(n, xi / scale) / factorial(n).sqrt())
        .product()
}

/// `h_alpha` expanded as a polynomial in the original coordinates.
pub fn hermite_polynomial(alpha: &MultiIndex, params: &ModelParams) -> Polynomial {
    let d = alpha.dim();
    let scale = params.equilibrium_variance().sqrt();
    let mut out = Polynomial::constant(d, 1.0);
    for (i, &n) in alpha.0.iter().enumerate() {
        // Coefficients of He_n via He_{k+1} = x He_k - k He_{k-1}.
        let mut prev = vec![1.0];
        let mut cur = vec![0.0, 1.0];
        let coeffs = if n == 0 {
            prev
        } else {
            for k in 1..n {
                let mut next = vec![0.0; cur.len() + 1];
                for (j, c) in cur.iter().enumerate() {
                    next[j + 1] += c;
                }
                for (j, c) in prev.iter().enumerate() {
                    next[j] -= f64::from(k) * c;
                }
                prev = cur;
                cur = next;
            }
            cur
        };
        let norm = factorial(n).sqrt();
        let terms = coeffs.iter().enumerate().map(|(k, c)| {
            let mut e = vec![0; d];
            e[i] = k as u32;
            (c / (norm * scale.powi(k as i32)), e)
        });
        out = out.mul(&Polynomial::from_terms(d, terms).expect("shape matches"));
    }
    out
}

type CustomFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A test function `f: R^d -> R`.
///
/// Either an exact polynomial (possibly declared through Hermite coefficients) or an arbitrary
/// closure. Polynomials get exact derivatives and exact quadrature; closures are handled by
/// quadrature with error estimates.
#[derive(Clone)]
pub struct SpectralFunction {
    dim: usize,
    closed_form: Option<Polynomial>,
    declared_hermite: BTreeMap<MultiIndex, f64>,
    custom: Option<CustomFn>,
    label: String,
    max_degree: u32,
}

impl fmt::Debug for SpectralFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralFunction")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("closed_form", &self.closed_form)
            .field("max_degree", &self.max_degree)
            .finish()
    }
}

impl SpectralFunction {
    pub fn polynomial(p: Polynomial) -> Self {
        Self {
            dim: p.dim(),
            label: p.to_string(),
            closed_form: Some(p),
            declared_hermite: BTreeMap::new(),
            custom: None,
            max_degree: DEFAULT_MAX_DEGREE,
        }
    }

    /// Parses a polynomial expression, see [`Polynomial::parse`].
    pub fn parse_polynomial(expr: &str, d: usize) -> Result<Self> {
        Polynomial::parse(expr, d).map(Self::polynomial)
    }

    pub fn constant(d: usize, c: f64) -> Self {
        Self::polynomial(Polynomial::constant(d, c))
    }

    /// `sum c_a h_a` for the orthonormal basis determined by `params`.
    pub fn from_hermite(terms: &[(f64, MultiIndex)], params: &ModelParams) -> Result<Self> {
        let d = params.d();
        let mut poly = Polynomial::zero(d);
        let mut declared = BTreeMap::new();
        for (c, alpha) in terms {
            if alpha.dim() != d {
                return Err(LabError::Parameter(format!(
                    "Hermite index {alpha} does not have {d} entries"
                )));
            }
            poly = poly.add(&hermite_polynomial(alpha, params).scale(*c));
            *declared.entry(alpha.clone()).or_insert(0.0) += c;
        }
        let label = terms
            .iter()
            .map(|(c, a)| format!("{c}*h{a}"))
            .collect::<Vec<_>>()
            .join(" + ");
        let mut f = Self::polynomial(poly);
        f.declared_hermite = declared;
        f.label = label;
        Ok(f)
    }

    pub fn custom<F>(d: usize, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim: d,
            closed_form: None,
            declared_hermite: BTreeMap::new(),
            custom: Some(Arc::new(f)),
            label: label.into(),
            max_degree: DEFAULT_MAX_DEGREE,
        }
    }

    pub fn with_max_degree(mut self, max_degree: u32) -> Self {
        self.max_degree = max_degree;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        self.closed_form.as_ref()
    }

    /// Hermite coefficients the function was declared with, if any.
    pub fn declared_hermite(&self) -> &BTreeMap<MultiIndex, f64> {
        &self.declared_hermite
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match (&self.closed_form, &self.custom) {
            (Some(p), _) => p.eval(x),
            (None, Some(f)) => f(x),
            (None, None) => unreachable!("function has neither closed form nor closure"),
        }
    }

    /// `c * f`.
    pub fn scaled(&self, c: f64) -> Self {
        match (&self.closed_form, &self.custom) {
            (Some(p), _) => {
                let mut out = Self::polynomial(p.scale(c));
                out.declared_hermite =
                    self.declared_hermite.iter().map(|(a, v)| (a.clone(), c * v)).collect();
                out.max_degree = self.max_degree;
                out
            }
            (None, Some(f)) => {
                let f = Arc::clone(f);
                Self::custom(self.dim, format!("{c}*({})", self.label), move |x| c * f(x))
                    .with_max_degree(self.max_degree)
            }
            (None, None) => unreachable!(),
        }
    }

    pub(crate) fn check_dim(&self, params: &ModelParams) -> Result<()> {
        if self.dim == params.d() {
            Ok(())
        } else {
            Err(LabError::Parameter(format!(
                "test function '{}' has dimension {}, model dimension is {}",
                self.label,
                self.dim,
                params.d()
            )))
        }
    }
}

/// Coefficients of `f - <f, phi>` in the orthonormal basis, plus Parseval bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteExpansion {
    pub coefficients: BTreeMap<MultiIndex, f64>,
    /// `<f, phi>`.
    pub mean: f64,
    /// `<phi, (f - <f, phi>)^2>`.
    pub centered_norm2: f64,
    /// Parseval remainder `centered_norm2 - sum c^2`, clamped at zero.
    pub tail: f64,
    pub max_degree: u32,
}

impl HermiteExpansion {
    pub fn coefficient(&self, alpha: &MultiIndex) -> f64 {
        self.coefficients.get(alpha).copied().unwrap_or(0.0)
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.coefficients.values().map(|c| c * c).sum()
    }
}

/// Controls for [`hermite_coefficients_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteOptions {
    pub max_degree: u32,
    /// Gauss-Hermite nodes per axis.
    pub nodes: usize,
    /// Largest acceptable Parseval tail for non-polynomial functions.
    pub tail_tol: Option<f64>,
}

impl Default for HermiteOptions {
    fn default() -> Self {
        Self { max_degree: DEFAULT_MAX_DEGREE, nodes: 64, tail_tol: None }
    }
}

pub fn hermite_coefficients(
    f: &SpectralFunction,
    max_degree: u32,
    params: &ModelParams,
) -> Result<HermiteExpansion> {
    hermite_coefficients_with(f, params, &HermiteOptions { max_degree, ..Default::default() })
}

pub fn hermite_coefficients_with(
    f: &SpectralFunction,
    params: &ModelParams,
    opts: &HermiteOptions,
) -> Result<HermiteExpansion> {
    f.check_dim(params)?;
    let d = params.d();
    let scale = params.equilibrium_variance().sqrt();
    let indices: Vec<MultiIndex> = MultiIndex::all_up_to(d, opts.max_degree)
        .into_iter()
        .filter(|a| a.degree() > 0)
        .collect();

    let (mean, centered_norm2, coefficients) = if d <= 3 {
        let rule = quadrature::gauss_hermite(opts.nodes);
        let n = rule.len();
        // table[k][i] = h_k(z_i) in one variable
        let table: Vec<Vec<f64>> = (0..=opts.max_degree)
            .map(|k| rule.nodes.iter().map(|&z| he(k, z) / factorial(k).sqrt()).collect())
            .collect();
        let (points, weights) = quadrature::tensor_points(&rule, d);
        let mut idx_of_point = Vec::with_capacity(points.len());
        let mut counter = vec![0usize; d];
        let mut values = Vec::with_capacity(points.len());
        for p in &points {
            let x: Vec<f64> = p.iter().map(|z| z * scale).collect();
            values.push(f.eval(&x));
            idx_of_point.push(counter.clone());
            for slot in counter.iter_mut() {
                *slot += 1;
                if *slot < n {
                    break;
                }
                *slot = 0;
            }
        }
        let mean: f64 = values.iter().zip(&weights).map(|(v, w)| v * w).sum();
        let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let norm2: f64 = centered.iter().zip(&weights).map(|(v, w)| w * v * v).sum();
        let mut coefficients = BTreeMap::new();
        for alpha in &indices {
            let mut c = 0.0;
            for ((v, w), ix) in centered.iter().zip(&weights).zip(&idx_of_point) {
                let mut h = 1.0;
                for (j, &k) in alpha.as_slice().iter().enumerate() {
                    h *= table[k as usize][ix[j]];
                }
                c += w * v * h;
            }
            coefficients.insert(alpha.clone(), c);
        }
        (mean, norm2, coefficients)
    } else {
        let p = f.as_polynomial().ok_or_else(|| {
            LabError::Unsupported(format!(
                "Hermite coefficients of non-polynomial functions need d <= 3 (got d = {d})"
            ))
        })?;
        let zero = vec![0.0; d];
        let mean = p.gaussian_expectation(&zero, scale);
        let centered = p.add(&Polynomial::constant(d, -mean));
        let norm2 = centered.mul(&centered).gaussian_expectation(&zero, scale);
        let mut coefficients = BTreeMap::new();
        for alpha in &indices {
            let c = if alpha.degree() > p.degree() {
                0.0
            } else {
                centered.mul(&hermite_polynomial(alpha, params)).gaussian_expectation(&zero, scale)
            };
            coefficients.insert(alpha.clone(), c);
        }
        (mean, norm2, coefficients)
    };

    let sum_sq: f64 = coefficients.values().map(|c| c * c).sum();
    let tail = (centered_norm2 - sum_sq).max(0.0);
    let exact = f.as_polynomial().is_some_and(|p| p.degree() <= opts.max_degree);
    if !exact {
        if let Some(tol) = opts.tail_tol {
            if tail > tol {
                return Err(LabError::Tolerance {
                    requested: tol,
                    achieved: tail,
                    estimate: sum_sq,
                    alternative: centered_norm2,
                });
            }
        }
    }
    Ok(HermiteExpansion {
        coefficients,
        mean,
        centered_norm2,
        tail: if exact { 0.0 } else { tail },
        max_degree: opts.max_degree,
    })
}

/// A truncated series together with a bound on the omitted part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesValue {
    pub value: f64,
    pub tail_bound: f64,
}

fn small_weight(params: &ModelParams, degree: u32) -> f64 {
    let lp = params.lambda_p();
    1.0 + 2.0 * params.lambda() * params.p() / (2.0 * f64::from(degree) * params.mu() - lp)
}

/// Small-rate asymptotic variance from the Hermite series
/// `sum c_a^2 (1 + 2 lambda p / (2 |a| mu - lambda_p))`.
pub fn sigma2_small(f: &SpectralFunction, params: &ModelParams) -> Result<SeriesValue> {
    params.require(Regime::Small)?;
    let max_degree = match f.as_polynomial() {
        Some(p) => p.degree().max(1),
        None => f.max_degree(),
    };
    let exp = hermite_coefficients(f, max_degree, params)?;
    let value = exp
        .coefficients
        .iter()
        .map(|(a, c)| c * c * small_weight(params, a.degree()))
        .sum();
    // The weight decreases in the degree, so the weight at max_degree + 1 bounds the tail.
    let tail_bound = exp.tail * small_weight(params, max_degree + 1);
    Ok(SeriesValue { value, tail_bound })
}

/// Small-rate asymptotic variance from the time integral
/// `<phi, f~^2> + 2 lambda p int_0^inf exp(lambda_p s) <phi, (T_s f~)^2> ds`,
/// with `T_s` evaluated by Gauss-Hermite quadrature.
pub fn sigma2_small_integral(f: &SpectralFunction, params: &ModelParams) -> Result<f64> {
    params.require(Regime::Small)?;
    f.check_dim(params)?;
    let d = params.d();
    let mean = equilibrium_expectation(f, params)?;
    let base = equilibrium_expectation(&SpectralFunction::custom(d, "f~^2", {
        let f = f.clone();
        move |x| (f.eval(x) - mean).powi(2)
    }), params)?;

    let opts = SemigroupOptions::default();
    let lp = params.lambda_p();
    let integrand: Box<dyn Fn(f64) -> f64> = match (d, f.as_polynomial()) {
        (_, Some(p)) if d > 1 => {
            // Exact polynomial smoothing keeps higher dimensions affordable.
            let centered = p.add(&Polynomial::constant(d, -mean));
            let v = params.equilibrium_variance();
            let mu = params.mu();
            let zero = vec![0.0; d];
            Box::new(move |s: f64| {
                let a = (-mu * s).exp();
                let sd = (v * -(-2.0 * mu * s).exp_m1()).sqrt();
                let ts = centered.gaussian_smoothing(a, sd);
                (lp * s).exp() * ts.mul(&ts).gaussian_expectation(&zero, v.sqrt())
            })
        }
        (1, _) => {
            let rule = quadrature::gauss_hermite(opts.nodes);
            let scale = params.equilibrium_variance().sqrt();
            let f = f.clone();
            let params = *params;
            Box::new(move |s: f64| {
                let inner = rule.apply(|z| {
                    let t = ou_semigroup_apply(&f, s, &[z * scale], &params).unwrap_or(f64::NAN) - mean;
                    t * t
                });
                (lp * s).exp() * inner
            })
        }
        _ => {
            return Err(LabError::Unsupported(
                "integral form for non-polynomial functions is implemented for d = 1 only".into(),
            ))
        }
    };
    let tail = integrate_to_infinity(|s| integrand(s), 0.0, 1e-11, 1e-14)?;
    Ok(base + 2.0 * params.lambda() * params.p() * tail.value)
}

/// Critical-rate asymptotic variance by two independent routes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalVariance {
    /// `(lambda p sigma^2 / mu) sum_i <d_i f, phi>^2`.
    pub value: f64,
    /// `(4 lambda p mu / sigma^2) sum_i f_{e_i}^2` with `f_{e_i} = int f~ x_i phi`.
    pub hermite_path: f64,
    pub gradient_mean: Vec<f64>,
    /// The monomial-convention coefficients `f_{e_i}`.
    pub first_order_coefficients: Vec<f64>,
}

pub fn sigma2_critical(f: &SpectralFunction, params: &ModelParams) -> Result<CriticalVariance> {
    params.require(Regime::Critical)?;
    let grad = gradient_mean(f, params)?;
    let lp = params.lambda() * params.p();
    let s2 = params.sigma().powi(2);
    let value = lp * s2 / params.mu() * grad.iter().map(|g| g * g).sum::<f64>();

    let d = params.d();
    let mean = equilibrium_expectation(f, params)?;
    let mut coeffs = Vec::with_capacity(d);
    for i in 0..d {
        let g = f.clone();
        let h = SpectralFunction::custom(d, "f~ x_i", move |x| (g.eval(x) - mean) * x[i]);
        coeffs.push(equilibrium_expectation(&h, params)?);
    }
    let hermite_path = 4.0 * lp * params.mu() / s2 * coeffs.iter().map(|c| c * c).sum::<f64>();
    Ok(CriticalVariance { value, hermite_path, gradient_mean: grad, first_order_coefficients: coeffs })
}

/// `(<d_1 f, phi>, ..., <d_d f, phi>)`; exact for polynomials, by parts otherwise.
pub fn gradient_mean(f: &SpectralFunction, params: &ModelParams) -> Result<Vec<f64>> {
    f.check_dim(params)?;
    match f.as_polynomial() {
        Some(p) => {
            let zero = vec![0.0; params.d()];
            let scale = params.equilibrium_variance().sqrt();
            Ok((0..params.d())
                .map(|i| p.derivative(i).gaussian_expectation(&zero, scale))
                .collect())
        }
        None => gradient_mean_by_parts(f, params),
    }
}

/// `<f, -d_i phi> = <f, x_i phi> / v`, evaluated by quadrature for any function.
pub fn gradient_mean_by_parts(f: &SpectralFunction, params: &ModelParams) -> Result<Vec<f64>> {
    f.check_dim(params)?;
    let d = params.d();
    let v = params.equilibrium_variance();
    (0..d)
        .map(|i| {
            let g = f.clone();
            let h = SpectralFunction::custom(d, "f x_i / v", move |x| g.eval(x) * x[i] / v);
            equilibrium_expectation(&h, params)
        })
        .collect()
}
