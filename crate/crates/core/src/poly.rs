//! Multivariate polynomials with exact Gaussian expectations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// A polynomial in `dim` variables stored as sorted (exponent vector, coefficient) terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::from_terms(dim, [(c, vec![0; dim])]).expect("constant has valid shape")
    }

    /// The coordinate function `x_i` (zero based).
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        Self::from_terms(dim, [(1.0, e)]).expect("coordinate has valid shape")
    }

    /// Builds a polynomial from `(coefficient, exponents)` pairs, merging repeated monomials.
    pub fn from_terms<I>(dim: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, Vec<u32>)>,
    {
        let mut map: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (c, e) in terms {
            if e.len() != dim {
                return Err(LabError::Parameter(format!(
                    "monomial exponent {e:?} does not have {dim} entries"
                )));
            }
            if !c.is_finite() {
                return Err(LabError::Parameter(format!("non-finite coefficient {c}")));
            }
            *map.entry(e).or_insert(0.0) += c;
        }
        Ok(Self::from_map(dim, map))
    }

    fn from_map(dim: usize, map: BTreeMap<Vec<u32>, f64>) -> Self {
        Self {
            dim,
            terms: map.into_iter().filter(|(_, c)| *c != 0.0).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(Vec<u32>, f64)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; 0 for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|(e, _)| e.iter().sum())
            .max()
            .unwrap_or(0)
    }

    /// Coefficient of the monomial with the given exponents.
    pub fn coefficient(&self, exponents: &[u32]) -> f64 {
        self.terms
            .iter()
            .find(|(e, _)| e == exponents)
            .map_or(0.0, |(_, c)| *c)
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut acc = 0.0;
        for (e, c) in &self.terms {
            let mut m = *c;
            for (xi, &k) in x.iter().zip(e) {
                if k > 0 {
                    m *= xi.powi(k as i32);
                }
            }
            acc += m;
        }
        acc
    }

    pub fn derivative(&self, i: usize) -> Self {
        let mut map = BTreeMap::new();
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut e2 = e.clone();
                e2[i] -= 1;
                *map.entry(e2).or_insert(0.0) += c * f64::from(e[i]);
            }
        }
        Self::from_map(self.dim, map)
    }

    pub fn scale(&self, s: f64) -> Self {
        let map = self.terms.iter().map(|(e, c)| (e.clone(), c * s)).collect();
        Self::from_map(self.dim, map)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "polynomial dimensions differ");
        let mut map: BTreeMap<Vec<u32>, f64> = self.terms.iter().cloned().collect();
        for (e, c) in &other.terms {
            *map.entry(e.clone()).or_insert(0.0) += c;
        }
        Self::from_map(self.dim, map)
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "polynomial dimensions differ");
        let mut map = BTreeMap::new();
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                *map.entry(e).or_insert(0.0) += c1 * c2;
            }
        }
        Self::from_map(self.dim, map)
    }

    pub fn powi(&self, k: u32) -> Self {
        (0..k).fold(Self::constant(self.dim, 1.0), |acc, _| acc.mul(self))
    }

    /// `E p(mean + sd * Z)` for `Z ~ N(0, I)`, computed exactly from Gaussian moments.
    pub fn gaussian_expectation(&self, mean: &[f64], sd: f64) -> f64 {
        assert_eq!(mean.len(), self.dim);
        self.terms
            .iter()
            .map(|(e, c)| {
                c * e
                    .iter()
                    .zip(mean)
                    .map(|(&k, &m)| shifted_normal_moment(k, m, sd))
                    .product::<f64>()
            })
            .sum()
    }

    /// The polynomial `x -> E p(a x + sd Z)`; with `a = exp(-mu t)` this is the OU semigroup.
    pub fn gaussian_smoothing(&self, a: f64, sd: f64) -> Self {
        let mut out = Self::zero(self.dim);
        for (e, c) in &self.terms {
            let mut term = Self::constant(self.dim, *c);
            for (i, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                // (a x + sd Z)^k averaged over Z.
                let mut factor = BTreeMap::new();
                for j in (0..=k).step_by(2) {
                    let coef = binomial(k, j) * a.powi((k - j) as i32) * sd.powi(j as i32)
                        * normal_moment(j);
                    let mut ex = vec![0; self.dim];
                    ex[i] = k - j;
                    *factor.entry(ex).or_insert(0.0) += coef;
                }
                term = term.mul(&Self::from_map(self.dim, factor));
            }
            out = out.add(&term);
        }
        out
    }

    /// Parses expressions such as `x^2+x`, `3*x1*x2^2 - 0.5` or `x1*x2`. In one dimension `x`
    /// is an alias of `x1`.
    pub fn parse(s: &str, dim: usize) -> Result<Self> {
        Parser { src: s, chars: s.char_indices().peekable(), dim }.parse()
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (n, (e, c)) in self.terms.iter().enumerate() {
            if n > 0 {
                f.write_str(if *c < 0.0 { " - " } else { " + " })?;
            } else if *c < 0.0 {
                f.write_str("-")?;
            }
            let mut parts = Vec::new();
            let is_const = e.iter().all(|&k| k == 0);
            if c.abs() != 1.0 || is_const {
                parts.push(format!("{}", c.abs()));
            }
            for (i, &k) in e.iter().enumerate() {
                let name = if self.dim == 1 { "x".to_string() } else { format!("x{}", i + 1) };
                match k {
                    0 => {}
                    1 => parts.push(name),
                    _ => parts.push(format!("{name}^{k}")),
                }
            }
            f.write_str(&parts.join("*"))?;
        }
        Ok(())
    }
}

/// `E Z^k` for a standard normal `Z`.
pub fn normal_moment(k: u32) -> f64 {
    if k % 2 == 1 {
        0.0
    } else {
        (1..k).step_by(2).map(f64::from).product()
    }
}

/// `E (m + s Z)^k`.
fn shifted_normal_moment(k: u32, m: f64, s: f64) -> f64 {
    (0..=k)
        .step_by(2)
        .map(|j| binomial(k, j) * m.powi((k - j) as i32) * s.powi(j as i32) * normal_moment(j))
        .sum()
}

pub fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

struct Parser<'a> {
    src: &'a str,
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    dim: usize,
}

impl Parser<'_> {
    fn err(&self, pos: usize, msg: &str) -> LabError {
        LabError::Parameter(format!("polynomial '{}' at column {}: {msg}", self.src, pos + 1))
    }

    fn skip_ws(&mut self) {
        while self.chars.peek().is_some_and(|(_, c)| c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn pos(&mut self) -> usize {
        self.chars.peek().map_or(self.src.len(), |(i, _)| *i)
    }

    fn parse(mut self) -> Result<Polynomial> {
        let mut terms = Vec::new();
        let mut first = true;
        loop {
            self.skip_ws();
            let mut sign = 1.0;
            match self.chars.peek() {
                None if first => return Err(self.err(0, "empty expression")),
                None => break,
                Some((_, '+')) => {
                    self.chars.next();
                }
                Some((_, '-')) => {
                    sign = -1.0;
                    self.chars.next();
                }
                Some((i, _)) if !first => {
                    let i = *i;
                    return Err(self.err(i, "expected '+' or '-'"));
                }
                _ => {}
            }
            first = false;
            let (c, e) = self.term()?;
            terms.push((sign * c, e));
        }
        Polynomial::from_terms(self.dim, terms)
    }

    fn term(&mut self) -> Result<(f64, Vec<u32>)> {
        let mut coef = 1.0;
        let mut exps = vec![0u32; self.dim];
        loop {
            self.skip_ws();
            let pos = self.pos();
            match self.chars.peek().map(|(_, c)| *c) {
                Some(c) if c.is_ascii_digit() || c == '.' => coef *= self.number()?,
                Some('x') => {
                    self.chars.next();
                    let idx = self.digits().unwrap_or(1);
                    if idx == 0 || idx > self.dim {
                        return Err(self.err(pos, &format!("variable index {idx} outside 1..={}", self.dim)));
                    }
                    self.skip_ws();
                    let mut power = 1;
                    if self.chars.peek().is_some_and(|(_, c)| *c == '^') {
                        self.chars.next();
                        self.skip_ws();
                        let p = self.pos();
                        power = self.digits().ok_or_else(|| self.err(p, "expected exponent"))? as u32;
                    }
                    exps[idx - 1] += power;
                }
                _ => return Err(self.err(pos, "expected a number or a variable")),
            }
            self.skip_ws();
            if self.chars.peek().is_some_and(|(_, c)| *c == '*') {
                self.chars.next();
            } else {
                return Ok((coef, exps));
            }
        }
    }

    fn digits(&mut self) -> Option<usize> {
        let mut s = String::new();
        while let Some((_, c)) = self.chars.peek().copied().filter(|(_, c)| c.is_ascii_digit()) {
            s.push(c);
            self.chars.next();
        }
        s.parse().ok()
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos();
        let mut s = String::new();
        let mut prev = ' ';
        while let Some(&(_, c)) = self.chars.peek() {
            let accept = c.is_ascii_digit()
                || c == '.'
                || c == 'e'
                || c == 'E'
                || ((c == '-' || c == '+') && (prev == 'e' || prev == 'E'));
            if !accept {
                break;
            }
            s.push(c);
            prev = c;
            self.chars.next();
        }
        s.parse().map_err(|_| self.err(start, &format!("bad number '{s}'")))
    }
}
