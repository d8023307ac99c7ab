//! Model parameters, regime classification and particle positions.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Relative tolerance inside which `lambda_p == 2 mu` is treated as the critical case.
pub const CRITICAL_REL_TOL: f64 = 1e-12;

/// Second-order behaviour of the system, decided by the sign of `lambda_p - 2 mu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Small,
    Critical,
    Large,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Small => "small",
            Regime::Critical => "critical",
            Regime::Large => "large",
        })
    }
}

/// Physical and branching parameters of the branching OU system.
///
/// Particles move as OU processes with generator `0.5 sigma^2 Laplacian - mu x . grad`,
/// branch at rate `lambda` into two (probability `p`) or die (probability `1 - p`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    d: usize,
    sigma: f64,
    mu: f64,
    lambda: f64,
    p: f64,
    lambda_p: f64,
    regime: Regime,
}

impl ModelParams {
    pub fn new(d: usize, sigma: f64, mu: f64, lambda: f64, p: f64) -> Result<Self> {
        if d == 0 {
            return Err(LabError::Parameter("dimension d must be at least 1".into()));
        }
        for (name, value) in [("sigma", sigma), ("mu", mu), ("lambda", lambda)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(LabError::Parameter(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if !(p.is_finite() && p > 0.5 && p <= 1.0) {
            return Err(LabError::Parameter(format!(
                "offspring probability p must lie in (1/2, 1], got {p}"
            )));
        }
        let lambda_p = (2.0 * p - 1.0) * lambda;
        Ok(Self {
            d,
            sigma,
            mu,
            lambda,
            p,
            lambda_p,
            regime: classify(lambda_p, mu),
        })
    }

    /// Overrides the computed regime with an explicitly pinned one. Only pins that agree with
    /// the sign of `lambda_p - 2 mu`, or any pin inside the critical tolerance band, are accepted.
    pub fn pin_regime(mut self, regime: Regime) -> Result<Self> {
        let consistent = if self.near_critical_boundary() {
            true
        } else {
            regime == self.regime
        };
        if !consistent {
            return Err(LabError::Regime {
                required: regime,
                actual: self.regime,
            });
        }
        self.regime = regime;
        Ok(self)
    }

    /// True when `lambda_p` and `2 mu` differ, but by less than the critical tolerance. Such
    /// parameter sets are accepted by the library as critical; front ends should ask for a pin.
    pub fn is_ambiguous(&self) -> bool {
        self.lambda_p != 2.0 * self.mu && self.near_critical_boundary()
    }

    fn near_critical_boundary(&self) -> bool {
        (self.lambda_p - 2.0 * self.mu).abs() <= CRITICAL_REL_TOL * 2.0 * self.mu
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    /// Malthusian growth rate `(2p - 1) lambda`.
    pub fn lambda_p(&self) -> f64 {
        self.lambda_p
    }
    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// Per-coordinate variance `sigma^2 / (2 mu)` of the equilibrium measure.
    pub fn equilibrium_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.mu)
    }

    /// Extinction probability `(1 - p) / p` of the underlying Galton-Watson process.
    pub fn extinction_probability(&self) -> f64 {
        (1.0 - self.p) / self.p
    }

    /// `gamma = (lambda_p / mu - 2)^-1`, finite in the large regime.
    pub fn gamma(&self) -> f64 {
        1.0 / (self.lambda_p / self.mu - 2.0)
    }

    pub(crate) fn require(&self, regime: Regime) -> Result<()> {
        if self.regime == regime {
            Ok(())
        } else {
            Err(LabError::Regime {
                required: regime,
                actual: self.regime,
            })
        }
    }
}

fn classify(lambda_p: f64, mu: f64) -> Regime {
    let gap = lambda_p - 2.0 * mu;
    if gap.abs() <= CRITICAL_REL_TOL * 2.0 * mu {
        Regime::Critical
    } else if gap < 0.0 {
        Regime::Small
    } else {
        Regime::Large
    }
}

/// A point of `R^d` with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Position(Vec<f64>);

impl Position {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(LabError::Parameter("position must have at least one coordinate".into()));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(LabError::Parameter(format!("non-finite coordinate {bad}")));
        }
        Ok(Self(coords))
    }

    pub fn origin(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub(crate) fn check_dim(&self, params: &ModelParams) -> Result<()> {
        if self.dim() == params.d() {
            Ok(())
        } else {
            Err(LabError::Parameter(format!(
                "position has {} coordinates, model dimension is {}",
                self.dim(),
                params.d()
            )))
        }
    }
}

impl Deref for Position {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Position {
    type Error = LabError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Position::new(v)
    }
}

impl From<Position> for Vec<f64> {
    fn from(p: Position) -> Self {
        p.0
    }
}
