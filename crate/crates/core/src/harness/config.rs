//! Experiment configuration, read from TOML or JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{MotionMode, SimulationLimits, DEFAULT_MAX_PARTICLES};
use crate::error::{LabError, Result};
use crate::hermite::{MultiIndex, SpectralFunction};
use crate::model::{ModelParams, Position, Regime};
use crate::poly::Polynomial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default = "default_dim")]
    pub d: usize,
    pub sigma: f64,
    pub mu: f64,
    pub lambda: f64,
    pub p: f64,
    /// Explicit regime, required when the parameters sit within rounding of the critical line.
    #[serde(default)]
    pub regime: Option<Regime>,
}

fn default_dim() -> usize {
    1
}

/// A test function as written in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunctionSpec {
    /// `[[coefficient, [exponents...]], ...]`
    Poly(Vec<(f64, Vec<u32>)>),
    /// `[[coefficient, [multi-index...]], ...]` in the orthonormal Hermite basis.
    Hermite(Vec<(f64, Vec<u32>)>),
    /// An expression such as `"x^2 + x"`.
    Expr(String),
}

impl TestFunctionSpec {
    pub fn build(&self, params: &ModelParams) -> Result<SpectralFunction> {
        let d = params.d();
        match self {
            TestFunctionSpec::Poly(terms) => {
                Polynomial::from_terms(d, terms.iter().cloned()).map(SpectralFunction::polynomial)
            }
            TestFunctionSpec::Hermite(terms) => {
                let terms: Vec<(f64, MultiIndex)> =
                    terms.iter().map(|(c, a)| (*c, MultiIndex::new(a.clone()))).collect();
                SpectralFunction::from_hermite(&terms, params)
            }
            TestFunctionSpec::Expr(s) => SpectralFunction::parse_polynomial(s, d),
        }
    }

    /// Parses the command-line shorthand `poly:<expr>` or `hermite:<i>[,<j>...]`.
    pub fn parse_shorthand(s: &str) -> Result<Self> {
        if let Some(expr) = s.strip_prefix("poly:") {
            Ok(TestFunctionSpec::Expr(expr.to_string()))
        } else if let Some(idx) = s.strip_prefix("hermite:") {
            let alpha = idx
                .split(',')
                .map(|t| t.trim().parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| LabError::Config(format!("bad Hermite index '{idx}': {e}")))?;
            Ok(TestFunctionSpec::Hermite(vec![(1.0, alpha)]))
        } else {
            Err(LabError::Config(format!(
                "test function '{s}' must start with 'poly:' or 'hermite:'"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    #[serde(default = "default_cap")]
    pub max_particles: usize,
}

fn default_cap() -> usize {
    DEFAULT_MAX_PARTICLES
}

impl Default for Caps {
    fn default() -> Self {
        Self { max_particles: DEFAULT_MAX_PARTICLES }
    }
}

/// How the terminal proxies `V_T`, `H_T` are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalMode {
    /// Simulate the full system up to the terminal time.
    #[default]
    Full,
    /// Simulate fully up to the last snapshot, then continue the population size alone with its
    /// exact transition law. Yields `V_T` but no `H_T`.
    MassOnly,
}

/// Pre-registered tolerances of the statistical verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative tolerance on the spatial variance; defaults to 0.10 (small) or 0.15 (critical).
    pub variance_rel: Option<f64>,
    /// Bound on absolute pairwise correlations of the limit triple.
    pub correlation_bound: f64,
    /// Standard errors allowed for moment and mean comparisons.
    pub se_multiplier: f64,
    /// Final median residual in the large regime, as a fraction of `sqrt(E H_inf^2)`.
    pub median_fraction: f64,
    /// Mean-square gap between the proxies at `T` and `T/2`, as a fraction of the target variance.
    pub proxy_gap: f64,
    /// Smallness threshold of the law-of-large-numbers residual, relative to the scale of `f`.
    pub lln_fraction: f64,
    /// Relative tolerance of pathwise coupling identities.
    pub coupling_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            variance_rel: None,
            correlation_bound: 0.05,
            se_multiplier: 4.0,
            median_fraction: 0.10,
            proxy_gap: 0.10,
            lln_fraction: 0.05,
            coupling_rel: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn variance_rel_for(&self, regime: Regime) -> f64 {
        self.variance_rel.unwrap_or(match regime {
            Regime::Critical => 0.15,
            _ => 0.10,
        })
    }
}

/// Experiment description; mirrors the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: ParamsConfig,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub test_functions: Vec<TestFunctionSpec>,
    pub snapshot_times: Vec<f64>,
    pub terminal_time: f64,
    pub replicas: usize,
    pub seed: u64,
    #[serde(default = "default_significance")]
    pub significance: f64,
    #[serde(default)]
    pub caps: Caps,
    /// Whether particle motion is simulated up to the last snapshot. `mass_only` suffices for
    /// population counts and `V_t`.
    #[serde(default)]
    pub motion: MotionMode,
    #[serde(default)]
    pub terminal_mode: TerminalMode,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Treat inconclusive verdicts (too few survivors) as acceptable.
    #[serde(default)]
    pub expect_inconclusive: bool,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_significance() -> f64 {
    0.01
}

/// Least number of replicas for a statistical verdict.
pub const MIN_REPLICAS_FOR_VERDICT: usize = 100;

impl ExperimentConfig {
    /// Reads a configuration file; `.json` files are parsed as JSON, everything else as TOML.
    /// Parse errors carry the file name and the line and column of the problem.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Self::from_json(&text).map_err(|e| prefix(path, e))
        } else {
            Self::from_toml(&text).map_err(|e| prefix(path, e))
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let loc = e
                .span()
                .map(|s| {
                    let (line, col) = line_col(text, s.start);
                    format!("line {line}, column {col}: ")
                })
                .unwrap_or_default();
            LabError::Config(format!("{loc}{}", e.message()))
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            LabError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    /// Checks the configuration and builds the model objects it describes.
    pub fn validate(&self) -> Result<ValidatedConfig> {
        let pc = &self.params;
        let mut params = ModelParams::new(pc.d, pc.sigma, pc.mu, pc.lambda, pc.p)
            .map_err(|e| LabError::Config(format!("params: {e}")))?;
        match pc.regime {
            Some(r) => {
                params = params.pin_regime(r).map_err(|e| LabError::Config(format!("params.regime: {e}")))?;
            }
            None if params.is_ambiguous() => {
                return Err(LabError::Config(
                    "params: lambda_p is within 1e-12 (relative) of 2 mu but not equal; \
                     set params.regime to pin the regime"
                        .into(),
                ));
            }
            None => {}
        }
        let x0 = match &self.x0 {
            Some(v) => Position::new(v.clone()).map_err(|e| LabError::Config(format!("x0: {e}")))?,
            None => Position::origin(params.d()),
        };
        if x0.dim() != params.d() {
            return Err(LabError::Config(format!(
                "x0: expected {} coordinates, got {}",
                params.d(),
                x0.dim()
            )));
        }
        let functions = self
            .test_functions
            .iter()
            .enumerate()
            .map(|(i, s)| s.build(&params).map_err(|e| LabError::Config(format!("test_functions[{i}]: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let times = &self.snapshot_times;
        if times.is_empty() {
            return Err(LabError::Config("snapshot_times: at least one time is required".into()));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LabError::Config(
                "snapshot_times: must be finite, nonnegative and strictly increasing".into(),
            ));
        }
        let last = *times.last().expect("nonempty");
        if !(self.terminal_time.is_finite() && self.terminal_time > last) {
            return Err(LabError::Config(format!(
                "terminal_time: must exceed the last snapshot time {last}"
            )));
        }
        if self.replicas == 0 {
            return Err(LabError::Config("replicas: must be positive".into()));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(LabError::Config("significance: must lie in (0, 1)".into()));
        }
        if self.caps.max_particles == 0 {
            return Err(LabError::Config("caps.max_particles: must be positive".into()));
        }
        if self.motion == MotionMode::MassOnly && !functions.is_empty() {
            return Err(LabError::Config(
                "motion: test functions need particle positions; use motion = \"full\"".into(),
            ));
        }
        if self.threads == Some(0) {
            return Err(LabError::Config("threads: must be positive".into()));
        }
        Ok(ValidatedConfig { raw: self.clone(), params, x0, functions })
    }
}

fn prefix(path: &Path, e: LabError) -> LabError {
    match e {
        LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// A configuration that passed validation, with its model objects built.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub raw: ExperimentConfig,
    pub params: ModelParams,
    pub x0: Position,
    pub functions: Vec<SpectralFunction>,
}

impl ValidatedConfig {
    pub fn limits(&self) -> SimulationLimits {
        SimulationLimits { max_particles: self.raw.caps.max_particles }
    }

    pub fn last_snapshot(&self) -> f64 {
        *self.raw.snapshot_times.last().expect("validated nonempty")
    }

    /// Whether the terminal time leaves `5 / lambda_p` after the last snapshot.
    pub fn has_proxy_margin(&self) -> bool {
        self.raw.terminal_time >= self.last_snapshot() + 5.0 / self.params.lambda_p()
    }
}
