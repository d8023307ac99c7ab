//! Closed-form and semi-analytic ground truth.

pub mod gw;
pub mod hinf;
pub mod recursion;

use serde::Serialize;

pub use gw::{
    fourth_moment_by_differentiation, gw_laplace, normalized_laplace, population_moment,
    sample_count, vinf_conditional_cdf, vinf_laplace, GwLaw,
};
pub use hinf::{hinf_moment, hinf_moment_displayed};
pub use recursion::{
    moment_recursion, moment_recursion_all, second_moment_quadrature, RecursionGrid,
    RecursionResult,
};

use crate::error::Result;
use crate::hermite::{gradient_mean, sigma2_critical, sigma2_small, SpectralFunction};
use crate::model::{ModelParams, Regime};

/// A named oracle value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleEntry {
    pub name: String,
    pub value: f64,
}

/// Oracle values for one parameter set, exportable as JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleTable {
    pub params: ModelParams,
    pub entries: Vec<OracleEntry>,
}

impl OracleTable {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("oracle table serialises")
    }

    fn push(&mut self, name: impl Into<String>, value: f64) {
        self.entries.push(OracleEntry { name: name.into(), value });
    }
}

/// Every oracle that applies to `params`, with regime-specific variances for `f`.
pub fn oracle_table(params: &ModelParams, f: Option<&SpectralFunction>) -> Result<OracleTable> {
    let law = GwLaw::new(params);
    let mut table = OracleTable { params: *params, entries: Vec::new() };
    table.push("lambda_p", params.lambda_p());
    table.push("extinction_probability", law.extinction_probability());
    table.push("vinf_mean", law.vinf_mean());
    table.push("vinf_variance", law.vinf_variance());
    table.push("vinf_conditional_rate", law.vinf_rate());
    table.push("vinf_conditional_mean", law.vinf_conditional_mean());
    if params.regime() == Regime::Large && params.p() == 1.0 && params.d() == 1 {
        table.push("gamma", params.gamma());
        for k in [2, 4, 6] {
            table.push(format!("hinf_moment_{k}"), hinf_moment(k, params)?);
        }
    }
    if let Some(f) = f {
        match params.regime() {
            Regime::Small => {
                let s = sigma2_small(f, params)?;
                table.push("sigma2_small", s.value);
                table.push("sigma2_small_tail_bound", s.tail_bound);
            }
            Regime::Critical => {
                let c = sigma2_critical(f, params)?;
                table.push("sigma2_critical", c.value);
                table.push("sigma2_critical_hermite_path", c.hermite_path);
            }
            Regime::Large => {}
        }
        for (i, g) in gradient_mean(f, params)?.into_iter().enumerate() {
            table.push(format!("gradient_mean_{}", i + 1), g);
        }
    }
    Ok(table)
}
