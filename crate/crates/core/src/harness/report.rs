//! Verdicts, reports and output artifacts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::model::{ModelParams, Regime};
use crate::stats::{Estimate, KsResult};

use super::ensemble::Ensemble;

/// First line of every CSV file written by this crate.
pub const CSV_SCHEMA_LINE: &str = "# bou-lab schema v1";

/// Outcome of one pre-registered comparison. `passed` is `None` when the comparison was not
/// attempted, typically because too few replicas survived.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub empirical: f64,
    pub oracle: f64,
    pub tolerance: f64,
    pub se: Option<f64>,
    pub passed: Option<bool>,
    pub note: String,
}

impl Verdict {
    /// `|empirical - oracle| <= tolerance`.
    pub fn within(name: impl Into<String>, empirical: f64, oracle: f64, tolerance: f64, se: Option<f64>) -> Self {
        let passed = (empirical - oracle).abs() <= tolerance;
        Self { name: name.into(), empirical, oracle, tolerance, se, passed: Some(passed), note: String::new() }
    }

    /// `|estimate - oracle| <= k se`.
    pub fn within_se(name: impl Into<String>, est: Estimate, oracle: f64, k: f64) -> Self {
        Self::within(name, est.value, oracle, k * est.se, Some(est.se))
    }

    /// `empirical <= bound`.
    pub fn at_most(name: impl Into<String>, empirical: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            empirical,
            oracle: bound,
            tolerance: 0.0,
            se: None,
            passed: Some(empirical <= bound),
            note: String::new(),
        }
    }

    /// A KS test passes when it does not reject at the configured significance.
    pub fn ks(name: impl Into<String>, ks: &KsResult) -> Self {
        Self {
            name: name.into(),
            empirical: ks.distance,
            oracle: 0.0,
            tolerance: ks.threshold_at_significance,
            se: None,
            passed: Some(!ks.rejects()),
            note: format!("n = {}, p = {}", ks.n, format_number(ks.p_value)),
        }
    }

    pub fn inconclusive(name: impl Into<String>, note: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            empirical: f64::NAN,
            oracle: f64::NAN,
            tolerance: f64::NAN,
            se: None,
            passed: None,
            note: note.into(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        let note = note.into();
        self.note = if self.note.is_empty() { note } else { format!("{}; {note}", self.note) };
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedKs {
    pub name: String,
    #[serde(flatten)]
    pub result: KsResult,
}

/// Everything an experiment produces besides the raw replicas.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub params: Option<ModelParams>,
    pub regime: Option<Regime>,
    pub replicas: usize,
    pub survivors: usize,
    pub seed: Option<u64>,
    pub expect_inconclusive: bool,
    pub verdicts: Vec<Verdict>,
    pub estimates: BTreeMap<String, Estimate>,
    pub ks: Vec<NamedKs>,
    pub correlation_matrix: Option<Vec<Vec<f64>>>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            params: None,
            regime: None,
            replicas: 0,
            survivors: 0,
            seed: None,
            expect_inconclusive: false,
            verdicts: Vec::new(),
            estimates: BTreeMap::new(),
            ks: Vec::new(),
            correlation_matrix: None,
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, v: Verdict) {
        self.verdicts.push(v);
    }

    pub fn estimate(&mut self, name: impl Into<String>, e: Estimate) {
        self.estimates.insert(name.into(), e);
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    /// Fail if any verdict failed; inconclusive if any was not attempted and that was not
    /// expected; pass otherwise.
    pub fn status(&self) -> Status {
        if self.verdicts.iter().any(|v| v.passed == Some(false)) {
            Status::Fail
        } else if !self.expect_inconclusive && self.verdicts.iter().any(|v| v.passed.is_none()) {
            Status::Inconclusive
        } else {
            Status::Pass
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Human-readable table of the verdicts.
    pub fn summary(&self) -> String {
        let mut out = format!("experiment: {}\n", self.experiment);
        if let Some(p) = &self.params {
            out.push_str(&format!(
                "params: d={} sigma={} mu={} lambda={} p={} regime={}\n",
                p.d(),
                format_number(p.sigma()),
                format_number(p.mu()),
                format_number(p.lambda()),
                format_number(p.p()),
                p.regime()
            ));
        }
        out.push_str(&format!("replicas: {}  survivors: {}\n", self.replicas, self.survivors));
        let w = self.verdicts.iter().map(|v| v.name.len()).max().unwrap_or(4).max(7);
        out.push_str(&format!(
            "{:<w$}  {:>22}  {:>22}  {:>22}  {:<12}  note\n",
            "verdict", "empirical", "oracle", "tolerance", "result"
        ));
        for v in &self.verdicts {
            let result = match v.passed {
                Some(true) => "pass",
                Some(false) => "FAIL",
                None => "inconclusive",
            };
            out.push_str(&format!(
                "{:<w$}  {:>22}  {:>22}  {:>22}  {:<12}  {}\n",
                v.name,
                format_number(v.empirical),
                format_number(v.oracle),
                format_number(v.tolerance),
                result,
                v.note
            ));
        }
        for (k, e) in &self.estimates {
            out.push_str(&format!("estimate {k}: {} (se {})\n", format_number(e.value), format_number(e.se)));
        }
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        let status = match self.status() {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
        };
        out.push_str(&format!("status: {status}\n"));
        out
    }
}

/// Formats a number with 15 significant digits, dropping trailing zeros.
pub fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.14e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, digits) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m.replace('.', "")),
        None => ("", mantissa.replace('.', "")),
    };
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };
    if (-5..15).contains(&exp) {
        let point = exp + 1;
        let body = if point <= 0 {
            format!("0.{}{}", "0".repeat((-point) as usize), digits)
        } else if point as usize >= digits.len() {
            format!("{}{}", digits, "0".repeat(point as usize - digits.len()))
        } else {
            format!("{}.{}", &digits[..point as usize], &digits[point as usize..])
        };
        format!("{sign}{body}")
    } else {
        let rest = &digits[1..];
        if rest.is_empty() {
            format!("{sign}{}e{exp}", &digits[..1])
        } else {
            format!("{sign}{}.{}e{exp}", &digits[..1], rest)
        }
    }
}

/// Writes one row per replica and snapshot, followed by the proxy rows at `T/2` and `T`.
/// Values are written in shortest round-trip form.
pub fn write_replicas_csv<W: Write>(ensemble: &Ensemble, d: usize, n_functions: usize, mut out: W) -> Result<()> {
    out.write_all(format!("{CSV_SCHEMA_LINE}\n").as_bytes())?;
    let mut w = csv::WriterBuilder::new().from_writer(out);
    let mut header = vec!["replica_id".to_string(), "kind".into(), "time".into(), "count".into(), "v".into()];
    header.extend((1..=d).map(|i| format!("h_{i}")));
    header.extend((1..=n_functions).map(|i| format!("f_{i}")));
    header.push("survived".into());
    w.write_record(&header).map_err(csv_err)?;
    for m in &ensemble.members {
        let s = &m.sample;
        for (snap, funcs) in s.snapshots.iter().zip(&s.functionals) {
            let mut row = vec![s.replica_id.to_string(), "snapshot".into(), snap.time.to_string()];
            row.push(snap.count.to_string());
            row.push(snap.v_value.to_string());
            row.extend(pad(snap.h_value.iter().map(f64::to_string), d));
            row.extend(pad(funcs.iter().map(f64::to_string), n_functions));
            row.push(s.survived.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        for (kind, p) in [("proxy_half", &m.half), ("proxy_terminal", &m.terminal)] {
            let mut row = vec![s.replica_id.to_string(), kind.into(), p.time.to_string()];
            row.push(p.count.to_string());
            row.push(p.v.to_string());
            let h = p.h.as_deref().unwrap_or(&[]);
            row.extend(pad(h.iter().map(f64::to_string), d));
            row.extend(pad(std::iter::empty(), n_functions));
            row.push(s.survived.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn pad<I: Iterator<Item = String>>(it: I, n: usize) -> Vec<String> {
    let mut v: Vec<String> = it.take(n).collect();
    v.resize(n, String::new());
    v
}

fn csv_err(e: csv::Error) -> crate::error::LabError {
    crate::error::LabError::Io(e.to_string())
}

/// Writes `report.json` and `summary.txt`, plus `replicas.csv` when an ensemble is given.
pub fn write_artifacts(
    dir: &Path,
    report: &ExperimentReport,
    ensemble: Option<(&Ensemble, usize, usize)>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    std::fs::write(dir.join("summary.txt"), report.summary())?;
    if let Some((e, d, nf)) = ensemble {
        let file = std::fs::File::create(dir.join("replicas.csv"))?;
        write_replicas_csv(e, d, nf, std::io::BufWriter::new(file))?;
    }
    Ok(())
}
