use thiserror::Error;

use crate::model::Regime;

/// Errors raised by the simulation engine, the oracles and the harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("operation requires the {required} regime but the parameters are in the {actual} regime")]
    Regime { required: Regime, actual: Regime },

    /// A numerical routine could not certify the requested accuracy. `estimate` is the best
    /// value obtained, `alternative` the competing estimate used to judge convergence.
    #[error("tolerance {requested:e} not met (achieved {achieved:e}); estimate {estimate}, alternative {alternative}")]
    Tolerance {
        requested: f64,
        achieved: f64,
        estimate: f64,
        alternative: f64,
    },

    #[error("population reached {count} particles (cap {cap}) at time {time}")]
    Resource { count: usize, cap: usize, time: f64 },

    #[error("replica {replica}: {source}")]
    Replica {
        replica: u64,
        #[source]
        source: Box<LabError>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("too few samples: need at least {required}, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("configuration: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl LabError {
    /// True when the error (possibly wrapped with a replica id) is a population cap hit.
    pub fn is_resource(&self) -> bool {
        match self {
            LabError::Resource { .. } => true,
            LabError::Replica { source, .. } => source.is_resource(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
