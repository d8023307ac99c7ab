//! Experiment orchestration.

pub mod config;
pub mod ensemble;
pub mod experiments;
pub mod report;
pub mod selftest;

pub use config::{ExperimentConfig, TerminalMode, TestFunctionSpec, Tolerances, ValidatedConfig};
pub use ensemble::{run_ensemble, run_member, Ensemble, EnsembleMember, TerminalProxy};
pub use experiments::{clt_experiment, coupling_experiment, gw_experiment, lln_experiment, MIN_SURVIVORS};
pub use selftest::selftest;
pub use report::{format_number, write_artifacts, write_replicas_csv, ExperimentReport, Status, Verdict};
