//! Quick internal consistency checks, run by `bou-lab selftest`.

use crate::engine::{simulate, simulate_coupled, SimulationLimits, SimulationOptions};
use crate::error::Result;
use crate::hermite::{eigenfunction_eval, hermite_coefficients, MultiIndex, SpectralFunction};
use crate::model::{ModelParams, Position};
use crate::oracles::{gw_laplace, population_moment, vinf_conditional_cdf, GwLaw};
use crate::ou_kernel::{equilibrium_density, ou_semigroup_apply, ou_transition_sample};
use crate::rng::{derive_stream, NormalSource, ReplicaStreams, StreamPurpose};
use crate::stats::ks_statistic;

use super::config::{ExperimentConfig, ParamsConfig, TerminalMode};
use super::ensemble::run_ensemble;
use super::report::{ExperimentReport, Verdict};

fn exact(name: &str, got: f64, want: f64, tol: f64) -> Verdict {
    Verdict::within(name, got, want, tol, None)
}

/// Runs the checks; the report fails if any of them does.
pub fn selftest() -> Result<ExperimentReport> {
    let mut r = ExperimentReport::new("selftest");
    let params = ModelParams::new(2, 1.0, 1.0, 1.0, 0.75)?;
    r.params = Some(params);
    r.regime = Some(params.regime());
    let x = Position::new(vec![0.3, -1.2])?;

    let mut normals = NormalSource::new(derive_stream(0, 0, StreamPurpose::Auxiliary));
    let moved = ou_transition_sample(&params, &x, 0.0, &mut normals)?;
    r.push(exact("transition over zero time", (moved[0] - x[0]).abs() + (moved[1] - x[1]).abs(), 0.0, 0.0));
    let minus = Position::new(vec![-0.3, 1.2])?;
    r.push(exact(
        "density symmetry",
        equilibrium_density(&params, &x)?,
        equilibrium_density(&params, &minus)?,
        0.0,
    ));
    let one = SpectralFunction::constant(2, 1.0);
    r.push(exact("semigroup fixes constants", ou_semigroup_apply(&one, 1.5, &x, &params)?, 1.0, 1e-12));
    r.push(exact("zeroth eigenfunction", eigenfunction_eval(&MultiIndex::zero(2), &x, &params), 1.0, 0.0));
    let coeffs = hermite_coefficients(&one, 4, &params)?;
    r.push(exact("constant has no centred coefficients", coeffs.centered_norm2, 0.0, 1e-12));

    let law = GwLaw::new(&params);
    r.push(exact("Laplace transform at theta = 0", gw_laplace(3.0, 0.0, &law)?, 1.0, 1e-15));
    r.push(exact("Laplace transform at t = 0", gw_laplace(0.0, 0.7, &law)?, (-0.7f64).exp(), 1e-15));
    r.push(exact("fourth moment at t = 0", population_moment(0.0, 4, &law)?, 1.0, 1e-15));
    r.push(exact("V_inf cdf at 0", vinf_conditional_cdf(0.0, &law), 0.0, 0.0));

    let mut streams = ReplicaStreams::new(1, 0);
    let s = simulate(&params, &x, &[0.0, 1.0], 0, &mut streams, SimulationLimits::default())?;
    r.push(exact("initial count", s.snapshots[0].count as f64, 1.0, 0.0));
    r.push(exact("initial V", s.snapshots[0].v_value, 1.0, 0.0));

    let origin = Position::origin(2);
    let mut streams = ReplicaStreams::new(2, 0);
    let (a, b) = simulate_coupled(&params, &origin, &[2.0], 0, &mut streams, &SimulationOptions::default())?;
    let same = a.snapshots == b.snapshots;
    r.push(exact("coupling from the origin is the identity", if same { 0.0 } else { 1.0 }, 0.0, 0.0));

    let ks = ks_statistic(&vec![0.0; 60], |_| 1.0, 0.01)?;
    r.push(Verdict::at_most("degenerate KS sample is rejected", -ks.distance, -0.5));

    let cfg = ExperimentConfig {
        params: ParamsConfig { d: 1, sigma: 1.0, mu: 1.0, lambda: 1.0, p: 0.75, regime: None },
        x0: None,
        test_functions: Vec::new(),
        snapshot_times: vec![0.0, 1.0],
        terminal_time: 2.0,
        replicas: 100,
        seed: 11,
        significance: 0.01,
        caps: Default::default(),
        motion: Default::default(),
        terminal_mode: TerminalMode::MassOnly,
        tolerances: Default::default(),
        expect_inconclusive: false,
        threads: None,
    }
    .validate()?;
    let e1 = run_ensemble(&cfg)?;
    let ids_ok = e1.members.iter().enumerate().all(|(i, m)| m.sample.replica_id == i as u64);
    r.push(exact("replica ids distinct and ordered", if ids_ok { 0.0 } else { 1.0 }, 0.0, 0.0));
    let e2 = run_ensemble(&cfg)?;
    let same = e1.members == e2.members;
    r.push(exact("ensembles reproducible", if same { 0.0 } else { 1.0 }, 0.0, 0.0));
    r.replicas = e1.len();
    r.survivors = e1.survivor_count();
    Ok(r)
}
