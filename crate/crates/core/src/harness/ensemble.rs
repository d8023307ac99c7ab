//! Independent replicas run in parallel, with terminal proxies of the martingale limits.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{simulate_with, ReplicaSample, SimulationOptions};
use crate::error::{LabError, Result};
use crate::oracles::{sample_count, GwLaw};
use crate::rng::{derive_stream, ReplicaStreams, StreamPurpose};

use super::config::{TerminalMode, ValidatedConfig};

/// Population count and martingale values at a proxy time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerminalProxy {
    pub time: f64,
    pub count: u64,
    /// `exp(-lambda_p T) |X_T|`, the proxy for `V_inf`.
    pub v: f64,
    /// `H_T`, the proxy for `H_inf`; absent when only the population size was continued.
    pub h: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleMember {
    pub sample: ReplicaSample,
    pub terminal: TerminalProxy,
    /// Same proxy at `T/2`, used to check that the proxy has settled.
    pub half: TerminalProxy,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    /// Sorted by replica id.
    pub members: Vec<EnsembleMember>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn survivors(&self) -> impl Iterator<Item = &EnsembleMember> {
        self.members.iter().filter(|m| m.sample.survived)
    }

    pub fn survivor_count(&self) -> usize {
        self.survivors().count()
    }
}

/// Runs `cfg.replicas` independent replicas. Replica `i` draws from streams derived from
/// `(seed, i)` only, so results do not depend on the thread count or scheduling. If any replica
/// fails, the error of the lowest failing replica id is returned, wrapped with that id.
pub fn run_ensemble(cfg: &ValidatedConfig) -> Result<Ensemble> {
    let work = || -> Vec<Result<EnsembleMember>> {
        (0..cfg.raw.replicas as u64)
            .into_par_iter()
            .map(|id| {
                run_member(cfg, id).map_err(|e| LabError::Replica { replica: id, source: Box::new(e) })
            })
            .collect()
    };
    let results = match cfg.raw.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| LabError::Config(format!("threads: {e}")))?
            .install(work),
        None => work(),
    };
    let members = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { members })
}

/// Runs a single replica of the ensemble described by `cfg`.
pub fn run_member(cfg: &ValidatedConfig, replica_id: u64) -> Result<EnsembleMember> {
    let params = &cfg.params;
    let snaps = &cfg.raw.snapshot_times;
    let last = cfg.last_snapshot();
    let t_end = cfg.raw.terminal_time;
    let t_half = 0.5 * t_end;
    let mut times: Vec<f64> = snaps.clone();
    match cfg.raw.terminal_mode {
        TerminalMode::Full => times.extend([t_half, t_end]),
        TerminalMode::MassOnly if t_half <= last => times.push(t_half),
        TerminalMode::MassOnly => {}
    }
    times.sort_by(f64::total_cmp);
    times.dedup();

    let opts = SimulationOptions {
        limits: cfg.limits(),
        motion: cfg.raw.motion,
        test_functions: &cfg.functions,
        keep_positions: false,
        record_events: false,
    };
    let mut streams = ReplicaStreams::new(cfg.raw.seed, replica_id);
    let mut sample = simulate_with(params, &cfg.x0, &times, replica_id, &mut streams, &opts)?;

    let proxy_at = |sample: &ReplicaSample, t: f64| -> Option<TerminalProxy> {
        sample.snapshots.iter().find(|s| s.time == t).map(|s| TerminalProxy {
            time: t,
            count: s.count as u64,
            v: s.v_value,
            h: (!s.h_value.is_empty()).then(|| s.h_value.clone()),
        })
    };
    let lp = params.lambda_p();
    let (half, terminal) = match cfg.raw.terminal_mode {
        TerminalMode::Full => (
            proxy_at(&sample, t_half).expect("half time simulated"),
            proxy_at(&sample, t_end).expect("terminal time simulated"),
        ),
        TerminalMode::MassOnly => {
            let law = GwLaw::new(params);
            let mut rng = derive_stream(cfg.raw.seed, replica_id, StreamPurpose::Continuation);
            let last_count = sample.snapshots.iter().find(|s| s.time == last).expect("snapshot").count as u64;
            let half = match proxy_at(&sample, t_half) {
                Some(p) => TerminalProxy { h: None, ..p },
                None => {
                    let n = sample_count(last_count, t_half - last, &law, &mut rng)?;
                    TerminalProxy { time: t_half, count: n, v: (-lp * t_half).exp() * n as f64, h: None }
                }
            };
            let (from_t, from_n) = if t_half > last { (t_half, half.count) } else { (last, last_count) };
            let n = sample_count(from_n, t_end - from_t, &law, &mut rng)?;
            (half, TerminalProxy { time: t_end, count: n, v: (-lp * t_end).exp() * n as f64, h: None })
        }
    };

    // Keep only the requested snapshots in the sample.
    if sample.snapshots.len() != snaps.len() {
        let keep: Vec<bool> = sample.snapshots.iter().map(|s| snaps.contains(&s.time)).collect();
        let mut it = keep.iter();
        sample.snapshots.retain(|_| *it.next().expect("same length"));
        let mut it = keep.iter();
        sample.functionals.retain(|_| *it.next().expect("same length"));
        sample.survived = sample.snapshots.last().is_some_and(|s| s.count > 0);
    }
    Ok(EnsembleMember { sample, terminal, half })
}
