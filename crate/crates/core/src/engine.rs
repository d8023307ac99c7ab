//! Exact event-driven simulation of the branching OU system.
//!
//! The next event happens after an `Exp(lambda n)` waiting time, where `n` is the current
//! population; the affected particle is chosen uniformly and then splits (probability `p`) or
//! dies. Particle positions are advanced lazily: each particle remembers when it was last moved
//! and is sampled exactly from the OU transition when it branches or when a snapshot is taken.
//! Snapshot times win ties against events.
//!
//! Randomness is split per replica into a genealogy stream (clocks, particle choice, offspring
//! coin) and a motion stream (Gaussian innovations), see [`crate::rng`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::hermite::SpectralFunction;
use crate::model::{ModelParams, Position, Regime};
use crate::ou_kernel::{equilibrium_expectation, transition_coefficients};
use crate::rng::{exponential, ReplicaStreams};
use crate::stats::neumaier_sum;

pub const DEFAULT_MAX_PARTICLES: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimulationLimits {
    pub max_particles: usize,
}

impl Default for SimulationLimits {
    fn default() -> Self {
        Self { max_particles: DEFAULT_MAX_PARTICLES }
    }
}

/// Whether particle motion is simulated. `MassOnly` runs the genealogy alone, which is all that
/// population counts and `V_t` depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionMode {
    #[default]
    Full,
    MassOnly,
}

#[derive(Debug, Clone)]
pub struct SimulationOptions<'a> {
    pub limits: SimulationLimits,
    pub motion: MotionMode,
    /// Functions `f` whose population sums `<X_t, f>` are recorded at every snapshot.
    pub test_functions: &'a [SpectralFunction],
    /// Keep all particle positions in the snapshots.
    pub keep_positions: bool,
    /// Keep the list of population changes.
    pub record_events: bool,
}

impl Default for SimulationOptions<'_> {
    fn default() -> Self {
        Self {
            limits: SimulationLimits::default(),
            motion: MotionMode::Full,
            test_functions: &[],
            keep_positions: true,
            record_events: false,
        }
    }
}

/// The population at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub time: f64,
    pub count: usize,
    /// `exp(-lambda_p t) |X_t|`.
    pub v_value: f64,
    /// `exp((mu - lambda_p) t) sum_i X_t(i)`; empty when motion is not simulated.
    pub h_value: Vec<f64>,
    /// Largest particle norm, a range diagnostic; 0 for an empty population.
    pub max_norm: f64,
    dim: usize,
    positions: Option<Vec<f64>>,
}

impl Snapshot {
    /// Builds a snapshot from explicit positions, deriving `V` and `H`.
    pub fn from_positions(time: f64, params: &ModelParams, positions: &[Position]) -> Result<Self> {
        let d = params.d();
        let mut flat = Vec::with_capacity(positions.len() * d);
        for p in positions {
            p.check_dim(params)?;
            flat.extend_from_slice(p);
        }
        Ok(Self::build(time, params, d, &flat, d, 0, true, true))
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        time: f64,
        params: &ModelParams,
        d: usize,
        state: &[f64],
        stride: usize,
        offset: usize,
        motion: bool,
        keep: bool,
    ) -> Self {
        let count = if stride == 0 { 0 } else { state.len() / stride };
        let v_value = (-params.lambda_p() * time).exp() * count as f64;
        let (h_value, max_norm, positions) = if motion {
            let h_scale = ((params.mu() - params.lambda_p()) * time).exp();
            let h_value = (0..d)
                .map(|j| h_scale * neumaier_sum(state.chunks_exact(stride).map(|b| b[offset + j])))
                .collect();
            let max_norm = state
                .chunks_exact(stride)
                .map(|b| b[offset..offset + d].iter().map(|c| c * c).sum::<f64>())
                .fold(0.0, f64::max)
                .sqrt();
            let positions = keep.then(|| {
                state
                    .chunks_exact(stride)
                    .flat_map(|b| b[offset..offset + d].iter().copied())
                    .collect()
            });
            (h_value, max_norm, positions)
        } else {
            (Vec::new(), 0.0, None)
        };
        Self { time, count, v_value, h_value, max_norm, dim: d, positions }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Particle positions as coordinate slices, if they were kept.
    pub fn positions(&self) -> Option<std::slice::ChunksExact<'_, f64>> {
        self.positions.as_ref().map(|p| p.chunks_exact(self.dim))
    }

    pub fn has_positions(&self) -> bool {
        self.positions.is_some()
    }

    /// Recomputes `(V, H)` from time, count and positions.
    pub fn recompute_martingales(&self, params: &ModelParams) -> (f64, Option<Vec<f64>>) {
        let v = (-params.lambda_p() * self.time).exp() * self.count as f64;
        let h = self.positions().map(|ps| {
            let scale = ((params.mu() - params.lambda_p()) * self.time).exp();
            (0..self.dim)
                .map(|j| scale * neumaier_sum(ps.clone().map(|x| x[j])))
                .collect()
        });
        (v, h)
    }
}

/// A population change: `+1` for a split, `-1` for a death.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PopulationEvent {
    pub time: f64,
    pub delta: i8,
}

/// Observables of one replica.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaSample {
    pub replica_id: u64,
    pub snapshots: Vec<Snapshot>,
    /// `functionals[s][k] = <X_{t_s}, f_k>`.
    pub functionals: Vec<Vec<f64>>,
    /// Population alive at the last snapshot.
    pub survived: bool,
    pub events: Option<Vec<PopulationEvent>>,
}

fn validate_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(LabError::Parameter("at least one snapshot time is required".into()));
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(LabError::Parameter("snapshot times must be finite and nonnegative".into()));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LabError::Parameter("snapshot times must be strictly increasing".into()));
    }
    Ok(())
}

/// Simulates one replica with default options (full motion, positions kept).
pub fn simulate(
    params: &ModelParams,
    x0: &Position,
    snapshot_times: &[f64],
    replica_id: u64,
    streams: &mut ReplicaStreams,
    limits: SimulationLimits,
) -> Result<ReplicaSample> {
    let opts = SimulationOptions { limits, ..Default::default() };
    simulate_with(params, x0, snapshot_times, replica_id, streams, &opts)
}

pub fn simulate_with(
    params: &ModelParams,
    x0: &Position,
    snapshot_times: &[f64],
    replica_id: u64,
    streams: &mut ReplicaStreams,
    opts: &SimulationOptions<'_>,
) -> Result<ReplicaSample> {
    let mut out = run(params, &[x0], snapshot_times, replica_id, streams, opts)?;
    Ok(out.pop().expect("one system simulated"))
}

/// Simulates the system started from `x0` together with a copy started from the origin. Both
/// share every branching event and every Gaussian innovation, so corresponding particles differ
/// by exactly `x0 exp(-mu t)`. The first sample is identical to [`simulate_with`] from `x0`.
pub fn simulate_coupled(
    params: &ModelParams,
    x0: &Position,
    snapshot_times: &[f64],
    replica_id: u64,
    streams: &mut ReplicaStreams,
    opts: &SimulationOptions<'_>,
) -> Result<(ReplicaSample, ReplicaSample)> {
    if opts.motion == MotionMode::MassOnly {
        return Err(LabError::Parameter("coupled simulation needs particle motion".into()));
    }
    let origin = Position::origin(params.d());
    let mut out = run(params, &[x0, &origin], snapshot_times, replica_id, streams, opts)?;
    let zero_system = out.pop().expect("two systems");
    let x_system = out.pop().expect("two systems");
    Ok((x_system, zero_system))
}

fn run(
    params: &ModelParams,
    starts: &[&Position],
    times: &[f64],
    replica_id: u64,
    streams: &mut ReplicaStreams,
    opts: &SimulationOptions<'_>,
) -> Result<Vec<ReplicaSample>> {
    validate_times(times)?;
    if opts.limits.max_particles == 0 {
        return Err(LabError::Parameter("max_particles must be at least 1".into()));
    }
    for s in starts {
        s.check_dim(params)?;
    }
    for f in opts.test_functions {
        f.check_dim(params)?;
    }
    let motion = opts.motion == MotionMode::Full;
    if !motion && !opts.test_functions.is_empty() {
        return Err(LabError::Parameter(
            "population functionals need particle motion".into(),
        ));
    }

    let d = params.d();
    let systems = starts.len();
    // Block layout per particle: [last update time, system 0 coords, system 1 coords, ...].
    let stride = if motion { 1 + d * systems } else { 1 };
    let mut state: Vec<f64> = Vec::with_capacity(stride * 64);
    state.push(0.0);
    if motion {
        for s in starts {
            state.extend_from_slice(s);
        }
    }

    let lambda = params.lambda();
    let p = params.p();
    let cap = opts.limits.max_particles;
    let mut events = opts.record_events.then(Vec::new);
    let mut per_system: Vec<(Vec<Snapshot>, Vec<Vec<f64>>)> =
        (0..systems).map(|_| (Vec::new(), Vec::new())).collect();

    let mut n = 1usize;
    let mut next_event = exponential(&mut streams.genealogy, lambda);

    for &ts in times {
        while n > 0 && next_event < ts {
            let now = next_event;
            let i = streams.genealogy.random_range(0..n);
            let birth = streams.genealogy.random::<f64>() < p;
            if motion {
                advance(&mut state[i * stride..(i + 1) * stride], now, params, d, systems, streams);
            }
            if birth {
                if n + 1 > cap {
                    return Err(LabError::Resource { count: n + 1, cap, time: now });
                }
                state.extend_from_within(i * stride..(i + 1) * stride);
                n += 1;
            } else {
                let last = n - 1;
                if i != last {
                    state.copy_within(last * stride..n * stride, i * stride);
                }
                state.truncate(last * stride);
                n -= 1;
            }
            if let Some(ev) = events.as_mut() {
                ev.push(PopulationEvent { time: now, delta: if birth { 1 } else { -1 } });
            }
            if n > 0 {
                next_event = now + exponential(&mut streams.genealogy, lambda * n as f64);
            }
        }
        if motion {
            for block in state.chunks_exact_mut(stride) {
                advance(block, ts, params, d, systems, streams);
            }
        }
        for (k, (snaps, funcs)) in per_system.iter_mut().enumerate() {
            let offset = 1 + k * d;
            let snap = Snapshot::build(ts, params, d, &state, stride, offset, motion, opts.keep_positions);
            let values = opts
                .test_functions
                .iter()
                .map(|f| {
                    neumaier_sum(state.chunks_exact(stride).map(|b| f.eval(&b[offset..offset + d])))
                })
                .collect();
            snaps.push(snap);
            funcs.push(values);
        }
        if !motion {
            // Keep the layout consistent: mass-only blocks carry no coordinates.
            debug_assert_eq!(state.len(), n);
        }
    }

    let survived = n > 0;
    Ok(per_system
        .into_iter()
        .map(|(snapshots, functionals)| ReplicaSample {
            replica_id,
            snapshots,
            functionals,
            survived,
            events: events.clone(),
        })
        .collect())
}

/// Moves one particle block to time `now`, all systems sharing the same innovations.
#[inline]
fn advance(
    block: &mut [f64],
    now: f64,
    params: &ModelParams,
    d: usize,
    systems: usize,
    streams: &mut ReplicaStreams,
) {
    let dt = now - block[0];
    if dt <= 0.0 {
        return;
    }
    let (decay, sd) = transition_coefficients(params, dt);
    for j in 0..d {
        let noise = sd * streams.motion.next_normal();
        for k in 0..systems {
            let c = &mut block[1 + k * d + j];
            *c = *c * decay + noise;
        }
    }
    block[0] = now;
}

/// `<X_t, f> = sum_i f(X_t(i))`; zero for an empty population.
pub fn population_functional(snapshot: &Snapshot, f: &SpectralFunction) -> Result<f64> {
    if snapshot.count == 0 {
        return Ok(0.0);
    }
    let positions = snapshot.positions().ok_or_else(|| {
        LabError::Parameter("snapshot does not carry particle positions".into())
    })?;
    if f.dim() != snapshot.dim() {
        return Err(LabError::Parameter("test function dimension mismatch".into()));
    }
    Ok(neumaier_sum(positions.map(|x| f.eval(x))))
}

/// The limit-theorem triple at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fluctuation {
    /// Centred spatial sum under the regime norming.
    pub spatial: f64,
    /// `(|X_t| - exp(lambda_p t) V_inf) / sqrt(|X_t|)`.
    pub mass: f64,
    /// `exp(-lambda_p t) |X_t|`.
    pub v: f64,
}

/// Norming of the spatial fluctuation: `sqrt(n)`, `sqrt(t n)` or `exp((lambda_p - mu) t)`.
pub fn spatial_norming(regime: Regime, params: &ModelParams, time: f64, count: usize) -> f64 {
    match regime {
        Regime::Small => (count as f64).sqrt(),
        Regime::Critical => (time * count as f64).sqrt(),
        Regime::Large => ((params.lambda_p() - params.mu()) * time).exp(),
    }
}

/// The triple from its ingredients; `None` for an empty population, where the count-based
/// quantities are undefined.
pub fn fluctuation_from_parts(
    params: &ModelParams,
    time: f64,
    count: usize,
    functional: f64,
    f_mean: f64,
    v_inf_estimate: f64,
) -> Option<Fluctuation> {
    if count == 0 {
        return None;
    }
    let n = count as f64;
    let norming = spatial_norming(params.regime(), params, time, count);
    Some(Fluctuation {
        spatial: (functional - n * f_mean) / norming,
        mass: (n - (params.lambda_p() * time).exp() * v_inf_estimate) / n.sqrt(),
        v: (-params.lambda_p() * time).exp() * n,
    })
}

pub fn fluctuation(
    snapshot: &Snapshot,
    f: &SpectralFunction,
    params: &ModelParams,
    v_inf_estimate: f64,
) -> Result<Option<Fluctuation>> {
    let functional = population_functional(snapshot, f)?;
    let mean = equilibrium_expectation(f, params)?;
    Ok(fluctuation_from_parts(params, snapshot.time, snapshot.count, functional, mean, v_inf_estimate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelParams {
        ModelParams::new(1, 1.0, 1.0, 1.0, 0.75).unwrap()
    }

    #[test]
    fn initial_snapshot() {
        let params = ModelParams::new(2, 1.0, 1.0, 1.0, 0.75).unwrap();
        let x0 = Position::new(vec![0.5, -1.0]).unwrap();
        let mut s = ReplicaStreams::new(1, 0);
        let r = simulate(&params, &x0, &[0.0, 1.0], 0, &mut s, SimulationLimits::default()).unwrap();
        let first = &r.snapshots[0];
        assert_eq!(first.count, 1);
        assert_eq!(first.v_value, 1.0);
        assert_eq!(first.h_value, vec![0.5, -1.0]);
        assert_eq!(first.positions().unwrap().next().unwrap(), &[0.5, -1.0]);
    }

    #[test]
    fn rejects_bad_times() {
        let mut s = ReplicaStreams::new(1, 0);
        let x0 = Position::origin(1);
        let lim = SimulationLimits::default();
        assert!(simulate(&small(), &x0, &[], 0, &mut s, lim).is_err());
        assert!(simulate(&small(), &x0, &[1.0, 1.0], 0, &mut s, lim).is_err());
        assert!(simulate(&small(), &x0, &[-1.0], 0, &mut s, lim).is_err());
    }

    #[test]
    fn population_cap_is_reported() {
        let params = ModelParams::new(1, 1.0, 1.0, 2.0, 1.0).unwrap();
        let mut s = ReplicaStreams::new(9, 0);
        let err = simulate(&params, &Position::origin(1), &[20.0], 0, &mut s, SimulationLimits { max_particles: 50 })
            .unwrap_err();
        match err {
            LabError::Resource { count, cap, time } => {
                assert_eq!(cap, 50);
                assert_eq!(count, 51);
                assert!(time > 0.0 && time < 20.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn events_change_count_by_one() {
        let mut s = ReplicaStreams::new(4, 2);
        let opts = SimulationOptions { record_events: true, ..Default::default() };
        let r = simulate_with(&small(), &Position::origin(1), &[2.0, 6.0], 2, &mut s, &opts).unwrap();
        let ev = r.events.unwrap();
        let total: i64 = ev.iter().map(|e| i64::from(e.delta)).sum();
        assert_eq!(1 + total, r.snapshots[1].count as i64);
        assert!(ev.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn functionals_and_fluctuations() {
        let params = small();
        let pos: Vec<Position> = [1.0, -0.5, 2.5].iter().map(|&x| Position::new(vec![x]).unwrap()).collect();
        let snap = Snapshot::from_positions(0.0, &params, &pos).unwrap();
        let x = SpectralFunction::parse_polynomial("x", 1).unwrap();
        assert_eq!(population_functional(&snap, &x).unwrap(), 3.0);
        assert_eq!(population_functional(&snap, &SpectralFunction::constant(1, 1.0)).unwrap(), 3.0);
        let empty = Snapshot::from_positions(1.0, &params, &[]).unwrap();
        assert_eq!(population_functional(&empty, &x).unwrap(), 0.0);
        assert!(fluctuation(&empty, &x, &params, 1.0).unwrap().is_none());
        let c = SpectralFunction::constant(1, 0.7);
        assert_eq!(fluctuation(&snap, &c, &params, 3.0).unwrap().unwrap().spatial, 0.0);
    }

    #[test]
    fn mass_only_matches_full_genealogy() {
        let params = small();
        let times = [1.0, 3.0, 5.0];
        let mut a = ReplicaStreams::new(11, 7);
        let mut b = ReplicaStreams::new(11, 7);
        let full = simulate(&params, &Position::origin(1), &times, 7, &mut a, SimulationLimits::default()).unwrap();
        let opts = SimulationOptions { motion: MotionMode::MassOnly, ..Default::default() };
        let mass = simulate_with(&params, &Position::origin(1), &times, 7, &mut b, &opts).unwrap();
        let c1: Vec<usize> = full.snapshots.iter().map(|s| s.count).collect();
        let c2: Vec<usize> = mass.snapshots.iter().map(|s| s.count).collect();
        assert_eq!(c1, c2);
        assert!(mass.snapshots[0].h_value.is_empty());
    }
}
