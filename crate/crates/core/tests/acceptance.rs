//! Acceptance criteria, one test per criterion. Every test prints a single line
//! `criterion N (...): PASS|FAIL` and then asserts.

use std::io::Write;
use std::sync::OnceLock;

use bou_lab::engine::{MotionMode, SimulationOptions};
use bou_lab::harness::{
    clt_experiment, coupling_experiment, gw_experiment, run_ensemble, Ensemble, ExperimentConfig,
    ExperimentReport, Status, ValidatedConfig,
};
use bou_lab::hermite::{
    gradient_mean, gradient_mean_by_parts, hermite_coefficients, hermite_polynomial, sigma2_critical,
    sigma2_small, sigma2_small_integral, MultiIndex,
};
use bou_lab::oracles::{
    fourth_moment_by_differentiation, hinf_moment, hinf_moment_displayed, moment_recursion,
    population_moment, second_moment_quadrature, GwLaw, RecursionGrid,
};
use bou_lab::ou_kernel::{equilibrium_expectation, ou_semigroup_apply};
use bou_lab::rng::ReplicaStreams;
use bou_lab::stats::{raw_moment, Estimate};
use bou_lab::{ModelParams, Position, SpectralFunction};

struct Outcome {
    criterion: u32,
    title: &'static str,
    failures: Vec<String>,
}

impl Outcome {
    fn new(criterion: u32, title: &'static str) -> Self {
        Self { criterion, title, failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn close(&mut self, name: &str, got: f64, want: f64, rel: f64) {
        let err = ((got - want) / want).abs();
        self.check(err <= rel, format!("{name}: {got} vs {want} (relative error {err:.2e} > {rel:.0e})"));
    }

    /// Relative comparison that tolerates rounding noise around an exact zero.
    fn close_or_zero(&mut self, name: &str, got: f64, want: f64, rel: f64) {
        let ok = (got - want).abs() <= rel * want.abs() + 1e-12;
        self.check(ok, format!("{name}: {got} vs {want}"));
    }

    fn report(&mut self, r: &ExperimentReport) {
        if r.status() != Status::Pass {
            for v in &r.verdicts {
                if v.passed != Some(true) {
                    self.failures.push(format!(
                        "{}: empirical {} oracle {} tolerance {} ({})",
                        v.name, v.empirical, v.oracle, v.tolerance, v.note
                    ));
                }
            }
        }
    }

    fn finish(self) {
        let verdict = if self.failures.is_empty() { "PASS" } else { "FAIL" };
        let mut line = format!("criterion {} ({}): {verdict}", self.criterion, self.title);
        if !self.failures.is_empty() {
            line.push_str(&format!(" [{}]", self.failures.join("; ")));
        }
        // Written to the process stdout directly so the line survives output capture.
        let mut out = std::io::stdout().lock();
        writeln!(out, "{line}").unwrap();
        out.flush().unwrap();
        assert!(self.failures.is_empty(), "{line}");
    }
}

fn config(toml: &str) -> ValidatedConfig {
    ExperimentConfig::from_toml(toml).unwrap().validate().unwrap()
}

#[test]
fn criterion_1_galton_watson_law() {
    let mut out = Outcome::new(1, "GW law suite");
    let cfg = config(
        r#"
snapshot_times = [8.0]
terminal_time = 16.0
replicas = 10000
seed = 101
motion = "mass_only"
[params]
sigma = 1.0
mu = 1.0
lambda = 1.0
p = 0.75
"#,
    );
    let ensemble = run_ensemble(&cfg).unwrap();
    let r = gw_experiment(&cfg, &ensemble).unwrap();
    // Compare with the limit values as well as the finite-time ones.
    let extinct = ensemble.members.iter().filter(|m| m.terminal.count == 0).count() as f64 / 1e4;
    let se = (extinct * (1.0 - extinct) / 1e4).sqrt();
    out.check((extinct - 1.0 / 3.0).abs() <= 4.0 * se, format!("extinction fraction {extinct} vs 1/3"));
    out.check(
        (r.verdict("Var(V_T)").unwrap().oracle - 2.0).abs() < 1e-12,
        "variance oracle differs from 2",
    );
    out.report(&r);
    out.finish();
}

#[test]
fn criterion_2_fourth_moment_oracle() {
    let mut out = Outcome::new(2, "fourth-moment oracle");
    let cfg = config(
        r#"
snapshot_times = [2.0, 4.0, 6.0]
terminal_time = 7.0
replicas = 100000
seed = 202
motion = "mass_only"
[params]
sigma = 1.0
mu = 1.0
lambda = 1.0
p = 0.75
"#,
    );
    let law = GwLaw::new(&cfg.params);
    let ensemble = run_ensemble(&cfg).unwrap();
    for (i, &t) in cfg.raw.snapshot_times.iter().enumerate() {
        let counts: Vec<f64> = ensemble.members.iter().map(|m| m.sample.snapshots[i].count as f64).collect();
        let est = raw_moment(&counts, 4);
        let closed = population_moment(t, 4, &law).unwrap();
        out.check(
            (est.value - closed).abs() <= 4.0 * est.se,
            format!("E|X_{t}|^4: MC {} (se {}) vs {closed}", est.value, est.se),
        );
        let numeric = fourth_moment_by_differentiation(t, &law, 0.004).unwrap();
        out.close(&format!("differentiated transform at t={t}"), numeric, closed, 1e-4);
    }
    out.finish();
}

fn panel(d: usize) -> Vec<SpectralFunction> {
    ["x", "x^2 + x", "x^3", "x^3 + x", "x^4 - 2*x^2 + 0.5*x"]
        .iter()
        .map(|s| SpectralFunction::parse_polynomial(s, d).unwrap())
        .collect()
}

#[test]
fn criterion_3_semigroup_and_spectral_suite() {
    let mut out = Outcome::new(3, "semigroup/spectral suite");
    let start = std::time::Instant::now();
    let params = ModelParams::new(1, 1.0, 1.0, 1.0, 0.75).unwrap();
    let grid: Vec<f64> = (-3..=3).map(f64::from).collect();
    let sextic = SpectralFunction::parse_polynomial("x^6 - 2*x^3 + x - 1", 1).unwrap();

    for &s in &[0.1, 0.5, 1.0] {
        for &t in &[0.1, 0.5, 1.0] {
            let inner = {
                let f = sextic.clone();
                SpectralFunction::custom(1, "T_t f", move |x| ou_semigroup_apply(&f, t, x, &params).unwrap())
            };
            for &x in &grid {
                let composed = ou_semigroup_apply(&inner, s, &[x], &params).unwrap();
                let direct = ou_semigroup_apply(&sextic, s + t, &[x], &params).unwrap();
                out.check((composed - direct).abs() <= 1e-8, format!("semigroup s={s} t={t} x={x}"));
            }
        }
    }

    let base = equilibrium_expectation(&sextic, &params).unwrap();
    for &t in &[0.1, 1.0, 5.0] {
        let f = sextic.clone();
        let moved = SpectralFunction::custom(1, "T_t f", move |x| ou_semigroup_apply(&f, t, x, &params).unwrap());
        let m = equilibrium_expectation(&moved, &params).unwrap();
        out.check((m - base).abs() <= 1e-10 * base.abs().max(1.0), format!("stationarity t={t}: {m} vs {base}"));
    }

    for deg in 0..=5u32 {
        let alpha = MultiIndex::new(vec![deg]);
        let h = SpectralFunction::polynomial(hermite_polynomial(&alpha, &params));
        for &t in &[0.25, 1.0, 4.0] {
            for &x in &grid {
                let got = ou_semigroup_apply(&h, t, &[x], &params).unwrap();
                let want = (-(deg as f64) * params.mu() * t).exp() * h.eval(&[x]);
                out.check((got - want).abs() <= 1e-8, format!("eigenrelation deg={deg} t={t} x={x}"));
            }
        }
    }

    for f in panel(1).iter().chain([&sextic]) {
        let exp = hermite_coefficients(f, 6, &params).unwrap();
        let mean = equilibrium_expectation(f, &params).unwrap();
        let g = f.clone();
        let sq = SpectralFunction::custom(1, "f~^2", move |x| (g.eval(x) - mean).powi(2));
        let norm2 = equilibrium_expectation(&sq, &params).unwrap();
        out.check(
            (exp.sum_of_squares() - norm2).abs() <= 1e-9 * norm2.max(1.0),
            format!("Parseval for {}: {} vs {norm2}", f.label(), exp.sum_of_squares()),
        );
    }

    for f in panel(1) {
        let series = sigma2_small(&f, &params).unwrap().value;
        let integral = sigma2_small_integral(&f, &params).unwrap();
        out.close(&format!("small variance paths for {}", f.label()), series, integral, 1e-6);
    }
    let x = SpectralFunction::parse_polynomial("x", 1).unwrap();
    let unit = ModelParams::new(1, 2f64.sqrt(), 1.0, 1.0, 0.75).unwrap();
    out.close("small variance of x", sigma2_small(&x, &unit).unwrap().value, 2.0, 1e-12);

    let critical = ModelParams::new(1, 1.0, 0.25, 1.0, 0.75).unwrap();
    for f in panel(1) {
        let c = sigma2_critical(&f, &critical).unwrap();
        out.check(
            (c.value - c.hermite_path).abs() <= 1e-10 * c.value.abs().max(1.0),
            format!("critical variance paths for {}: {} vs {}", f.label(), c.value, c.hermite_path),
        );
        let a = gradient_mean(&f, &critical).unwrap()[0];
        let b = gradient_mean_by_parts(&f, &critical).unwrap()[0];
        out.check((a - b).abs() <= 1e-10 * a.abs().max(1.0), format!("gradient paths for {}", f.label()));
    }
    out.close("critical variance of x", sigma2_critical(&x, &critical).unwrap().value, 3.0, 1e-12);

    let elapsed = start.elapsed().as_secs_f64();
    out.check(elapsed < 10.0, format!("runtime {elapsed:.1} s exceeds 10 s"));
    out.finish();
}

#[test]
fn criterion_4_small_rate_clt() {
    let mut out = Outcome::new(4, "small-rate CLT");
    let t = 2000f64.ln() / 0.5;
    let cfg = config(&format!(
        r#"
snapshot_times = [{t}]
terminal_time = {}
replicas = 10000
seed = 404
terminal_mode = "mass_only"
test_functions = [{{ hermite = [[1.0, [1]]] }}]
[params]
sigma = 1.4142135623730951
mu = 1.0
lambda = 1.0
p = 0.75
"#,
        t + 10.0
    ));
    let ensemble = run_ensemble(&cfg).unwrap();
    let r = clt_experiment(&cfg, &ensemble, 0).unwrap();
    let var = r.verdict("spatial variance").unwrap();
    out.check((var.oracle - 2.0).abs() < 1e-12, format!("variance oracle {} differs from 2", var.oracle));
    out.check(r.survivors >= 6000, format!("only {} survivors", r.survivors));
    out.report(&r);
    out.finish();
}

#[test]
fn criterion_5_critical_clt() {
    let mut out = Outcome::new(5, "critical CLT");
    let cfg = config(
        r#"
snapshot_times = [10.0, 12.0, 14.0, 16.0]
terminal_time = 26.0
replicas = 40000
seed = 505
terminal_mode = "mass_only"
test_functions = [{ poly = [[1.0, [1]]] }]
[params]
sigma = 1.0
mu = 0.25
lambda = 1.0
p = 0.75
"#,
    );
    let ensemble = run_ensemble(&cfg).unwrap();
    let r = clt_experiment(&cfg, &ensemble, 0).unwrap();
    let var = r.verdict("spatial variance").unwrap();
    out.check((var.oracle - 3.0).abs() < 1e-12, format!("variance oracle {} differs from 3", var.oracle));
    out.check(r.verdict("critical growth exponent").is_some(), "growth regression missing");
    out.report(&r);
    out.finish();
}

const LARGE: &str = r#"
snapshot_times = [4.0, 8.0, 12.0]
terminal_time = 14.0
replicas = 1000
seed = 606
test_functions = [{ poly = [[1.0, [1]]] }]
[caps]
max_particles = 20000000
[params]
sigma = 0.5
mu = 0.25
lambda = 1.0
p = 1.0
"#;

fn large_ensemble() -> &'static (ValidatedConfig, Ensemble) {
    static CELL: OnceLock<(ValidatedConfig, Ensemble)> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = config(LARGE);
        let ensemble = run_ensemble(&cfg).unwrap();
        (cfg, ensemble)
    })
}

fn h_terminal(ensemble: &Ensemble) -> Vec<f64> {
    ensemble.members.iter().map(|m| m.terminal.h.as_ref().unwrap()[0]).collect()
}

#[test]
fn criterion_6_large_rate_regime() {
    let mut out = Outcome::new(6, "large-rate regime");
    let (cfg, ensemble) = large_ensemble();
    let params = cfg.params;
    out.close("gamma", params.gamma(), 0.5, 1e-15);

    // The spatial fluctuation of f(x) = x is H_t itself.
    let f = &cfg.functions[0];
    let opts = SimulationOptions { test_functions: std::slice::from_ref(f), ..Default::default() };
    let mut streams = ReplicaStreams::new(1, 0);
    let s = bou_lab::engine::simulate_with(&params, &Position::origin(1), &[3.0, 6.0], 0, &mut streams, &opts)
        .unwrap();
    for (snap, funcs) in s.snapshots.iter().zip(&s.functionals) {
        let fl = bou_lab::engine::fluctuation_from_parts(&params, snap.time, snap.count, funcs[0], 0.0, snap.v_value)
            .unwrap();
        out.check(
            (fl.spatial - snap.h_value[0]).abs() <= 1e-12 * snap.h_value[0].abs().max(1.0),
            format!("spatial fluctuation differs from H_t at t={}", snap.time),
        );
    }

    let r = clt_experiment(cfg, ensemble, 0).unwrap();
    out.check(r.verdict("residual medians decreasing").is_some(), "median ladder missing");
    out.check(
        (r.verdict("final residual median").unwrap().oracle - 0.1).abs() < 1e-12,
        "median threshold is not 10% of sqrt(E H_inf^2) = 1",
    );
    let m2 = r.verdict("E H_T^2").unwrap();
    out.check((m2.oracle - 1.0).abs() < 1e-12, format!("second-moment oracle {} is not 1", m2.oracle));
    out.report(&r);
    out.finish();
}

#[test]
fn criterion_6_fourth_moment_of_displayed_formula() {
    let mut out = Outcome::new(6, "large-rate regime, displayed fourth moment 35.2");
    let (cfg, ensemble) = large_ensemble();
    let displayed = hinf_moment_displayed(4, cfg.params.gamma()).unwrap();
    out.close("displayed fourth moment", displayed, 35.2, 1e-12);
    let h = h_terminal(ensemble);
    let m2 = raw_moment(&h, 2);
    let m4 = raw_moment(&h, 4);
    out.check(
        (m2.value - 1.0).abs() <= 4.0 * m2.se,
        format!("E H_T^2 = {} (se {}) vs 1", m2.value, m2.se),
    );
    out.check(
        (m4.value - displayed).abs() <= 4.0 * m4.se,
        format!(
            "E H_T^4 = {} (se {}) vs {displayed}; the scale-consistent value is {}",
            m4.value,
            m4.se,
            hinf_moment(4, &cfg.params).unwrap()
        ),
    );
    out.finish();
}

#[test]
fn criterion_7_coupling_identities() {
    let mut out = Outcome::new(7, "coupling identities");
    let start = std::time::Instant::now();
    let cfg = config(
        r#"
x0 = [2.0]
snapshot_times = [2.0, 4.0, 6.0]
terminal_time = 8.0
replicas = 1000
seed = 707
[params]
sigma = 0.5
mu = 0.25
lambda = 1.0
p = 1.0
"#,
    );
    let r = coupling_experiment(&cfg).unwrap();
    out.report(&r);
    let elapsed = start.elapsed().as_secs_f64();
    out.check(elapsed < 60.0, format!("runtime {elapsed:.1} s exceeds 60 s"));
    out.finish();
}

#[test]
fn criterion_8_moment_recursion() {
    let mut out = Outcome::new(8, "moment-recursion oracle equivalence");
    let params = ModelParams::new(1, 1.4142135623730951, 1.0, 1.0, 0.75).unwrap();
    let grid = RecursionGrid::default();
    let law = GwLaw::new(&params);
    for f in panel(1) {
        for &(t, x) in &[(0.5, 0.0), (1.5, 0.7), (3.0, -1.2)] {
            let r1 = moment_recursion(&f, 1, t, x, &params, &grid).unwrap().value;
            let closed = (params.lambda_p() * t).exp() * ou_semigroup_apply(&f, t, &[x], &params).unwrap();
            out.close_or_zero(&format!("k=1 {} t={t} x={x}", f.label()), r1, closed, 1e-6);
            let r2 = moment_recursion(&f, 2, t, x, &params, &grid).unwrap().value;
            let q = second_moment_quadrature(&f, t, x, &params).unwrap();
            out.close_or_zero(&format!("k=2 {} t={t} x={x}", f.label()), r2, q, 1e-6);
        }
    }
    let one = SpectralFunction::constant(1, 1.0);
    for &t in &[0.5, 1.0, 2.0] {
        for k in 1..=4u32 {
            let r = moment_recursion(&one, k, t, 0.3, &params, &grid).unwrap().value;
            let p = population_moment_any(t, k, &law);
            if let Some(p) = p {
                out.close(&format!("f=1 k={k} t={t}"), r, p, 1e-6);
            }
        }
    }

    // Monte Carlo at lambda_p t = 2.
    let (t, x) = (4.0, 0.5);
    let f = SpectralFunction::parse_polynomial("x^2 + x", 1).unwrap();
    let opts = SimulationOptions {
        test_functions: std::slice::from_ref(&f),
        keep_positions: false,
        motion: MotionMode::Full,
        ..Default::default()
    };
    let x0 = Position::new(vec![x]).unwrap();
    let values: Vec<f64> = (0..100_000u64)
        .map(|id| {
            let mut streams = ReplicaStreams::new(808, id);
            let s = bou_lab::engine::simulate_with(&params, &x0, &[t], id, &mut streams, &opts).unwrap();
            s.functionals[0][0]
        })
        .collect();
    for k in 1..=4u32 {
        let est: Estimate = raw_moment(&values, k as i32);
        let oracle = moment_recursion(&f, k, t, x, &params, &grid).unwrap().value;
        out.check(
            (est.value - oracle).abs() <= 4.0 * est.se,
            format!("MC k={k}: {} (se {}) vs {oracle}", est.value, est.se),
        );
    }
    out.finish();
}

fn population_moment_any(t: f64, k: u32, law: &GwLaw) -> Option<f64> {
    match k {
        1 | 4 => Some(population_moment(t, k, law).unwrap()),
        _ => None,
    }
}
