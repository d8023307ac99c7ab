use bou_lab::harness::report::CSV_SCHEMA_LINE;
use bou_lab::harness::{
    clt_experiment, gw_experiment, lln_experiment, run_ensemble, write_artifacts, write_replicas_csv,
    ExperimentConfig, Status,
};
use bou_lab::stats::{ks_statistic, standard_error};
use rand::{Rng, SeedableRng};

fn config(body: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(body).unwrap()
}

const SMALL: &str = r#"
snapshot_times = [1.0, 3.0]
terminal_time = 14.0
replicas = 1000
seed = 11
test_functions = [{ expr = "x" }]

[params]
sigma = 1.4142135623730951
mu = 1.0
lambda = 1.0
p = 0.75
"#;

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let mut cfg = config(SMALL);
    cfg.replicas = 200;
    cfg.threads = Some(1);
    let one = run_ensemble(&cfg.validate().unwrap()).unwrap();
    cfg.threads = Some(3);
    let three = run_ensemble(&cfg.validate().unwrap()).unwrap();
    assert_eq!(one.members, three.members);
}

#[test]
fn artifacts_are_byte_identical_across_runs() {
    let mut cfg = config(SMALL);
    cfg.replicas = 300;
    let v = cfg.validate().unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let ens = run_ensemble(&v).unwrap();
        let report = lln_experiment(&v, &ens, 0).unwrap();
        write_artifacts(dir.path(), &report, Some((&ens, 1, 1))).unwrap();
    }
    for name in ["report.json", "summary.txt", "replicas.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn csv_starts_with_the_schema_line() {
    let mut cfg = config(SMALL);
    cfg.replicas = 5;
    let v = cfg.validate().unwrap();
    let ens = run_ensemble(&v).unwrap();
    let mut buf = Vec::new();
    write_replicas_csv(&ens, 1, 1, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_SCHEMA_LINE));
    let header = lines.next().unwrap();
    assert!(header.starts_with("replica_id"), "{header}");
    // Two snapshots plus the two proxy rows per replica.
    assert_eq!(lines.count(), 5 * 4);
}

#[test]
fn survival_conditioned_statistics_ignore_extinct_replicas() {
    let cfg = config(SMALL);
    let v = cfg.validate().unwrap();
    let ens = run_ensemble(&v).unwrap();
    assert!(ens.survivor_count() >= 500 && ens.survivor_count() < ens.len());
    let before = clt_experiment(&v, &ens, 0).unwrap();
    let mut altered = ens.clone();
    for m in altered.members.iter_mut().filter(|m| !m.sample.survived) {
        for row in &mut m.sample.functionals {
            row.iter_mut().for_each(|x| *x = 1e6);
        }
        m.half.h = Some(vec![-3.0]);
    }
    let after = clt_experiment(&v, &altered, 0).unwrap();
    for name in ["V_t law", "spatial variance", "spatial law", "mass law", "triple correlations"] {
        assert_eq!(before.verdict(name), after.verdict(name), "{name}");
    }
}

#[test]
fn standard_errors_shrink_with_replicas() {
    let body = r#"
snapshot_times = [4.0]
terminal_time = 16.0
replicas = 8000
seed = 12
motion = "mass_only"
terminal_mode = "mass_only"

[params]
sigma = 1.0
mu = 1.0
lambda = 1.0
p = 0.75
"#;
    let v = config(body).validate().unwrap();
    let ens = run_ensemble(&v).unwrap();
    let vt: Vec<f64> = ens.members.iter().map(|m| m.terminal.v).collect();
    let ratio = standard_error(&vt[..4000]) / standard_error(&vt);
    assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.1, "{ratio}");
}

#[test]
fn gw_verdicts_and_significance_monotonicity() {
    let body = r#"
snapshot_times = [8.0]
terminal_time = 16.0
replicas = 3000
seed = 13
motion = "mass_only"
terminal_mode = "mass_only"

[params]
sigma = 1.0
mu = 1.0
lambda = 1.0
p = 0.75
"#;
    let mut cfg = config(body);
    let v = cfg.validate().unwrap();
    let ens = run_ensemble(&v).unwrap();
    let strict = gw_experiment(&v, &ens).unwrap();
    assert_eq!(strict.status(), Status::Pass, "{}", strict.summary());
    cfg.significance = 0.001;
    let v = cfg.validate().unwrap();
    let loose = gw_experiment(&v, &ens).unwrap();
    for a in &strict.verdicts {
        let b = loose.verdict(&a.name).unwrap();
        if a.passed == Some(true) {
            assert_eq!(b.passed, Some(true), "{}", a.name);
        }
    }
}

#[test]
fn ks_false_rejection_rate_matches_significance() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(14);
    let trials = 500;
    let alpha = 0.05;
    let rejections = (0..trials)
        .filter(|_| {
            let xs: Vec<f64> = (0..400).map(|_| rng.random::<f64>()).collect();
            ks_statistic(&xs, |u| u.clamp(0.0, 1.0), alpha).unwrap().rejects()
        })
        .count();
    let rate = rejections as f64 / trials as f64;
    let se = (alpha * (1.0 - alpha) / trials as f64).sqrt();
    assert!((rate - alpha).abs() < 4.0 * se, "{rate}");
}

#[test]
fn lln_residual_for_a_quadratic() {
    // f = x^2 with v = 1/2, so <f, phi> = 1/2; t = 10 / lambda_p.
    let body = r#"
snapshot_times = [4.0, 10.0, 20.0]
terminal_time = 40.0
replicas = 10000
seed = 15
terminal_mode = "mass_only"
test_functions = [{ expr = "x^2" }]

[params]
sigma = 1.0
mu = 1.0
lambda = 1.0
p = 0.75
"#;
    let v = config(body).validate().unwrap();
    let ens = run_ensemble(&v).unwrap();
    let report = lln_experiment(&v, &ens, 0).unwrap();
    assert_eq!(report.status(), Status::Pass, "{}", report.summary());
    let last = report.estimates["mean residual at t=20"];
    assert!(last.value < 0.05 * 0.5, "{last:?}");
}

#[test]
fn too_few_replicas_is_a_config_error() {
    let mut cfg = config(SMALL);
    cfg.replicas = 20;
    let v = cfg.validate().unwrap();
    let ens = run_ensemble(&v).unwrap();
    let err = lln_experiment(&v, &ens, 0).unwrap_err();
    assert!(err.to_string().contains("replicas"), "{err}");
}
