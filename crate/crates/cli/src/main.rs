use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bou_lab::harness::{
    clt_experiment, coupling_experiment, format_number, gw_experiment, lln_experiment, run_ensemble,
    selftest, write_artifacts, Ensemble, ExperimentConfig, ExperimentReport, Status, TestFunctionSpec,
    ValidatedConfig,
};
use bou_lab::hermite::{hermite_coefficients, sigma2_critical, sigma2_small, sigma2_small_integral};
use bou_lab::oracles::{
    gw_laplace, hinf_moment, hinf_moment_displayed, moment_recursion, oracle_table,
    population_moment, GwLaw, RecursionGrid,
};
use bou_lab::{LabError, ModelParams, Regime};

/// Simulation and analytic oracles for supercritical branching Ornstein-Uhlenbeck systems.
#[derive(Debug, Parser)]
#[command(name = "bou-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the experiment commands. Flags override the configuration file.
#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment configuration (TOML, or JSON when the name ends in `.json`).
    #[arg(long)]
    config: PathBuf,
    /// Directory for report.json, replicas.csv and summary.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

/// Model parameters given on the command line.
#[derive(Debug, Args)]
struct ParamArgs {
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Defaults to `sqrt(2 mu)`, which makes the equilibrium variance 1.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long)]
    p: f64,
    /// Pin the regime of parameters on the critical line.
    #[arg(long, value_enum)]
    regime: Option<RegimeArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    Small,
    Critical,
    Large,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::Small => Regime::Small,
            RegimeArg::Critical => Regime::Critical,
            RegimeArg::Large => Regime::Large,
        }
    }
}

impl ParamArgs {
    fn build(&self) -> Result<ModelParams, LabError> {
        let sigma = self.sigma.unwrap_or_else(|| (2.0 * self.mu).sqrt());
        let params = ModelParams::new(self.d, sigma, self.mu, self.lambda, self.p)?;
        match self.regime {
            Some(r) => params.pin_regime(r.into()),
            None if params.is_ambiguous() => Err(LabError::Parameter(
                "lambda_p is within rounding of 2 mu; pass --regime to pin it".into(),
            )),
            None => Ok(params),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OracleQuery {
    VinfVar,
    VinfMean,
    VinfConditionalMean,
    VinfRate,
    Extinction,
    ExtinctionBy,
    GwLaplace,
    PopMoment,
    Gamma,
    HinfMoment,
    HinfMomentDisplayed,
    MomentRecursion,
    Table,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sigma2Kind {
    Small,
    SmallIntegral,
    Critical,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an ensemble and check the Galton-Watson laws of the population size.
    Simulate(RunArgs),
    /// Conditional limit theorem for one of the configured test functions.
    Clt {
        #[command(flatten)]
        run: RunArgs,
        /// Index into `test_functions`.
        #[arg(long, default_value_t = 0)]
        function: usize,
    },
    /// Law of large numbers for one of the configured test functions.
    Lln {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0)]
        function: usize,
    },
    /// Pathwise identities of the coupled systems from `x0` and from the origin.
    Coupling(RunArgs),
    /// Print one analytic oracle value.
    Oracle {
        #[arg(long, value_enum)]
        query: OracleQuery,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
        #[arg(long, default_value_t = 2)]
        k: u32,
        #[arg(long, default_value_t = 0.0)]
        x: f64,
        /// Gamma for the displayed H_inf formulas; defaults to the value of the parameters.
        #[arg(long)]
        gamma: Option<f64>,
        /// Test function, `poly:<expr>` or `hermite:<i>[,<j>...]`.
        #[arg(long)]
        f: Option<String>,
    },
    /// Asymptotic variances and Hermite coefficients of a test function.
    Spectral {
        #[arg(long, value_enum)]
        sigma2: Option<Sigma2Kind>,
        /// Print the Hermite coefficients up to this degree instead.
        #[arg(long)]
        coefficients: Option<u32>,
        /// Test function, `poly:<expr>` or `hermite:<i>[,<j>...]`.
        #[arg(long)]
        f: String,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Quick internal consistency checks.
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Lab(LabError),
    Verdict,
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        Failure::Lab(e)
    }
}

fn exit_code(e: &LabError) -> u8 {
    match e {
        LabError::Replica { source, .. } => exit_code(source),
        LabError::Resource { .. } => 3,
        LabError::Config(_)
        | LabError::Parameter(_)
        | LabError::Regime { .. }
        | LabError::Unsupported(_)
        | LabError::TooFewSamples { .. } => 2,
        LabError::Tolerance { .. } | LabError::Io(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verdict) => ExitCode::from(1),
        Err(Failure::Lab(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load(args: &RunArgs) -> Result<ValidatedConfig, LabError> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.replicas {
        cfg.replicas = n;
    }
    if let Some(n) = args.threads {
        cfg.threads = Some(n);
    }
    cfg.validate().map_err(|e| match e {
        LabError::Config(m) => LabError::Config(format!("{}: {m}", args.config.display())),
        other => other,
    })
}

fn finish(report: &ExperimentReport, out: Option<&Path>, ensemble: Option<(&Ensemble, usize, usize)>) -> Result<(), Failure> {
    if let Some(dir) = out {
        write_artifacts(dir, report, ensemble)?;
    }
    print!("{}", report.summary());
    match report.status() {
        Status::Pass => Ok(()),
        Status::Fail | Status::Inconclusive => Err(Failure::Verdict),
    }
}

fn large_gamma(p: &ModelParams) -> Result<f64, LabError> {
    if p.regime() == Regime::Large {
        Ok(p.gamma())
    } else {
        Err(LabError::Regime { required: Regime::Large, actual: p.regime() })
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate(args) => {
            let cfg = load(&args)?;
            let ensemble = run_ensemble(&cfg)?;
            let report = if cfg.raw.replicas >= bou_lab::harness::config::MIN_REPLICAS_FOR_VERDICT {
                gw_experiment(&cfg, &ensemble)?
            } else {
                let mut r = ExperimentReport::new("simulate");
                r.params = Some(cfg.params);
                r.regime = Some(cfg.params.regime());
                r.replicas = ensemble.len();
                r.survivors = ensemble.survivor_count();
                r.seed = Some(cfg.raw.seed);
                r.notes.push("too few replicas for statistical verdicts".into());
                r
            };
            finish(&report, args.out.as_deref(), Some((&ensemble, cfg.params.d(), cfg.functions.len())))
        }
        Command::Clt { run, function } => {
            let cfg = load(&run)?;
            let ensemble = run_ensemble(&cfg)?;
            let report = clt_experiment(&cfg, &ensemble, function)?;
            finish(&report, run.out.as_deref(), Some((&ensemble, cfg.params.d(), cfg.functions.len())))
        }
        Command::Lln { run, function } => {
            let cfg = load(&run)?;
            let ensemble = run_ensemble(&cfg)?;
            let report = lln_experiment(&cfg, &ensemble, function)?;
            finish(&report, run.out.as_deref(), Some((&ensemble, cfg.params.d(), cfg.functions.len())))
        }
        Command::Coupling(args) => {
            let cfg = load(&args)?;
            let report = coupling_experiment(&cfg)?;
            finish(&report, args.out.as_deref(), None)
        }
        Command::Selftest { out } => {
            let report = selftest()?;
            finish(&report, out.as_deref(), None)
        }
        Command::Oracle { query, params, t, theta, k, x, gamma, f } => {
            let p = params.build()?;
            let law = GwLaw::new(&p);
            let value = match query {
                OracleQuery::VinfVar => law.vinf_variance(),
                OracleQuery::VinfMean => law.vinf_mean(),
                OracleQuery::VinfConditionalMean => law.vinf_conditional_mean(),
                OracleQuery::VinfRate => law.vinf_rate(),
                OracleQuery::Extinction => law.extinction_probability(),
                OracleQuery::ExtinctionBy => law.extinction_probability_by(t),
                OracleQuery::GwLaplace => gw_laplace(t, theta, &law)?,
                OracleQuery::PopMoment => population_moment(t, k, &law)?,
                OracleQuery::Gamma => large_gamma(&p)?,
                OracleQuery::HinfMoment => hinf_moment(k, &p)?,
                OracleQuery::HinfMomentDisplayed => {
                    let g = match gamma {
                        Some(g) => g,
                        None => large_gamma(&p)?,
                    };
                    hinf_moment_displayed(k, g)?
                }
                OracleQuery::MomentRecursion => {
                    let spec = f.as_deref().ok_or_else(|| LabError::Config("--f is required".into()))?;
                    let f = TestFunctionSpec::parse_shorthand(spec)?.build(&p)?;
                    moment_recursion(&f, k, t, x, &p, &RecursionGrid::default())?.value
                }
                OracleQuery::Table => {
                    let f = match f.as_deref() {
                        Some(s) => Some(TestFunctionSpec::parse_shorthand(s)?.build(&p)?),
                        None => None,
                    };
                    println!("{}", oracle_table(&p, f.as_ref())?.to_json());
                    return Ok(());
                }
            };
            println!("{}", format_number(value));
            Ok(())
        }
        Command::Spectral { sigma2, coefficients, f, params } => {
            let p = params.build()?;
            let func = TestFunctionSpec::parse_shorthand(&f)?.build(&p)?;
            if let Some(max_degree) = coefficients {
                let exp = hermite_coefficients(&func, max_degree, &p)?;
                println!("mean {}", format_number(exp.mean));
                for (alpha, c) in &exp.coefficients {
                    let idx: Vec<String> = alpha.as_slice().iter().map(u32::to_string).collect();
                    println!("[{}] {}", idx.join(","), format_number(*c));
                }
                return Ok(());
            }
            let kind = sigma2.unwrap_or(match p.regime() {
                Regime::Critical => Sigma2Kind::Critical,
                _ => Sigma2Kind::Small,
            });
            let value = match kind {
                Sigma2Kind::Small => sigma2_small(&func, &p)?.value,
                Sigma2Kind::SmallIntegral => sigma2_small_integral(&func, &p)?,
                Sigma2Kind::Critical => sigma2_critical(&func, &p)?.value,
            };
            println!("{}", format_number(value));
            Ok(())
        }
    }
}
