//! Command-line front end: CSV in, adaptive-interval and simulation reports
//! out. Exit codes: 0 success, 2 input/usage problems, 3 numeric failure.

mod dataset;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};

use dataset::{read_beta0, CsvDataset};
use fabreg::pipeline::{analyze, AnalysisConfig, Estimator, PriorMeanMode};
use fabreg::sim::{run_study, width_convergence_study, OracleParams, SimDesign, TrendDesign};
use fabreg::spending::IntervalMethod;

#[derive(Parser)]
#[command(
    name = "fabreg",
    version,
    about = "Adaptive constant-coverage confidence intervals for regression coefficients"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a dataset and report classical and adaptive intervals per coefficient
    Fit(FitArgs),
    /// Fit with group-wise adaptation: each group borrows strength only from itself
    FitGrouped(FitGroupedArgs),
    /// Monte Carlo coverage study on a frozen design
    Simulate(SimArgs),
    /// Width-convergence study of the adaptive interval against the known-variance oracle
    Trend(TrendArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorMeanArg {
    Zero,
    Estimate,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Mle,
    Moment,
}

#[derive(Args)]
struct CommonOut {
    /// Output path prefix; writes <out>.csv and <out>.json
    #[arg(long)]
    out: PathBuf,
    /// Worker thread cap (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// RNG seed; falls back to the FABREG_SEED environment variable, then 0
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    /// CSV file with a header row and numeric body
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column
    #[arg(long)]
    response: String,
    /// Type-I error level, in (0, 0.5)
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Prior-center handling for the spending function
    #[arg(long, value_enum, default_value = "zero")]
    prior_mean: PriorMeanArg,
    /// Prior-scale estimator
    #[arg(long, value_enum, default_value = "mle")]
    estimator: EstimatorArg,
    /// Center the response and center-and-unit-scale every column first
    #[arg(long)]
    standardize: bool,
    /// Endpoint-equation residual tolerance
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[command(flatten)]
    common: CommonOut,
}

#[derive(Args)]
struct FitGroupedArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Column partition: groups separated by `;`, columns by `,`
    /// (example: "a,b;c,d,e"); every column must appear exactly once
    #[arg(long)]
    groups: String,
}

#[derive(Args)]
struct SimArgs {
    /// Rows of the generated design (alternative to --data)
    #[arg(long)]
    n: Option<usize>,
    /// Columns of the generated design
    #[arg(long)]
    p: Option<usize>,
    /// Common-factor column correlation of the generated design, in [0, 1)
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    /// CSV whose columns form a frozen design matrix (alternative to --n/--p)
    #[arg(long)]
    data: Option<PathBuf>,
    /// True coefficients: the literal `zero` or a path with one value per line
    #[arg(long)]
    beta0: String,
    /// True error variance
    #[arg(long)]
    sigma2: f64,
    /// Number of replicates
    #[arg(long)]
    reps: usize,
    /// Type-I error level, in (0, 0.5)
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Comma list of methods: umau, fab_t (alias fab), fab_z_oracle
    #[arg(long, default_value = "umau,fab_t")]
    methods: String,
    /// Prior center of the known-variance oracle method
    #[arg(long, default_value_t = 0.0)]
    oracle_mu: f64,
    /// Prior variance of the known-variance oracle method
    #[arg(long)]
    oracle_tau2: Option<f64>,
    /// Prior-scale estimator used by the adaptive method
    #[arg(long, value_enum, default_value = "mle")]
    estimator: EstimatorArg,
    /// Confidence level of the per-coefficient exact binomial bars
    #[arg(long, default_value_t = 0.95)]
    cp_level: f64,
    /// Endpoint-equation residual tolerance
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[command(flatten)]
    common: CommonOut,
}

#[derive(Args)]
struct TrendArgs {
    /// Limit ratio p/n, in (0, 1)
    #[arg(long)]
    c: f64,
    /// Comma list of sample sizes, e.g. 50,100,200,400
    #[arg(long)]
    n_grid: String,
    /// Prior variance of the simulated coefficients
    #[arg(long)]
    tau2: f64,
    /// Per-observation noise scale: the cell at size n uses sigma^2 = n * sigma2_inf
    #[arg(long)]
    sigma2_inf: f64,
    /// Replicates per cell
    #[arg(long)]
    reps: usize,
    /// Type-I error level, in (0, 0.5)
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Leading coefficients tracked per cell (0 = all)
    #[arg(long, default_value_t = 4)]
    track: usize,
    /// Lower edge of the design spectrum law
    #[arg(long, default_value_t = 0.5)]
    spectrum_lo: f64,
    /// Upper edge of the design spectrum law
    #[arg(long, default_value_t = 2.0)]
    spectrum_hi: f64,
    /// Prior-scale estimator used by the adaptive method
    #[arg(long, value_enum, default_value = "mle")]
    estimator: EstimatorArg,
    /// Endpoint-equation residual tolerance
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[command(flatten)]
    common: CommonOut,
}

// ---------------------------------------------------------------------------
// error handling and exit codes
// ---------------------------------------------------------------------------

pub struct CliError {
    numeric: bool,
    message: String,
}

impl CliError {
    pub fn input(message: String) -> Self {
        CliError { numeric: false, message }
    }

    fn exit_code(&self) -> i32 {
        if self.numeric {
            3
        } else {
            2
        }
    }

    fn single_line(&self) -> String {
        self.message.replace('\n', " ")
    }
}

impl From<fabreg::Error> for CliError {
    fn from(e: fabreg::Error) -> Self {
        fn is_numeric(e: &fabreg::Error) -> bool {
            use fabreg::Error::*;
            match e {
                Numerical(_) | SolverFailure { .. } | OptimizerFailure { .. }
                | SingularMomentSystem => true,
                ForCoefficient { source, .. } => is_numeric(source),
                _ => false,
            }
        }
        CliError {
            numeric: is_numeric(&e),
            message: e.to_string(),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!(
            "fabreg: error: {}: {}",
            if e.numeric { "numeric" } else { "invalid-input" },
            e.single_line()
        );
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Fit(args) => cmd_fit(args, None),
        Cmd::FitGrouped(args) => {
            let groups = parse_groups(&args.groups)?;
            cmd_fit(args.fit, Some(groups))
        }
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Trend(args) => cmd_trend(args),
    }
}

fn setup_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(format!("--threads: {e}")))?;
    }
    Ok(())
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("FABREG_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| CliError::input(format!("FABREG_SEED is not an integer: `{v}`"))),
        Err(_) => Ok(0),
    }
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(CliError::input(format!(
            "--alpha must lie in (0, 0.5), got {alpha}"
        )));
    }
    Ok(())
}

fn parse_groups(spec: &str) -> Result<Vec<Vec<String>>, CliError> {
    let groups: Vec<Vec<String>> = spec
        .split(';')
        .map(|g| {
            g.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect::<Vec<_>>()
        })
        .filter(|g: &Vec<String>| !g.is_empty())
        .collect();
    if groups.is_empty() {
        return Err(CliError::input("--groups is empty".into()));
    }
    Ok(groups)
}

fn write_outputs(prefix: &Path, csv: &str, json: &str) -> Result<(), CliError> {
    let csv_path = prefix.with_extension("csv");
    let json_path = prefix.with_extension("json");
    std::fs::write(&csv_path, csv)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", csv_path.display())))?;
    std::fs::write(&json_path, json)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", json_path.display())))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

fn cmd_fit(args: FitArgs, groups: Option<Vec<Vec<String>>>) -> Result<(), CliError> {
    check_alpha(args.alpha)?;
    if args.tol.is_nan() || args.tol <= 0.0 {
        return Err(CliError::input(format!("--tol must be positive, got {}", args.tol)));
    }
    setup_threads(args.common.threads)?;
    let seed = resolve_seed(args.common.seed)?;
    let dataset = CsvDataset::read(&args.data)?;
    let data = dataset.to_regression(&args.response)?;
    let cfg = AnalysisConfig {
        alpha: args.alpha,
        prior_mean: match args.prior_mean {
            PriorMeanArg::Zero => PriorMeanMode::Zero,
            PriorMeanArg::Estimate => PriorMeanMode::Estimated,
        },
        estimator: match args.estimator {
            EstimatorArg::Mle => Estimator::Mle,
            EstimatorArg::Moment => Estimator::Moment,
        },
        groups,
        standardize: args.standardize,
        seed,
        tol: args.tol,
    };
    let report = analyze(&data, &cfg)?;
    write_outputs(&args.common.out, &report.to_csv(), &report.to_json())?;
    println!(
        "fit: {} coefficients, mean relative width {:.4}",
        report.records.len(),
        report.mean_relative_width()
    );
    Ok(())
}

fn parse_methods(spec: &str) -> Result<Vec<IntervalMethod>, CliError> {
    let mut methods = Vec::new();
    for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let m = match token {
            "umau" => IntervalMethod::Umau,
            "fab" | "fab_t" => IntervalMethod::FabT,
            "fab_z_oracle" | "oracle" => IntervalMethod::FabZOracle,
            other => {
                return Err(CliError::input(format!(
                    "--methods: unknown method `{other}` (expected umau, fab_t, fab_z_oracle)"
                )))
            }
        };
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(CliError::input("--methods selected nothing".into()));
    }
    Ok(methods)
}

fn cmd_simulate(args: SimArgs) -> Result<(), CliError> {
    check_alpha(args.alpha)?;
    setup_threads(args.common.threads)?;
    let seed = resolve_seed(args.common.seed)?;
    let methods = parse_methods(&args.methods)?;

    let mut design = match (&args.data, args.n, args.p) {
        (Some(path), None, None) => {
            let dataset = CsvDataset::read(path)?;
            let (x, _names) = dataset.to_design();
            let beta0 = read_beta0(&args.beta0, x.ncols())?;
            SimDesign::with_design(x, beta0, args.sigma2, args.reps, args.alpha, seed)?
        }
        (None, Some(n), Some(p)) => {
            let beta0 = read_beta0(&args.beta0, p)?;
            SimDesign::generated(n, p, args.rho, beta0, args.sigma2, args.reps, args.alpha, seed)?
        }
        _ => {
            return Err(CliError::input(
                "provide either --data or both --n and --p".into(),
            ))
        }
    };
    design.methods = methods;
    design.estimator = match args.estimator {
        EstimatorArg::Mle => Estimator::Mle,
        EstimatorArg::Moment => Estimator::Moment,
    };
    design.cp_level = args.cp_level;
    design.tol = args.tol;
    if design.methods.contains(&IntervalMethod::FabZOracle) {
        let tau2 = args.oracle_tau2.ok_or_else(|| {
            CliError::input("--oracle-tau2 is required for the fab_z_oracle method".into())
        })?;
        design.oracle = Some(OracleParams { mu: args.oracle_mu, tau2 });
    }
    let report = run_study(&design)?;
    write_outputs(&args.common.out, &report.to_csv(), &report.to_json())?;
    println!(
        "simulate: {} replicates, {} exclusions",
        report.reps,
        report.exclusions.len()
    );
    Ok(())
}

fn cmd_trend(args: TrendArgs) -> Result<(), CliError> {
    check_alpha(args.alpha)?;
    setup_threads(args.common.threads)?;
    let seed = resolve_seed(args.common.seed)?;
    let n_grid: Vec<usize> = args
        .n_grid
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| CliError::input(format!("--n-grid: `{t}` is not an integer")))
        })
        .collect::<Result<_, _>>()?;
    let design = TrendDesign {
        c: args.c,
        n_grid,
        tau2: args.tau2,
        sigma2_inf: args.sigma2_inf,
        reps: args.reps,
        alpha: args.alpha,
        seed,
        spectrum_range: (args.spectrum_lo, args.spectrum_hi),
        track: args.track,
        estimator: match args.estimator {
            EstimatorArg::Mle => Estimator::Mle,
            EstimatorArg::Moment => Estimator::Moment,
        },
        tol: args.tol,
    };
    let table = width_convergence_study(&design)?;
    write_outputs(&args.common.out, &table.to_csv(), &table.to_json())?;
    for row in &table.rows {
        println!(
            "trend: n={} p={} gap={:.6} (fab {:.6}, oracle {:.6}, umau {:.6})",
            row.n, row.p, row.gap, row.mean_fab_width, row.mean_oracle_width, row.mean_umau_width
        );
    }
    Ok(())
}
