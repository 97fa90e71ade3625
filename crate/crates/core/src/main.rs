// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end.
//!
//! Exit status: 0 no rejection, 3 rejection, 1 usage error, 2 data or model error.
#![forbid(unsafe_code)]

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ingarch_cpt::cpt::{Critical, Trim};
use ingarch_cpt::critval::{
    resolve_cache_dir, GridCorrection, QuantileCache, QuantileConfig, DEFAULT_GRID, DEFAULT_PATHS,
    DEFAULT_SEED, STANDARD_ALPHAS,
};
use ingarch_cpt::harness::{self, ExperimentPlan, ExperimentResult, FULL_REPLICATIONS};
use ingarch_cpt::io::{
    self as cio, Column, Header, PlanFile, ReadOptions, SeriesFile, SeriesSummary,
};
use ingarch_cpt::simulate::DEFAULT_BURN_IN;
use ingarch_cpt::{
    fit, run_test, simulate_h0, simulate_h1, CptError, FitOptions, FitResult, ModelSpec,
    TestOptions, WeightFn,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_REJECT: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "ingarch-cpt",
    version,
    about = "Change-point test for INGARCH count series"
)]
struct Cli {
    /// Master seed for simulation and critical values.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Critical-value cache directory.
    #[arg(long, global = true, env = "CPT_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a trajectory, optionally with one parameter change.
    Simulate(SimulateArgs),
    /// Conditional MLE on a segment of a series.
    Fit(FitArgs),
    /// Run the change-point test.
    Test(TestArgs),
    /// Quantiles of the limiting distribution.
    Critval(CritvalArgs),
    /// Monte Carlo level and power experiments.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// Value column: header name or 1-based index (default: last column).
    #[arg(long)]
    column: Option<String>,
    #[arg(long, value_enum, default_value_t = HeaderArg::Auto)]
    header: HeaderArg,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HeaderArg {
    Auto,
    Yes,
    No,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// e.g. `poisson-ingarch`, `nb-ingarch:r=8`, `bernoulli-ingarch`.
    #[arg(long)]
    model: String,
    #[arg(long)]
    theta: String,
    #[arg(long)]
    theta_after: Option<String>,
    /// Last index generated under `--theta` (default n/2).
    #[arg(long)]
    change_at: Option<usize>,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    /// Include the latent mean as a third column.
    #[arg(long)]
    latent: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    model: String,
    /// First observation (1-based).
    #[arg(long)]
    from: Option<usize>,
    /// Last observation (1-based, inclusive).
    #[arg(long)]
    to: Option<usize>,
    /// Initial filter mean (default: segment mean).
    #[arg(long)]
    x_init: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Weight function: `one` or `power:g=<gamma>`.
    #[arg(long, default_value = "one")]
    q: String,
    #[arg(long, default_value = "auto")]
    un: String,
    #[arg(long, default_value = "auto")]
    vn: String,
    /// Skip simulation and use this critical value.
    #[arg(long)]
    critical_value: Option<f64>,
    /// Initial filter mean for every segment fit (default: segment mean).
    #[arg(long)]
    x_init: Option<f64>,
    #[command(flatten)]
    sim: CritSimArgs,
    /// Report JSON (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    curve_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CritSimArgs {
    #[arg(long, default_value_t = DEFAULT_PATHS)]
    paths: usize,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long, value_enum, default_value_t = CorrectionArg::None)]
    correction: CorrectionArg,
    /// Neither read nor write the quantile cache.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CorrectionArg {
    None,
    Overshoot,
}

#[derive(Args, Debug)]
struct CritvalArgs {
    /// Number of parameters.
    #[arg(long, conflicts_with = "model")]
    d: Option<usize>,
    /// Take `d` from a model.
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "one")]
    q: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Print all standard levels.
    #[arg(long)]
    table: bool,
    #[command(flatten)]
    sim: CritSimArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Plan file (JSON or `key = value` lines).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    plan: Option<PathBuf>,
    /// `table1`, `table2`, `all` or a preset label.
    #[arg(long)]
    preset: Option<String>,
    /// Comma separated sample sizes overriding the plan.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    replications: Option<usize>,
    /// Replications as in the published study.
    #[arg(long, conflicts_with = "replications")]
    full: bool,
    #[arg(long)]
    critical_value: Option<f64>,
    /// Results CSV (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Full results including per-replication records.
    #[arg(long)]
    json: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<CptError> for Failure {
    fn from(e: CptError) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<u8> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let ctx = Context {
        seed: cli.seed,
        cache_dir: cli.cache_dir,
    };
    match cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Fit(a) => fit_cmd(a),
        Command::Test(a) => test_cmd(&ctx, a),
        Command::Critval(a) => critval_cmd(&ctx, a),
        Command::Bench(a) => bench_cmd(&ctx, a),
    }
}

struct Context {
    seed: Option<u64>,
    cache_dir: Option<PathBuf>,
}

impl Context {
    fn cache(&self, disabled: bool) -> QuantileCache {
        if disabled {
            QuantileCache::disabled()
        } else {
            QuantileCache::at(resolve_cache_dir(self.cache_dir.as_deref()))
        }
    }
}

fn usage<T, E: std::fmt::Display>(r: Result<T, E>) -> CliResult<T> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn model(s: &str) -> CliResult<ModelSpec> {
    usage(s.parse::<ModelSpec>())
}

fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn read_input(a: &InputArgs) -> CliResult<SeriesFile> {
    if !a.delimiter.is_ascii() {
        return Err(Failure::Usage(
            "--delimiter must be a single ASCII character".into(),
        ));
    }
    let opts = ReadOptions {
        column: a
            .column
            .as_deref()
            .map(str::parse::<Column>)
            .transpose()
            .map_err(Failure::from)?,
        header: match a.header {
            HeaderArg::Auto => Header::Auto,
            HeaderArg::Yes => Header::Present,
            HeaderArg::No => Header::Absent,
        },
        delimiter: a.delimiter as u8,
    };
    Ok(cio::read_series(&a.input, &opts)?)
}

fn quantile_config(
    d: usize,
    weight: WeightFn,
    seed: Option<u64>,
    s: &CritSimArgs,
) -> QuantileConfig {
    QuantileConfig {
        grid: s.grid,
        paths: s.paths,
        seed: seed.unwrap_or(DEFAULT_SEED),
        correction: match s.correction {
            CorrectionArg::None => GridCorrection::None,
            CorrectionArg::Overshoot => GridCorrection::Overshoot,
        },
        ..QuantileConfig::new(d, weight)
    }
}

fn simulate(ctx: &Context, a: SimulateArgs) -> CliResult<u8> {
    let spec = model(&a.model)?;
    let theta = cio::parse_vector(&a.theta)?;
    let seed = ctx.seed.unwrap_or(0);
    let traj = match &a.theta_after {
        Some(t1) => {
            let t1 = cio::parse_vector(t1)?;
            let at = a.change_at.unwrap_or(a.n / 2);
            simulate_h1(&spec, &theta, &t1, a.n, at, a.burn_in, seed)?
        }
        None => {
            if a.change_at.is_some() {
                return Err(Failure::Usage("--change-at needs --theta-after".into()));
            }
            simulate_h0(&spec, &theta, a.n, a.burn_in, seed)?
        }
    };
    cio::write_trajectory_csv(&traj, a.latent, sink(a.output.as_deref())?)?;
    Ok(0)
}

#[derive(Serialize)]
struct FitOutput<'a> {
    model: String,
    column: &'a str,
    series: SeriesSummary,
    fit: FitResult,
}

fn fit_cmd(a: FitArgs) -> CliResult<u8> {
    let spec = model(&a.model)?;
    let series = read_input(&a.input)?;
    series.check_support(&spec)?;
    let from = a.from.unwrap_or(1);
    let to = a.to.unwrap_or(series.len());
    let opts = FitOptions {
        x_init: a.x_init,
        ..FitOptions::default()
    };
    let result = fit(&spec, &series.values, from, to, &opts)?;
    let out = FitOutput {
        model: spec.to_string(),
        column: &series.column,
        series: series.summary(),
        fit: result,
    };
    let mut w = sink(a.output.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &out)?;
    writeln!(w)?;
    Ok(0)
}

fn test_cmd(ctx: &Context, a: TestArgs) -> CliResult<u8> {
    let spec = model(&a.model)?;
    let weight: WeightFn = usage(a.q.parse())?;
    let un: Trim = usage(a.un.parse())?;
    let vn: Trim = usage(a.vn.parse())?;
    let series = read_input(&a.input)?;
    series.check_support(&spec)?;
    let critical = match a.critical_value {
        Some(c) => Critical::Value(c),
        None => Critical::Simulate {
            config: quantile_config(spec.dim(), weight, ctx.seed, &a.sim),
            cache: ctx.cache(a.sim.no_cache),
        },
    };
    let opts = TestOptions {
        alpha: a.alpha,
        weight,
        un,
        vn,
        fit: FitOptions {
            x_init: a.x_init,
            ..FitOptions::default()
        },
        critical: Some(critical),
    };
    let report = run_test(&spec, &series.values, &opts)?;
    let s = series.summary();
    match &a.output {
        Some(p) => {
            cio::write_report(&report, p)?;
            println!(
                "n={} mean={:.3} variance={:.3} statistic={:.4} c_alpha={:.4} t_hat={} reject={}",
                s.n,
                s.mean,
                s.variance,
                report.statistic,
                report.critical_value,
                report.t_hat,
                report.reject
            );
        }
        None => print!("{}", cio::report_json(&report)?),
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(p) = &a.curve_csv {
        cio::write_curve_csv(&report, File::create(p)?)?;
    }
    Ok(if report.reject { EXIT_REJECT } else { 0 })
}

fn critval_cmd(ctx: &Context, a: CritvalArgs) -> CliResult<u8> {
    let d = match (a.d, &a.model) {
        (Some(d), _) => d,
        (None, Some(m)) => model(m)?.dim(),
        (None, None) => return Err(Failure::Usage("one of --d or --model is required".into())),
    };
    let weight: WeightFn = usage(a.q.parse())?;
    let cfg = quantile_config(d, weight, ctx.seed, &a.sim);
    let alphas: Vec<f64> = if a.table {
        STANDARD_ALPHAS.to_vec()
    } else {
        vec![a.alpha]
    };
    let table = ctx.cache(a.sim.no_cache).table(&cfg, &alphas)?;
    let mut out = io::stdout().lock();
    writeln!(out, "alpha,c_alpha")?;
    for &al in &alphas {
        let c = table
            .get(al)
            .ok_or_else(|| Failure::Data(format!("no quantile for {al}")))?;
        writeln!(out, "{al},{c:.6}")?;
    }
    Ok(0)
}

fn bench_plans(a: &BenchArgs) -> CliResult<Vec<ExperimentPlan>> {
    let mut plans = match (&a.plan, &a.preset) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p)?;
            PlanFile::parse(&text)?
                .iter()
                .map(PlanFile::to_plan)
                .collect::<Result<Vec<_>, _>>()?
        }
        (None, Some(name)) => {
            let scenarios = match name.as_str() {
                "table1" => [harness::table1_levels(), harness::table1_powers()].concat(),
                "table2" => [harness::table2_levels(), harness::table2_powers()].concat(),
                "all" => harness::presets(),
                label => harness::presets()
                    .into_iter()
                    .filter(|s| s.label == label)
                    .collect(),
            };
            if scenarios.is_empty() {
                return Err(Failure::Usage(format!("unknown preset '{name}'")));
            }
            scenarios.into_iter().map(ExperimentPlan::new).collect()
        }
        (None, None) => {
            return Err(Failure::Usage(
                "one of --plan or --preset is required".into(),
            ))
        }
    };
    let ns =
        a.n.as_deref()
            .map(|s| {
                s.split(',')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()
            .map_err(|e| Failure::Usage(format!("--n: {e}")))?;
    for p in &mut plans {
        if let Some(ns) = &ns {
            p.ns = ns.clone();
        }
        if let Some(r) = a.replications {
            p.replications = r;
        }
        if a.full {
            p.replications = FULL_REPLICATIONS;
        }
        if a.critical_value.is_some() {
            p.critical_value = a.critical_value;
        }
    }
    Ok(plans)
}

fn bench_cmd(ctx: &Context, a: BenchArgs) -> CliResult<u8> {
    let mut plans = bench_plans(&a)?;
    if let Some(s) = ctx.seed {
        for p in &mut plans {
            p.seed = s;
        }
    }
    let cache = ctx.cache(false);
    let mut out = sink(a.output.as_deref())?;
    writeln!(out, "{}", harness::CSV_HEADER)?;
    let mut results: Vec<ExperimentResult> = Vec::with_capacity(plans.len());
    for plan in &plans {
        let r = harness::run(plan, &cache)?;
        for row in harness::csv_rows(&r) {
            writeln!(out, "{row}")?;
        }
        out.flush()?;
        results.push(r);
    }
    if let Some(p) = &a.json {
        let f = File::create(p)?;
        serde_json::to_writer_pretty(f, &results)?;
    }
    Ok(0)
}
