//! `dyntomo` — command-line front end.
//!
//! Every subcommand prints JSON to stdout (or `--out`). Exit status is 0 on
//! success, 2 when an input violates a precondition and 3 when the numerics
//! fail.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::Serialize;

use dyntomo::channels::{
    feasibility_cptp, feasibility_unitary, unitary_channel, Channel, ChannelJson, Generator, DEFAULT_GAP_TOL,
};
use dyntomo::completeness::{
    informational_complete, qubit_margin_oracle, rank_r_margin, rational_vandermonde, vandermonde_det, MarginOptions,
};
use dyntomo::experiments::{read_records, run_sweep, threshold_report, ExperimentConfig};
use dyntomo::herm::{DensityMatrix, DEFAULT_REL_TOL};
use dyntomo::reconstruction::{forward_matrix, low_rank_reconstruct, lsq_reconstruct, LowRankOptions, OutcomeData};
use dyntomo::sampling::{ginibre_povm, haar_unitary, random_cptp, SeededRng};
use dyntomo::schemes::{dynamical_scheme, scheme_matrix, timed_scheme, MeasurementScheme, Povm, RationalTimeGrid};
use dyntomo::{Error, Result};

#[derive(Parser)]
#[command(name = "dyntomo", version, about = "Dynamical state tomography toolkit")]
struct Cli {
    /// Seed for every random draw; falls back to DYNTOMO_SEED, then 0.
    #[arg(long, global = true, env = "DYNTOMO_SEED")]
    seed: Option<u64>,

    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Feasibility report of a channel file or a random draw.
    CheckFeasible(CheckFeasibleArgs),
    /// Build a dynamical or timed measurement scheme.
    BuildScheme(BuildSchemeArgs),
    /// Rank test of a scheme, optionally with a rank-r margin.
    CheckComplete(CheckCompleteArgs),
    /// Rank-r completeness margin of a scheme.
    Margin(MarginArgs),
    /// Recover a state from outcome data.
    Reconstruct(ReconstructArgs),
    /// Vandermonde determinants and rational-time Vandermonde matrices.
    Vandermonde(VandermondeArgs),
    /// Run a Monte Carlo sweep from a config file.
    Sweep(SweepArgs),
    /// Threshold report from a sweep record file.
    Report(ReportArgs),
}

#[derive(Args)]
struct CheckFeasibleArgs {
    /// Channel JSON (unitary, kraus or semigroup).
    file: Option<PathBuf>,
    /// Draw a Haar unitary of this dimension instead.
    #[arg(long, conflicts_with = "file")]
    haar: Option<usize>,
    /// With --haar: draw a random channel with this many Kraus operators.
    #[arg(long, requires = "haar")]
    kraus: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_GAP_TOL)]
    tol: f64,
}

#[derive(Args)]
struct BuildSchemeArgs {
    /// POVM JSON (`{"effects": [...]}`).
    #[arg(long, conflicts_with = "ginibre")]
    povm: Option<PathBuf>,
    /// Draw a Ginibre POVM with this many outcomes.
    #[arg(long)]
    ginibre: Option<usize>,
    /// Channel JSON.
    #[arg(long, conflicts_with_all = ["haar", "generator"])]
    channel: Option<PathBuf>,
    /// Use a Haar unitary channel of this dimension.
    #[arg(long, conflicts_with = "generator")]
    haar: Option<usize>,
    /// Number of blocks of a dynamical scheme.
    #[arg(long)]
    steps: Option<usize>,
    /// Generator JSON for a timed scheme.
    #[arg(long, requires = "times")]
    generator: Option<PathBuf>,
    /// Comma-separated rational times, e.g. `1/3,2/3`.
    #[arg(long)]
    times: Option<String>,
    /// Also write the scheme matrix as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CheckCompleteArgs {
    scheme: PathBuf,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    rel_tol: f64,
}

#[derive(Args)]
struct MarginArgs {
    scheme: PathBuf,
    #[arg(long, default_value_t = 1)]
    rank: usize,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Also run the qubit grid oracle with this many points per angle (n = 2).
    #[arg(long)]
    oracle_grid: Option<usize>,
}

#[derive(Args)]
struct ReconstructArgs {
    scheme: PathBuf,
    /// Outcome data JSON (`{"blocks": [[...]], "shots": ...}`).
    #[arg(long, conflicts_with = "state")]
    data: Option<PathBuf>,
    /// Simulate data from this density matrix instead.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Shots per block when simulating.
    #[arg(long, requires = "state")]
    shots: Option<u64>,
    /// Use bounded-rank recovery at this rank.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
}

#[derive(Args)]
struct VandermondeArgs {
    /// Comma-separated rational times; selects the rational-time matrix.
    #[arg(long)]
    times: Option<String>,
    /// Comma-separated complex numbers, e.g. `1,0+1i,0-1i`.
    #[arg(long, allow_hyphen_values = true)]
    lambdas: String,
    /// Comma-separated complex weights (default all ones).
    #[arg(long, conflicts_with = "times", allow_hyphen_values = true)]
    weights: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Record file written by `sweep`.
    records: PathBuf,
    /// Write the CSV summary here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => {
            let mut stdout = std::io::stdout().lock();
            if let Err(e) = writeln!(stdout, "{text}") {
                // a closed pipe (e.g. `| head`) is not an error of ours
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn parse_complex_list(s: &str) -> Result<Vec<Complex64>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<Complex64>()
                .map_err(|e| Error::InvalidArgument(format!("bad complex number {t:?}: {e}")))
        })
        .collect()
}

fn load_channel(path: &Path) -> Result<Channel> {
    read_json::<ChannelJson>(path)?.build()
}

fn positive_dim(n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    Ok(n)
}

fn check_feasible(args: &CheckFeasibleArgs, rng: &mut SeededRng, out: Option<&Path>) -> Result<()> {
    args.haar.map(positive_dim).transpose()?;
    let report = match (&args.file, args.haar, args.kraus) {
        (Some(path), _, _) => load_channel(path)?.feasibility(args.tol),
        (None, Some(n), None) => feasibility_unitary(&haar_unitary(n, rng), args.tol)?,
        (None, Some(n), Some(k)) => feasibility_cptp(&random_cptp(n, k, rng)?, args.tol),
        (None, None, _) => return Err(Error::InvalidArgument("give a channel file or --haar n".into())),
    };
    emit(&report, out)
}

fn build_scheme(args: &BuildSchemeArgs, rng: &mut SeededRng, out: Option<&Path>) -> Result<()> {
    let channel = match (&args.channel, args.haar) {
        (Some(p), _) => Some(load_channel(p)?),
        (None, Some(n)) => Some(unitary_channel(&haar_unitary(positive_dim(n)?, rng))?),
        (None, None) => None,
    };
    let generator: Option<Generator> = args.generator.as_deref().map(read_json).transpose()?;
    let n = channel
        .as_ref()
        .map(Channel::dim)
        .or(generator.as_ref().map(Generator::dim))
        .ok_or_else(|| Error::InvalidArgument("give --channel, --haar or --generator".into()))?;
    let povm: Povm = match (&args.povm, args.ginibre) {
        (Some(p), _) => read_json(p)?,
        (None, Some(m)) => ginibre_povm(n, m, rng)?,
        (None, None) => return Err(Error::InvalidArgument("give --povm or --ginibre m".into())),
    };
    let scheme = match (channel, generator) {
        (Some(c), _) => {
            let l = args
                .steps
                .ok_or_else(|| Error::InvalidArgument("dynamical schemes need --steps".into()))?;
            dynamical_scheme(&povm, &c, l)?
        }
        (None, Some(g)) => {
            let times = RationalTimeGrid::parse_list(args.times.as_deref().unwrap_or(""))?;
            timed_scheme(&povm, &g, &times)?
        }
        (None, None) => unreachable!("dimension lookup already failed"),
    };
    if let Some(csv) = &args.csv {
        scheme_matrix(&scheme).write_csv(std::io::BufWriter::new(fs::File::create(csv)?))?;
    }
    emit(&scheme, out)
}

fn margin_options(restarts: Option<usize>, max_iters: Option<usize>, seed: u64) -> MarginOptions {
    let d = MarginOptions::default();
    MarginOptions {
        restarts: restarts.unwrap_or(d.restarts),
        max_iters: max_iters.unwrap_or(d.max_iters),
        seed,
        ..d
    }
}

fn check_complete(args: &CheckCompleteArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    let scheme: MeasurementScheme = read_json(&args.scheme)?;
    let h = scheme_matrix(&scheme);
    let verdict = informational_complete(&h, args.rel_tol)?;
    let margin = args
        .rank
        .map(|r| rank_r_margin(&h, r, &margin_options(None, None, seed)))
        .transpose()?;
    emit(&serde_json::json!({ "verdict": verdict, "margin": margin }), out)
}

fn margin(args: &MarginArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    let scheme: MeasurementScheme = read_json(&args.scheme)?;
    let h = scheme_matrix(&scheme);
    let estimate = rank_r_margin(&h, args.rank, &margin_options(args.restarts, args.max_iters, seed))?;
    let oracle = args.oracle_grid.map(|g| qubit_margin_oracle(&h, g)).transpose()?;
    emit(&serde_json::json!({ "estimate": estimate, "oracle": oracle }), out)
}

fn reconstruct(args: &ReconstructArgs, seed: u64, out: Option<&Path>) -> Result<()> {
    let scheme: MeasurementScheme = read_json(&args.scheme)?;
    let h = scheme_matrix(&scheme);
    let data: OutcomeData = match (&args.data, &args.state) {
        (Some(p), _) => {
            let d: OutcomeData = read_json(p)?;
            d.validate()?;
            d
        }
        (None, Some(p)) => forward_matrix(&h, &read_json::<DensityMatrix>(p)?, args.shots, Some(seed))?,
        (None, None) => return Err(Error::InvalidArgument("give --data or --state".into())),
    };
    let rec = match args.rank {
        Some(r) => low_rank_reconstruct(
            &h,
            &data,
            r,
            &LowRankOptions {
                restarts: args.restarts,
                seed,
                ..LowRankOptions::default()
            },
        )?,
        None => lsq_reconstruct(&h, &data)?,
    };
    emit(&rec, out)
}

fn vandermonde(args: &VandermondeArgs, out: Option<&Path>) -> Result<()> {
    let lambdas = parse_complex_list(&args.lambdas)?;
    match &args.times {
        Some(t) => emit(&rational_vandermonde(&RationalTimeGrid::parse_list(t)?, &lambdas)?, out),
        None => {
            let weights = match &args.weights {
                Some(w) => parse_complex_list(w)?,
                None => vec![Complex64::new(1.0, 0.0); lambdas.len()],
            };
            emit(&vandermonde_det(&lambdas, &weights)?, out)
        }
    }
}

fn sweep(args: &SweepArgs, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(p) = out {
        config.output = Some(p.to_path_buf());
    }
    let outcome = run_sweep(&config)?;
    if config.output.is_none() {
        emit(&outcome.records, None)?;
    }
    Ok(())
}

fn report(args: &ReportArgs, out: Option<&Path>) -> Result<()> {
    let file = read_records(&args.records)?;
    let report = threshold_report(&file.records)?;
    match &args.csv {
        Some(p) => report.write_csv(std::io::BufWriter::new(fs::File::create(p)?))?,
        None if out.is_some() => {}
        None => report.write_csv(std::io::stderr().lock())?,
    }
    emit(&report, out)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let mut rng = SeededRng::new(seed);
    let out = cli.out.as_deref();
    match &cli.command {
        Command::CheckFeasible(a) => check_feasible(a, &mut rng, out),
        Command::BuildScheme(a) => build_scheme(a, &mut rng, out),
        Command::CheckComplete(a) => check_complete(a, seed, out),
        Command::Margin(a) => margin(a, seed, out),
        Command::Reconstruct(a) => reconstruct(a, seed, out),
        Command::Vandermonde(a) => vandermonde(a, out),
        Command::Sweep(a) => sweep(a, cli.seed, out),
        Command::Report(a) => report(a, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
