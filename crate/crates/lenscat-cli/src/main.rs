//! `lenscat`: lens-data experiments for compactly supported
//! time-dependent metric perturbations.
//!
//! Subcommands: `scatter` (lens-data sweep), `sojourn` (closed form vs
//! renormalized limit), `compare` (microlocal lens equivalence of two
//! metrics), `check` (convexity and non-trapping certificates),
//! `pullback` (materialize a pulled-back metric as a tabulated spec).

// `!(x > 0.0)` rejects NaN as well; `x <= 0.0` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{CommandKind, ExperimentConfig, OutputFormat};

#[derive(Parser)]
#[command(
    name = "lenscat",
    version,
    about = "Geodesic lens data and classical scattering maps of time-dependent metric perturbations"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Trace a seeded sweep of inward boundary rays and export the
    /// lens-data table (CSV).
    Scatter(RunArgs),
    /// Sojourn-time study: closed form against the renormalized limit
    /// with Richardson extrapolation (CSV).
    Sojourn(RunArgs),
    /// Decide microlocal lens equivalence of two metrics (JSON report;
    /// exit 0 equivalent, 1 inequivalent).
    Compare(RunArgs),
    /// Convexity (admissibility) and non-trapping certificates (JSON;
    /// exit 0 iff both pass).
    Check(RunArgs),
    /// Pull a metric back by a diffeomorphism and write the tabulated
    /// metric spec.
    Pullback(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Metric spec file (JSON).
    #[arg(long)]
    metric: PathBuf,
    /// Second metric spec for `compare`.
    #[arg(long)]
    metric2: Option<PathBuf>,
    /// Diffeomorphism spec: generates the second metric in `compare`, or
    /// the pullback in `pullback`.
    #[arg(long)]
    diffeo: Option<PathBuf>,
    /// Convexity-candidate scalar field spec for `check`
    /// (default: |z|^2).
    #[arg(long)]
    f: Option<PathBuf>,
    /// Number of rays / cusp samples in the sweep.
    #[arg(long, default_value_t = 100)]
    rays: usize,
    /// RNG seed; identical configs are bit-identical.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Equivalence tolerance (lengths nondimensionalized by R).
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Truncation parameter of the sojourn limit (default 1e4 x R).
    #[arg(long = "smax")]
    s_max: Option<f64>,
    /// Arc-length budget before a ray counts as trapped (default 50 x R).
    #[arg(long = "lmax")]
    l_max: Option<f64>,
    /// Worker threads (default: LENSCAT_WORKERS or all cores). Never
    /// changes results.
    #[arg(long, env = "LENSCAT_WORKERS")]
    workers: Option<usize>,
    /// Output path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: OutputFormat,
    /// Turn trapped rays into exit code 4 instead of recording them.
    #[arg(long)]
    strict: bool,
    /// Time nodes of the pullback tabulation grid.
    #[arg(long, default_value_t = 17)]
    grid_time: usize,
    /// Per-axis space nodes of the pullback tabulation grid.
    #[arg(long, default_value_t = 81)]
    grid_space: usize,
}

fn to_config(kind: CommandKind, args: RunArgs) -> ExperimentConfig {
    let path_str = |p: PathBuf| p.to_string_lossy().into_owned();
    ExperimentConfig {
        command: kind,
        metric: path_str(args.metric),
        metric2: args.metric2.map(path_str),
        diffeo: args.diffeo.map(path_str),
        f: args.f.map(path_str),
        rays: args.rays,
        seed: args.seed,
        tol: args.tol,
        s_max: args.s_max,
        l_max: args.l_max,
        workers: args.workers.unwrap_or(0),
        out: args.out.map(path_str),
        format: args.format,
        strict: args.strict,
        grid_time: args.grid_time,
        grid_space: args.grid_space,
    }
}

fn main() {
    let cli = Cli::parse();
    let config = match cli.command {
        Cmd::Scatter(a) => to_config(CommandKind::Scatter, a),
        Cmd::Sojourn(a) => to_config(CommandKind::Sojourn, a),
        Cmd::Compare(a) => to_config(CommandKind::Compare, a),
        Cmd::Check(a) => to_config(CommandKind::Check, a),
        Cmd::Pullback(a) => to_config(CommandKind::Pullback, a),
    };

    let run = || match commands::dispatch(&config) {
        Ok(outcome) => outcome.exit_code,
        Err(failure) => {
            eprintln!("{}", failure.message());
            failure.exit_code()
        }
    };

    let code = if config.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .expect("worker pool");
        pool.install(run)
    } else {
        run()
    };
    std::process::exit(code);
}
