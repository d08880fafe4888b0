//! `solver`: bounded solutions of dichotomous difference equations from the
//! command line.

mod commands;
mod config;
mod error;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dichotomy::Execution;

use crate::commands::{Context, ExampleArgs};
use crate::config::{Format, RunConfig, Tolerances};
use crate::error::{CliError, CliResult};
use crate::output::Rendered;

#[derive(Debug, Parser)]
#[command(name = "solver", version, about = "Bounded solutions of x_{n+1} = A_n x_n + h_n")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Overrides `tolerances.solve`.
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Overrides the window as `n_min,n_max`.
    #[arg(long, global = true, allow_hyphen_values = true, value_parser = parse_window)]
    window: Option<(i64, i64)>,

    /// Overrides the tail length.
    #[arg(long, global = true)]
    tail: Option<i64>,

    /// Overrides the seed of randomly generated problems.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Verify the dichotomy estimates on the window.
    CheckDichotomy,
    /// Solvability residual, tail bound and verdict.
    Residual,
    /// Table of one member of the bounded solution family.
    SolveLinear,
    /// Solve the boundary-value problem.
    SolveBvp,
    /// Generating roots and the continuation in eps.
    SolveNonlinear,
    /// Run a built-in example against its closed form.
    Example(ExampleCmd),
}

#[derive(Debug, Args)]
struct ExampleCmd {
    #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
    which: u8,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 2)]
    m: i64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    alpha1: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    alpha2: f64,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    q: i64,
    #[arg(long, default_value_t = 2)]
    p: i64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    cbar: f64,
}

fn parse_window(s: &str) -> Result<(i64, i64), String> {
    let (a, b) = s.split_once(',').ok_or("expected n_min,n_max")?;
    let a = a.trim().parse::<i64>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<i64>().map_err(|e| e.to_string())?;
    Ok((a, b))
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("", "--config is required for this command"))?;
    let mut cfg = config::load(&path.to_string_lossy())?;
    cfg.override_with(cli.window, cli.tail, cli.tol, cli.seed);
    Ok(cfg)
}

fn emit(cli: &Cli, cfg_out: Option<&str>, cfg_format: Option<Format>, rendered: &Rendered) -> CliResult<()> {
    let format = cli.format.or(cfg_format).unwrap_or(Format::Csv);
    let text = rendered.select(format);
    let path = cli.out.clone().or_else(|| cfg_out.map(PathBuf::from));
    match path {
        Some(p) => std::fs::write(&p, text).map_err(|e| CliError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Io {
                    path: "<stdout>".into(),
                    message: e.to_string(),
                })
        }
    }
}

fn run_example(cli: &Cli, ex: &ExampleCmd) -> CliResult<()> {
    let mut tol = Tolerances::default();
    let mut args = ExampleArgs {
        which: ex.which,
        d: ex.d,
        m: ex.m,
        alpha1: ex.alpha1,
        alpha2: ex.alpha2,
        k: ex.k,
        q: ex.q,
        p: ex.p,
        cbar: ex.cbar,
        h: None,
        alpha: None,
    };
    let mut cfg_out = None;
    let mut cfg_format = None;
    if cli.config.is_some() {
        let cfg = load_config(cli)?;
        tol = cfg.tolerances.clone();
        let d = ex.d.unwrap_or(match ex.which {
            1 => 10,
            2 => 7,
            _ => 12,
        });
        if let Some(h) = &cfg.problem.h {
            args.h = Some(config::inhomogeneity(h, d)?);
        }
        args.alpha = cfg.problem.alpha.clone();
        cfg_out = cfg.command.out.clone();
        cfg_format = cfg.command.format;
    } else if let Some(t) = cli.tol {
        tol.solve = t;
    }
    let run = commands::example(&args, &tol, Execution::Parallel)?;
    emit(cli, cfg_out.as_deref(), cfg_format, &run.rendered)?;
    match run.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Command::Example(ex) = &cli.command {
        return run_example(cli, ex);
    }
    let cfg = load_config(cli)?;
    let problem = cfg.build()?;
    log::info!("problem {} with d = {}, window {:?}", problem.source, problem.spec.dim(), problem.spec.window);
    let ctx = Context {
        problem,
        tol: cfg.tolerances.clone(),
        params: cfg.command.clone(),
    };
    let rendered = match cli.command {
        Command::CheckDichotomy => commands::check_dichotomy(&ctx)?,
        Command::Residual => commands::residual(&ctx)?,
        Command::SolveLinear => commands::solve_linear(&ctx)?,
        Command::SolveBvp => commands::solve_bvp(&ctx)?,
        Command::SolveNonlinear => commands::solve_nonlinear(&ctx)?,
        Command::Example(_) => unreachable!("handled above"),
    };
    emit(cli, cfg.command.out.as_deref(), cfg.command.format, &rendered)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SOLVER_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
