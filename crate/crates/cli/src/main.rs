use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use kgq_cli::config::ModeConfig;
use kgq_cli::output::Table;
use kgq_cli::{cmd_eval, cmd_fit, cmd_grid, cmd_solve, cmd_verify, with_threads, CliError, Config, Overrides};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "kgq", version, allow_negative_numbers = true, about = "Klein-Gordon kernels on Moebius strips and Klein bottles")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Absolute truncation tolerance.
    #[arg(long, global = true, env = "KG_TOL")]
    tol: Option<f64>,
    #[arg(long, global = true)]
    radius: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Twisted generators, 1-based and comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    character: Option<Vec<usize>>,
    #[arg(long, global = true, env = "KG_THREADS")]
    threads: Option<usize>,
    /// Write the CSV table here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Mode {
    Adaptive,
    FixedRadius,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Kernel values at the configured points.
    Eval,
    /// Kernel values on the configured grid.
    Grid,
    /// Run verification suites; exits 1 if any check fails.
    Verify {
        #[arg(long = "suite")]
        suites: Vec<String>,
    },
    /// Dirichlet solve of a manufactured problem on the configured box.
    Solve,
    /// Fit a pole expansion to a sample file.
    Fit {
        #[arg(long)]
        samples: Option<PathBuf>,
    },
}

fn write_text(path: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

fn write_report<T: Serialize>(path: Option<&PathBuf>, report: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(report).map_err(|e| CliError::Io(e.to_string()))? + "\n";
    match path {
        Some(p) => std::fs::write(p, json).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            eprint!("{json}");
            Ok(())
        }
    }
}

fn emit_table(cli: &Cli, table: &Table) -> Result<(), CliError> {
    write_text(cli.output.as_ref(), &table.to_csv())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let (suites, samples) = match &cli.command {
        Command::Verify { suites } if !suites.is_empty() => (Some(suites.clone()), None),
        Command::Fit { samples } => (None, samples.clone()),
        _ => (None, None),
    };
    Overrides {
        alpha: cli.alpha,
        tol: cli.tol,
        radius: cli.radius,
        mode: cli.mode.map(|m| match m {
            Mode::Adaptive => ModeConfig::Adaptive,
            Mode::FixedRadius => ModeConfig::FixedRadius,
        }),
        threads: cli.threads,
        character: cli.character.clone(),
        samples_path: samples,
        suites,
    }
    .apply(&mut cfg);

    with_threads(cfg.threads, || match &cli.command {
        Command::Eval => emit_table(cli, &cmd_eval(&cfg)?),
        Command::Grid => emit_table(cli, &cmd_grid(&cfg)?),
        Command::Verify { .. } => {
            let report = cmd_verify(&cfg)?;
            let lines: String = report.suites.iter().map(|s| s.line() + "\n").collect();
            write_text(cli.output.as_ref(), &lines)?;
            if let Some(p) = &cli.report {
                write_report(Some(p), &report)?;
            }
            let failed = report.suites.iter().filter(|s| !s.passed).count();
            if failed > 0 {
                return Err(CliError::ChecksFailed(failed));
            }
            Ok(())
        }
        Command::Solve => {
            let (table, report) = cmd_solve(&cfg)?;
            emit_table(cli, &table)?;
            write_report(cli.report.as_ref(), &report)
        }
        Command::Fit { .. } => {
            let (table, summary) = cmd_fit(&cfg)?;
            emit_table(cli, &table)?;
            write_report(cli.report.as_ref(), &summary)?;
            if summary.residual_flagged {
                return Err(CliError::ChecksFailed(1));
            }
            Ok(())
        }
    })?
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = ErrorBody { code: e.code(), message: e.to_string() };
            eprintln!("error[{}]: {}", body.code, body.message);
            if let Ok(json) = serde_json::to_string(&serde_json::json!({ "error": body })) {
                eprintln!("{json}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
