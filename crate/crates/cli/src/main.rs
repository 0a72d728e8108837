use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use qhpc_core::metrics::{write_report, OutputFormat};
use qhpc_core::par::ExecMode;
use qhpc_core::scenario::Scenario;
use qhpc_core::sweep::{self, SweepParam};
use qhpc_core::system;

/// Exit code for configuration and usage errors.
const EXIT_CONFIG: u8 = 1;
/// Exit code for failures while running or writing results.
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "qhpc",
    version,
    about = "Discrete-event simulator for hybrid CPU/QPU systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a scenario without running it.
    ValidateScenario { path: PathBuf },
    /// Run a scenario to its horizon and write the report.
    Simulate {
        path: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, env = "QHPC_OUT_DIR", default_value = "out")]
        out: PathBuf,
        /// Defaults to the scenario's output format.
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Also write events.tsv.
        #[arg(long)]
        event_log: bool,
    },
    /// Run one simulation per parameter value; point i uses seed + i.
    Sweep {
        path: PathBuf,
        /// Dotted scenario path and inclusive range, e.g. architecture.access_link.latency_ns=1000:5000:1000
        #[arg(long)]
        param: String,
        #[arg(long, env = "QHPC_OUT_DIR", default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Run points one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
    },
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn config(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    Scenario::load(path).map_err(config)
}

fn check(sc: &Scenario, path: &Path) -> Result<(), Failure> {
    let violations = sc.validate();
    if violations.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = violations.iter().map(|v| format!("  - {v}")).collect();
    Err(config(anyhow::anyhow!(
        "{} is invalid:\n{}",
        path.display(),
        list.join("\n")
    )))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(runtime)
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::ValidateScenario { path } => {
            let sc = load(&path)?;
            check(&sc, &path)?;
            println!("OK {}", path.display());
        }
        Command::Simulate {
            path,
            seed,
            out,
            format,
            event_log,
        } => {
            let mut sc = load(&path)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            sc.output.event_log |= event_log;
            check(&sc, &path)?;
            let resolved = sc.resolve().map_err(config)?;
            let run = system::run(&sc, resolved).map_err(runtime)?;
            let format = format.map(OutputFormat::from).unwrap_or(sc.output.format);
            let file = write_report(&run.report, &out, format)
                .with_context(|| format!("cannot write report into {}", out.display()))
                .map_err(runtime)?;
            println!("wrote {}", file.display());
            if let Some(log) = run.event_log {
                let p = out.join("events.tsv");
                write_text(&p, &log)?;
                println!("wrote {}", p.display());
            }
            let s = &run.report.system;
            println!(
                "jobs {} completed {} failed {} incomplete {} events {}",
                s.jobs_total, s.jobs_completed, s.jobs_failed, s.jobs_incomplete, s.events_processed
            );
        }
        Command::Sweep {
            path,
            param,
            out,
            format,
            sequential,
        } => {
            let sc = load(&path)?;
            check(&sc, &path)?;
            let param: SweepParam = param.parse().map_err(config)?;
            let mode = if sequential {
                ExecMode::Sequential
            } else {
                ExecMode::Parallel
            };
            let points = sweep::run(&sc, &param, mode).map_err(|e| match e {
                sweep::SweepError::Run { .. } => runtime(e),
                _ => config(e),
            })?;
            let format = format.map(OutputFormat::from).unwrap_or(sc.output.format);
            for p in &points {
                let dir = out.join(format!("point-{:03}", p.index));
                write_report(&p.report, &dir, format)
                    .with_context(|| format!("cannot write report into {}", dir.display()))
                    .map_err(runtime)?;
            }
            std::fs::create_dir_all(&out)
                .with_context(|| format!("cannot create {}", out.display()))
                .map_err(runtime)?;
            let csv = out.join("sweep.csv");
            write_text(&csv, &sweep::to_csv(&param, &points))?;
            println!("wrote {} points and {}", points.len(), csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
