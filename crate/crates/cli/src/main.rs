use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twostep_cli::{parse_config, run, CliError, EXIT_IO, EXIT_VALIDATION};

/// Worker threads for sweeps; defaults to all cores.
const WORKERS_ENV: &str = "TWOSTEP_WORKERS";

#[derive(Parser)]
#[command(name = "twostep", version, about = "Two-step modulation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Population trace as CSV plus a metadata sidecar.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter sweep as CSV plus a metadata sidecar.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dressed spectrum and suggested step durations as JSON.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
    },
    /// One-period effective Hamiltonian as JSON.
    Effective {
        #[arg(long)]
        config: PathBuf,
    },
}

fn configure_workers() -> Result<(), CliError> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{WORKERS_ENV} must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    configure_workers()?;
    let (name, config, out) = match cli.command {
        Cmd::Simulate { config, out } => ("simulate", config, Some(out)),
        Cmd::Sweep { config, out } => ("sweep", config, Some(out)),
        Cmd::Spectrum { config } => ("spectrum", config, None),
        Cmd::Effective { config } => ("effective", config, None),
    };
    let text = std::fs::read_to_string(&config).map_err(|e| CliError::Io(format!("{}: {e}", config.display())))?;
    let plan = parse_config(&text)?;
    if plan.command.name() != name {
        return Err(CliError::Config(format!(
            "config command '{}' does not match subcommand '{name}'",
            plan.command
        )));
    }
    let mut stdout = std::io::stdout().lock();
    let written = run(&plan, out.as_deref(), &mut stdout)?;
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            ExitCode::from(if code > 0 { code as u8 } else { EXIT_IO as u8 })
        }
    }
}
