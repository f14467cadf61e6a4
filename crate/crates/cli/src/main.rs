use clap::{Parser, Subcommand};
use matflow_cli::commands::{cmd_check, cmd_report, cmd_run, cmd_sweep, Globals};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "matflow", version, about = "Build density flows and check matrix inequalities along them")]
struct Cli {
    /// Worker threads for checkers and spectral kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for random test directions (overrides the scenario file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the scenario file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the flow and write the trajectory and functional series.
    Run { file: PathBuf },
    /// Build the flow and run the scenario's checkers.
    Check { file: PathBuf },
    /// Repeat a run over values of one parameter.
    Sweep {
        file: PathBuf,
        /// tau, points, samples or sigma.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
    /// Write plot-ready data and a summary for a run directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("config error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("config error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let globals = Globals {
        seed: cli.seed,
        out: cli.out,
    };
    let result = match &cli.command {
        Command::Run { file } => cmd_run(file, &globals),
        Command::Check { file } => cmd_check(file, &globals),
        Command::Sweep { file, axis, values } => cmd_sweep(file, axis, values, &globals),
        Command::Report { dir } => cmd_report(dir),
    };
    match result {
        Ok(outcome) => {
            println!("{}", outcome.message.trim_end());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
