use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use forcegp_cli::csvio::{ingest_csv, ColumnSpec};
use forcegp_cli::{run_file, validate_file, CliError, Registry};

/// Physics-informed Gaussian process force reconstruction.
///
/// Log verbosity is read from FORCEGP_LOG (e.g. `info`, `debug`).
#[derive(Parser)]
#[command(name = "forcegp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Write outputs here instead of `experiment.output_dir`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a config file without running it.
    Validate { config: PathBuf },
    /// Parse a measurement CSV and report what it contains.
    Ingest {
        #[arg(long)]
        check: PathBuf,
    },
    /// List registered experiment kinds.
    List,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FORCEGP_LOG", "warn")).init();
    let cli = Cli::parse();
    let registry = Registry::builtin();
    let result: Result<(), CliError> = match cli.command {
        Command::Run { config, output } => run_file(&config, output.as_deref(), &registry).map(|m| {
            println!("{}", m.display());
        }),
        Command::Validate { config } => validate_file(&config, &registry).map(|cfg| {
            println!("ok: {} ({})", config.display(), cfg.experiment.kind);
        }),
        Command::Ingest { check } => ingest_csv(&check, &ColumnSpec::default()).map(|set| {
            for kind in set.kinds() {
                let c = set.channel(kind).unwrap();
                println!(
                    "{}: {} samples, t = [{}, {}]",
                    kind.name(),
                    c.len(),
                    c.times[0],
                    c.times[c.len() - 1]
                );
            }
        }),
        Command::List => {
            for name in registry.names() {
                println!("{name:22} {}", registry.get(name).unwrap().summary());
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
