use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod builtins;
mod probes;
mod run;
mod scenario;

use scenario::{Mode, Overrides, Scenario};

/// Transport-fragmentation-coagulation simulator and verification lab.
#[derive(Debug, Parser)]
#[command(name = "fragcoag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the scenario's mode.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Output directory (default: out/<config stem>).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Seed of the random probe fields.
        #[arg(long)]
        seed: Option<u64>,
        /// Multiplies the mass cells and spatial nodes.
        #[arg(long)]
        resolution_scale: Option<f64>,
        /// Overrides the final time.
        #[arg(long)]
        tmax: Option<f64>,
    },
    /// Print the built-in kernels, fields and initial data.
    ListBuiltins {
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match cli.command {
        Command::ListBuiltins { json } => {
            let items = builtins::catalog();
            if json {
                println!("{}", serde_json::to_string_pretty(&items).expect("catalog serialises"));
            } else {
                print!("{}", builtins::render_text(&items));
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            mode,
            output,
            seed,
            resolution_scale,
            tmax,
        } => {
            let overrides = Overrides {
                mode,
                seed,
                resolution_scale,
                tmax,
            };
            let result = Scenario::load(&config)
                .and_then(|s| s.resolve(&overrides))
                .and_then(|s| {
                    s.validate()?;
                    let dir = output.unwrap_or_else(|| run::default_output(&config));
                    run::run(&s, &dir)
                });
            match result {
                Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
