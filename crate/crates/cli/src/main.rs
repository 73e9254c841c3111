use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use gchs_cli::commands::{self, EXIT_USAGE};
use std::path::PathBuf;

/// Poisson-W manifold toolkit: validate scenarios, audit bracket/frame
/// identities, integrate trajectories, and evaluate brackets at points.
#[derive(Parser)]
#[command(name = "gchs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a scenario file and print its normalized form.
    Check { path: PathBuf },
    /// Run the identity audit and emit a CSV report.
    Audit {
        path: PathBuf,
        /// Report file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for sampling (default: machine parallelism).
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Integrate the configured trajectory and emit a CSV time series.
    Simulate {
        path: PathBuf,
        /// Trajectory file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario convention (transport, eq1-literal,
        /// nghs-literal).
        #[arg(long)]
        convention: Option<String>,
    },
    /// Evaluate {f,g}, its decomposition, and w at a point.
    Bracket {
        path: PathBuf,
        #[arg(long)]
        f: String,
        #[arg(long)]
        g: String,
        /// Comma-separated coordinates.
        #[arg(long)]
        at: String,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprintln!("{e}");
            std::process::exit(EXIT_USAGE);
        }
    };
    let code = match cli.command {
        Command::Check { path } => commands::cmd_check(&path),
        Command::Audit {
            path,
            out,
            threads,
            seed,
        } => commands::cmd_audit(&path, out.as_deref(), threads, seed),
        Command::Simulate {
            path,
            out,
            convention,
        } => commands::cmd_simulate(&path, out.as_deref(), convention.as_deref()),
        Command::Bracket { path, f, g, at } => commands::cmd_bracket(&path, &f, &g, &at),
    };
    std::process::exit(code);
}
