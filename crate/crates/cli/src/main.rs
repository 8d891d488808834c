use clap::{Parser, Subcommand};
use gremlab_cli::config::{Experiment, RunArgs};
use gremlab_cli::{report, run, Status};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gremlab", version, about = "Trap-model aging experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-time overlap probabilities against the arcsine limit.
    Aging(RunArgs),
    /// Rescaled clock of the deepest aging level against its stable limit.
    Clocks(RunArgs),
    /// Laplace functional of the truncated Ruelle cascade against its exact value.
    Cascade(RunArgs),
    /// Limit aging curve on a theta grid.
    Limits(RunArgs),
    /// Monte Carlo overlaps against the exact small-tree semigroup.
    Oracle(RunArgs),
    /// Any experiment by name, e.g. `run aging`.
    Run {
        #[arg(value_enum)]
        experiment: Experiment,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Summarize finished runs in a directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match cli.command {
        Command::Report { dir } => {
            return match report::collect(&dir) {
                Ok(runs) => {
                    print!("{}", report::render(&runs));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(Status::Error.code())
                }
            };
        }
        Command::Run { experiment, args } => (experiment, args),
        Command::Aging(a) => (Experiment::Aging, a),
        Command::Clocks(a) => (Experiment::Clocks, a),
        Command::Cascade(a) => (Experiment::Cascade, a),
        Command::Limits(a) => (Experiment::Limits, a),
        Command::Oracle(a) => (Experiment::Oracle, a),
    };
    if let Some(t) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(Status::Error.code());
        }
    }
    ExitCode::from(run(experiment, &args).code())
}
