use clap::{Parser, Subcommand};
use megarefine_cli::config::Command;
use std::process::ExitCode;

/// Render-and-compare pose refinement experiments.
///
/// Options after the subcommand are `--key value` pairs. `--config FILE`
/// loads a JSON config or a run manifest, `--threads N` caps worker threads
/// (falling back to MEGAREFINE_THREADS), and every other key overrides the
/// config: dotted keys name a full path (`--refiner.icp.max_distance 0.05`),
/// bare keys resolve against the subcommand's block, then the top level, then
/// the module blocks (`--trials 200`, `--seed 3`, `--iterations 5`).
#[derive(Parser)]
#[command(name = "megarefine", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Rest {
    #[arg(allow_hyphen_values = true, trailing_var_arg = true, num_args = 0.., value_name = "--KEY VALUE")]
    args: Vec<String>,
}

#[derive(Subcommand)]
enum Sub {
    /// Dump scene observations and ground-truth view sets as PFM/PPM.
    Render(Rest),
    /// Generate training or detection-seeded hypothesis sets.
    Hypotheses(Rest),
    /// Score detection-seeded hypotheses and evaluate the selected pose.
    Coarse(Rest),
    /// Refine from perturbed ground truth.
    Refine(Rest),
    /// Coarse selection followed by refinement, with a summary.
    Pipeline(Rest),
    /// Convergence rate against initial error magnitude.
    Basin(Rest),
    /// Run the invariant checks.
    Selftest(Rest),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, rest) = match cli.command {
        Sub::Render(r) => (Command::Render, r),
        Sub::Hypotheses(r) => (Command::Hypotheses, r),
        Sub::Coarse(r) => (Command::Coarse, r),
        Sub::Refine(r) => (Command::Refine, r),
        Sub::Pipeline(r) => (Command::Pipeline, r),
        Sub::Basin(r) => (Command::Basin, r),
        Sub::Selftest(r) => (Command::Selftest, r),
    };
    match megarefine_cli::run(command, &rest.args) {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("megarefine {command}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
