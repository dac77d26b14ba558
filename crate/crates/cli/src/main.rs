use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use refmod_core::config::RunConfig;
use refmod_core::harness::{cmd_eval, cmd_plan, cmd_plot, cmd_train};
use refmod_core::Error;

#[derive(Parser)]
#[command(name = "refmod", version, about = "Reference-modification local planner: train, evaluate, plan, plot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (`key = value` per line).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured episode count.
    #[arg(long)]
    episodes: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the hybrid planner's policy with TD3.
    Train(Common),
    /// Evaluate the configured planner with and without obstacles.
    Eval(Common),
    /// Compute and save a minimum-curvature global plan.
    Plan(Common),
    /// Render episode CSVs as SVG figures.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Episode CSV written by `eval` (repeatable).
        #[arg(long = "episode", required = true)]
        episode_files: Vec<PathBuf>,
        /// Map file to draw under the trajectory.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Reference path CSV to draw dashed.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(episodes) = common.episodes {
        cfg.episodes = episodes;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String, Error> {
    match cli.command {
        Command::Train(c) => cmd_train(&load(&c)?),
        Command::Eval(c) => cmd_eval(&load(&c)?),
        Command::Plan(c) => cmd_plan(&load(&c)?),
        Command::Plot {
            common,
            episode_files,
            map,
            plan,
        } => {
            let written = cmd_plot(&load(&common)?, &episode_files, map.as_deref(), plan.as_deref())?;
            Ok(written.iter().map(|p| format!("{}\n", p.display())).collect())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() || matches!(e, Error::Io { .. }) { 1 } else { 2 })
        }
    }
}
