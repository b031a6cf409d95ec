use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rnn_ekf_cli::commands::{self, Outputs, Run};
use rnn_ekf_cli::config::RunConfig;
use rnn_ekf_cli::CliError;

/// Train recurrent state-space models by extended Kalman filtering and run
/// closed-loop MPC on them.
#[derive(Parser)]
#[command(name = "rnn-ekf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset CSV and its metadata sidecar.
    Gen(Common),
    /// Train a model; writes model.json and log.csv.
    Train(Common),
    /// Evaluate a model file on the configured data.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model file; defaults to model.json in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train once per l1 weight in the sweep section; writes sweep.csv.
    SweepL1(Common),
    /// Closed-loop MPC simulation; writes loop.csv and mpc_summary.json.
    Mpc(Common),
}

type Action<'a> = &'a dyn Fn(&Run) -> Result<Outputs, CliError>;

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, action): (&Common, Action) = match &cli.command {
        Command::Gen(c) => (c, &commands::gen),
        Command::Train(c) => (c, &commands::train_cmd),
        Command::Eval { common, model } => (common, &|r: &Run| {
            let path = model.clone().unwrap_or_else(|| r.out.join("model.json"));
            commands::eval_cmd(r, &path)
        }),
        Command::SweepL1(c) => (c, &commands::sweep_l1),
        Command::Mpc(c) => (c, &commands::mpc_cmd),
    };
    let config = RunConfig::load(&common.config)?;
    let run = Run::new(config, common.seed, common.out.clone());
    let outputs = action(&run)?;
    for path in outputs.commit(&run.out)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
