//! Command-line driver: synthesize data, train, evaluate, decode dialogs,
//! and export filter diagnostics, all from one config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sincser::cli::commands;
use sincser::cli::RunConfig;

#[derive(Parser)]
#[command(
    name = "sincser",
    about = "Learnable sinc-filterbank emotion recognition on synthetic dialogs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; defaults apply for anything unset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override one dotted config key, e.g. model.num_filters=8
    /// (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

impl ConfigArgs {
    fn load(&self) -> sincser::Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.set, self.seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (WAV files + manifest).
    Synth {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Train the configured model; writes a checkpoint and a JSON-lines
    /// training log.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Evaluate a checkpoint on the validation split; writes metrics and
    /// the posterior stream.
    Eval {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the dialog decoder over a posterior JSON-lines stream.
    Decode {
        #[command(flatten)]
        common: ConfigArgs,
        /// Input posteriors (JSON lines).
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
    },
    /// Export the cutoff table and per-filter frequency responses of a
    /// sinc checkpoint.
    InspectFilters {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn run() -> sincser::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Synth { common } => {
            let config = common.load()?;
            log::info!("resolved config hash {}", config.hash());
            // Synth writes into data.dir unless --out was given explicitly.
            let out = (common.out != PathBuf::from("runs")).then_some(common.out.as_path());
            commands::cmd_synth(&config, out)
        }
        Command::Train { common } => {
            let config = common.load()?;
            log::info!("resolved config hash {}", config.hash());
            commands::cmd_train(&config, &common.out)
        }
        Command::Eval { common, checkpoint } => {
            let config = common.load()?;
            log::info!("resolved config hash {}", config.hash());
            commands::cmd_eval(&config, checkpoint, &common.out)
        }
        Command::Decode { common, input } => {
            let config = common.load()?;
            log::info!("resolved config hash {}", config.hash());
            commands::cmd_decode(&config, input, &common.out)
        }
        Command::InspectFilters { common, checkpoint } => {
            commands::cmd_inspect_filters(checkpoint, &common.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SINCSER_LOG", "info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // One machine-parseable line on stderr.
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
