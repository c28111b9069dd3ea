use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use respira_cli::{context, CliError, Stage};

#[derive(Parser)]
#[command(name = "respira", version, about = "Respiratory-state classification pipeline: synthesis to spiking deployment")]
struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output root for data, models and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled RFID observation stream.
    Synth,
    /// Window, label, split and standardize the stream.
    Featurize,
    /// Train the CNN with early stopping.
    Train,
    /// Grid search over epochs and learning rate, then repeated k-fold validation.
    Tune,
    /// Accuracy, energy and model size per bit width.
    Quantize,
    /// Convert the trained CNN into a spiking network.
    Convert,
    /// Run the spiking network on the test set.
    Simulate,
    /// Partition and place the spiking network on the tile grid.
    Map,
    /// Sweep threshold, timesteps and sample size.
    Explore,
    /// Collate tables and figures.
    Report,
    /// Run every stage except `tune` in order.
    Pipeline {
        /// Also run `tune` after `train`.
        #[arg(long)]
        tune: bool,
    },
    /// Print the resolved configuration and its hash.
    Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = context(cli.config.as_deref(), cli.seed, &cli.out)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .map_err(|e| CliError::Config { path: "--jobs".into(), msg: e.to_string() })?;
    let stages: Vec<Stage> = match cli.command {
        Command::Synth => vec![Stage::Synth],
        Command::Featurize => vec![Stage::Featurize],
        Command::Train => vec![Stage::Train],
        Command::Tune => vec![Stage::Tune],
        Command::Quantize => vec![Stage::Quantize],
        Command::Convert => vec![Stage::Convert],
        Command::Simulate => vec![Stage::Simulate],
        Command::Map => vec![Stage::Map],
        Command::Explore => vec![Stage::Explore],
        Command::Report => vec![Stage::Report],
        Command::Pipeline { tune } => {
            let mut s = Stage::PIPELINE.to_vec();
            if tune {
                s.insert(3, Stage::Tune);
            }
            s
        }
        Command::Config => {
            print!("# config_sha256={}\n{}", ctx.config_hash(), ctx.cfg.canonical());
            return Ok(());
        }
    };
    for s in stages {
        log::info!("stage {s:?}");
        s.run(&ctx)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
