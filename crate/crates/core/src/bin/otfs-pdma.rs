use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use otfs_pdma::harness::{run_experiment, ChannelMode, ExperimentSpec, Profile, Scenario};
use otfs_pdma::Result;

#[derive(Parser)]
#[command(name = "otfs-pdma", version, about = "Monte Carlo simulator for multi-user MIMO-OTFS path division")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its result table.
    Simulate(SimulateArgs),
}

#[derive(Parser)]
struct SimulateArgs {
    /// param-capture | ul-detect | dl-detect | oracle-check | leakage-map
    #[arg(long)]
    scenario: String,
    /// Flat key=value file overriding profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated SNR list in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV destination; a JSON mirror is written with the `.json` extension.
    /// Without it the CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// desk | paper
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    sparsity: Option<usize>,
    /// User speed in km/h.
    #[arg(long)]
    velocity: Option<f64>,
    /// perfect | estimated
    #[arg(long, default_value = "perfect")]
    channel_mode: String,
    #[arg(long)]
    workers: Option<usize>,
}

fn build_spec(args: &SimulateArgs) -> Result<ExperimentSpec> {
    let scenario: Scenario = args.scenario.parse()?;
    let profile: Profile = args.profile.parse()?;
    if profile == Profile::Paper {
        eprintln!("warning: paper-scale profile selected; Monte Carlo runs may take hours");
    }
    let mut spec = ExperimentSpec::new(scenario, profile);
    if let Some(path) = &args.config {
        spec.apply_config_text(&std::fs::read_to_string(path)?)?;
    }
    if let Some(snr) = &args.snr {
        spec.snr_db = snr.clone();
    }
    if let Some(step) = args.sparsity {
        spec.sparsity_step = step;
    }
    if let Some(v) = args.velocity {
        spec.set_velocity(v);
    }
    spec.trials = args.trials;
    spec.seed = args.seed;
    spec.channel_mode = args.channel_mode.parse::<ChannelMode>()?;
    spec.workers = args.workers;
    Ok(spec)
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let spec = build_spec(args)?;
    let table = run_experiment(&spec)?;
    match &args.out {
        Some(path) => table.write(path),
        None => {
            print!("{}", table.to_csv());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
