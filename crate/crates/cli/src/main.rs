//! `icsflow` command-line front end.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icsflow::dataset::{Scheme, Task};
use icsflow::models::{Activation, Criterion, ModelKind};

/// Flow extraction, labeling and intrusion-detection models for ICS captures.
///
/// Log verbosity comes from the ICSFLOW_LOG environment variable
/// (error, warn, info, debug, trace; default info).
#[derive(Debug, Parser)]
#[command(name = "icsflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Aggregate a PCAP capture into a flow CSV.
    Flows(FlowsArgs),
    /// Attach IT and NST labels to a flow CSV from an attack log.
    Label(LabelArgs),
    /// Print label and feature statistics of a flow CSV.
    Stats(StatsArgs),
    /// Clean, split and normalize a labeled flow CSV for training.
    Prepare(PrepareArgs),
    /// Rank features by MRMR on the training split and keep those above tau.
    Select(SelectArgs),
    /// Train a model on a prepared dataset.
    Train(TrainArgs),
    /// Score a trained model on one split of a prepared dataset.
    Evaluate(EvaluateArgs),
    /// Project one split of a prepared dataset onto its principal components.
    Pca(PcaArgs),
    /// Generate a synthetic capture, attack log and ground-truth manifest.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct Overwrite {
    /// Replace existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct FlowsArgs {
    #[arg(long)]
    pcap: PathBuf,
    /// Flow interval in seconds.
    #[arg(long, default_value_t = icsflow::flow::DEFAULT_INTERVAL)]
    interval: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overwrite: Overwrite,
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[arg(long)]
    flows: PathBuf,
    /// Attack log CSV (attack,startStamp,endStamp,attackerIP,attackerMAC,...).
    #[arg(long)]
    attacks: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overwrite: Overwrite,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    flows: PathBuf,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PrepareArgs {
    #[arg(long)]
    flows: PathBuf,
    #[arg(long, default_value = "NST")]
    scheme: Scheme,
    /// detect (normal/attack) or identify (one class per attack).
    #[arg(long, default_value = "detect")]
    task: Task,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = icsflow::dataset::DEFAULT_FRACTIONS)]
    fractions: Vec<f64>,
    /// Split in time order instead of shuffling.
    #[arg(long)]
    chronological: bool,
    /// Ignore columns outside the flow schema instead of failing.
    #[arg(long)]
    allow_extra_columns: bool,
    /// Prepared CSV; metadata goes next to it as `<name>.meta.json`.
    #[arg(long, default_value = "prepared.csv")]
    out: PathBuf,
    #[command(flatten)]
    overwrite: Overwrite,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long, default_value = "prepared.csv")]
    data: PathBuf,
    #[arg(long, default_value_t = icsflow::select::DEFAULT_TAU, allow_negative_numbers = true)]
    tau: f64,
    /// Equal-width bins per feature for the MI estimate.
    #[arg(long, default_value_t = icsflow::select::DEFAULT_BINS)]
    bins: usize,
    /// Selected feature names, one per line.
    #[arg(long, default_value = "selected.txt")]
    out: PathBuf,
    /// Also write the full ranking as CSV.
    #[arg(long)]
    ranking: Option<PathBuf>,
    #[command(flatten)]
    overwrite: Overwrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Dt,
    Rf,
    Ann,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Dt => ModelKind::Dt,
            ModelArg::Rf => ModelKind::Rf,
            ModelArg::Ann => ModelKind::Ann,
        }
    }
}

/// Unset hyper-parameters fall back to the reference configuration for the
/// model and task.
#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value = "prepared.csv")]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "rf")]
    model: ModelArg,
    /// Feature list from `select`; all features when omitted.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Try a small grid around the reference configuration and keep the best
    /// on the validation split.
    #[arg(long)]
    search: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Split criterion for DT and RF: gini, twoing or deviance.
    #[arg(long)]
    criterion: Option<Criterion>,
    #[arg(long)]
    max_splits: Option<usize>,
    #[arg(long)]
    learners: Option<usize>,
    #[arg(long)]
    predictors: Option<usize>,
    /// Train every forest tree on the full training set.
    #[arg(long)]
    no_bootstrap: bool,
    /// Hidden layer sizes, e.g. `79` or `64,32`.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// relu, tanh, sigmoid or none.
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    #[command(flatten)]
    overwrite: Overwrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long, default_value = "model.json")]
    model: PathBuf,
    #[arg(long, default_value = "prepared.csv")]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Also write the metrics as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    overwrite: Overwrite,
}

#[derive(Debug, Args)]
struct PcaArgs {
    #[arg(long, default_value = "prepared.csv")]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    #[arg(long, default_value_t = 2)]
    components: usize,
    /// Coordinates CSV: label followed by one column per component.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overwrite: Overwrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Benign,
    AllAttacks,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// TOML trace script. Without it, `--preset` builds one.
    #[arg(long, conflicts_with = "preset")]
    script: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all-attacks")]
    preset: Preset,
    /// Preset duration in seconds.
    #[arg(long, default_value_t = 300.0)]
    duration: f64,
    /// Preset seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Attack log CSV for `label`.
    #[arg(long)]
    attacks: Option<PathBuf>,
    /// Ground-truth manifest JSON.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    overwrite: Overwrite,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ICSFLOW_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    log::info!("effective config: {:?}", cli.command);
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}");
            eprintln!("error: {}", msg.split_whitespace().collect::<Vec<_>>().join(" "));
            ExitCode::FAILURE
        }
    }
}
