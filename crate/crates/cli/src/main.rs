//! `neurofuzz` command-line tool: train models, run fuzzing campaigns,
//! retrain on their output and compare neuron-selection strategies.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use neurofuzz::nn::LabelSource;
use neurofuzz::{Architecture, GradMode};

#[derive(Parser, Debug)]
#[command(
    name = "neurofuzz",
    version,
    about = "Coverage-guided differential fuzzing of image classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on MNIST-format data and save it as JSON.
    Train(TrainArgs),
    /// Fuzz randomly chosen test images and write a campaign directory.
    Fuzz(FuzzArgs),
    /// Fine-tune a model on the adversarial images of a campaign.
    Retrain(RetrainArgs),
    /// Run one campaign per strategy plus a random baseline and merge the coverage curves.
    CompareStrategies(CompareArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Directory holding the four MNIST IDX files (optionally gzipped).
    #[arg(long, env = "NEUROFUZZ_DATA_DIR")]
    data_dir: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "lenet1")]
    arch: ArchArg,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Momentum coefficient; 0 gives plain SGD.
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model file.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Also write the per-epoch log as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ArchArg {
    Lenet1,
    Lenet4,
    Lenet5,
    Mlp,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Lenet1 => Architecture::Lenet1,
            ArchArg::Lenet4 => Architecture::Lenet4,
            ArchArg::Lenet5 => Architecture::Lenet5,
            ArchArg::Mlp => Architecture::Mlp,
        }
    }
}

/// Campaign settings. Unset flags fall back to `--config`, then to the defaults.
#[derive(Args, Debug, Clone, Default)]
struct FuzzFlags {
    /// JSON file with fuzzing settings, e.g. a campaign's config.json.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Neuron-selection strategies, comma separated (1-4).
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<u8>>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iter_times: Option<usize>,
    #[arg(long)]
    activation_threshold: Option<f64>,
    #[arg(long)]
    distance_max: Option<f64>,
    #[arg(long)]
    coverage_gain_initial: Option<f64>,
    #[arg(long)]
    coverage_gain_decay: Option<f64>,
    #[arg(long)]
    coverage_gain_floor: Option<f64>,
    #[arg(long, value_enum)]
    grad_mode: Option<GradModeArg>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    max_seeds_per_input: Option<usize>,
    /// Pixel bounds as LO,HI.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pixel_range: Option<Vec<f32>>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    recompute_grad_each_iter: Option<bool>,
    /// RNG seed for input selection and the random baseline.
    #[arg(long, alias = "rng-seed")]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    label_source: Option<LabelSourceArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GradModeArg {
    Sign,
    ScaledRaw,
}

impl From<GradModeArg> for GradMode {
    fn from(g: GradModeArg) -> Self {
        match g {
            GradModeArg::Sign => GradMode::Sign,
            GradModeArg::ScaledRaw => GradMode::ScaledRaw,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LabelSourceArg {
    Confidence,
    Logit,
}

impl From<LabelSourceArg> for LabelSource {
    fn from(l: LabelSourceArg) -> Self {
        match l {
            LabelSourceArg::Confidence => LabelSource::Confidence,
            LabelSourceArg::Logit => LabelSource::Logit,
        }
    }
}

#[derive(Args, Debug)]
struct CampaignArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Number of test images drawn at random.
    #[arg(long, default_value_t = 20)]
    num_inputs: usize,
    #[arg(long)]
    out_dir: PathBuf,
    /// Fuzz on N worker threads; results then depend on scheduling.
    #[arg(long)]
    parallel: Option<usize>,
    #[command(flatten)]
    fuzz: FuzzFlags,
}

#[derive(Args, Debug)]
struct FuzzArgs {
    #[command(flatten)]
    campaign: CampaignArgs,
    /// Also run a random-sign baseline with the same per-input mutation budget.
    #[arg(long, value_enum, default_value = "none")]
    baseline: BaselineArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BaselineArg {
    None,
    Random,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    campaign: CampaignArgs,
}

#[derive(Args, Debug)]
struct RetrainArgs {
    /// Directory written by `fuzz`.
    #[arg(long)]
    campaign_dir: PathBuf,
    /// Model the campaign was run against.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model file; defaults to retrained.json inside the campaign directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with its exit code: 1 for runtime errors, 2 for usage errors.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<neurofuzz::Error> for Failure {
    fn from(e: neurofuzz::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Fuzz(a) => commands::fuzz(a),
        Command::Retrain(a) => commands::retrain(a),
        Command::CompareStrategies(a) => commands::compare_strategies(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
