//! `fewmatch`: synthesize data, train the projection head, evaluate matchers
//! on fixed episode sets and run the oracle suite.

mod commands;
mod settings;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Bad flags, config keys or settings; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// One or more oracle checks failed; exits with status 3.
#[derive(Debug)]
pub struct VerificationFailed(pub Vec<String>);

impl fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "verification failed: {}", self.0.join(", "))
    }
}

impl std::error::Error for VerificationFailed {}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "fewmatch", version, about = "Few-shot video matching toolkit")]
pub struct Cli {
    /// Flat `key = value` config file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic clip-feature dataset.
    Synth(SynthArgs),
    /// Train the projection head, temperature and linear weights.
    Train(TrainArgs),
    /// Evaluate matchers or the classifier baseline on fixed episodes.
    Eval(EvalArgs),
    /// Run the oracle suite against the matchers and gradients.
    Check(CheckArgs),
    /// Print the per-clip Chamfer correspondences of one query.
    DumpCorrespondences(DumpArgs),
}

#[derive(Args, Debug, Default)]
pub struct SeedArg {
    /// Master seed [default: 0].
    #[arg(long, env = "FEWMATCH_SEED")]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Training classes [default: 24].
    #[arg(long)]
    pub train_classes: Option<usize>,
    /// Validation classes [default: 12].
    #[arg(long)]
    pub val_classes: Option<usize>,
    /// Test classes [default: 24].
    #[arg(long)]
    pub test_classes: Option<usize>,
    /// Videos per training class [default: 20].
    #[arg(long)]
    pub train_videos: Option<usize>,
    /// Videos per validation class [default: 10].
    #[arg(long)]
    pub val_videos: Option<usize>,
    /// Videos per test class [default: 10].
    #[arg(long)]
    pub test_videos: Option<usize>,
    /// Clips per video [default: 8].
    #[arg(long)]
    pub segments: Option<usize>,
    /// Feature dimension [default: 16].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Norm scale of the per-clip noise [default: 0.5].
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Class pairs sharing prototypes in reversed order [default: 0].
    #[arg(long)]
    pub order_pairs: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct MatcherArgs {
    /// Tuple length l [default: 1, or 2 for chamfer++].
    #[arg(long)]
    pub tuple_len: Option<usize>,
    /// `ordered` or `all` [default: ordered].
    #[arg(long)]
    pub tuple_mode: Option<String>,
    /// `single` or `joint` [default: single, or joint for chamfer++].
    #[arg(long)]
    pub aggregation: Option<String>,
    /// Soft-DTW smoothing used in training [default: 0.1].
    #[arg(long)]
    pub dtw_gamma: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct EpisodeArgs {
    /// Dataset directory holding manifest.tsv.
    #[arg(long)]
    pub data: Option<String>,
    /// Support videos per class [default: 1].
    #[arg(long)]
    pub shot: Option<usize>,
    /// Queries per class [default: 1].
    #[arg(long)]
    pub queries: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[command(flatten)]
    pub matcher: MatcherArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Output directory for checkpoint.fpp and train_log.tsv.
    #[arg(long)]
    pub out: Option<String>,
    /// Matcher to train through [default: chamfer_qs].
    #[arg(long)]
    pub method: Option<String>,
    /// Classes per training episode [default: 5].
    #[arg(long)]
    pub way: Option<usize>,
    /// `learned` or `identity` [default: learned].
    #[arg(long)]
    pub projection: Option<String>,
    /// Projection output dimension [default: 1152].
    #[arg(long)]
    pub output_dim: Option<usize>,
    /// SGD learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Initial temperature [default: 10].
    #[arg(long)]
    pub tau_init: Option<f64>,
    /// Maximum epochs [default: 20].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training episodes per epoch [default: 200].
    #[arg(long)]
    pub episodes_per_epoch: Option<usize>,
    /// Epochs without improvement before stopping [default: 3].
    #[arg(long)]
    pub patience: Option<usize>,
    /// Fixed validation episodes [default: 200].
    #[arg(long)]
    pub val_episodes: Option<usize>,
    /// Validation workers, 0 = all cores [default: 0].
    #[arg(long)]
    pub workers: Option<usize>,
    /// Train even when only the temperature is trainable.
    #[arg(long)]
    pub allow_tau_only: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[command(flatten)]
    pub matcher: MatcherArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Output directory for results and summary TSVs; summary also goes to stdout.
    #[arg(long)]
    pub out: Option<String>,
    /// Methods to compare, comma separated: a matcher name, `chamfer++` or
    /// `classifier` [default: chamfer_qs].
    #[arg(long)]
    pub method: Vec<String>,
    /// Classes per episode; a comma-separated list sweeps [default: 5].
    #[arg(long, alias = "ways")]
    pub way: Vec<String>,
    /// Fixed episodes per way [default: 1000].
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Split to draw episodes from [default: test].
    #[arg(long)]
    pub split: Option<String>,
    /// Trained checkpoint; without it features are only l2-normalized.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Evaluation workers, 0 = all cores [default: 0].
    #[arg(long)]
    pub workers: Option<usize>,
    /// Classifier baseline epochs [default: 10].
    #[arg(long)]
    pub classifier_epochs: Option<usize>,
    /// Classifier baseline Adam learning rate [default: 0.01].
    #[arg(long)]
    pub classifier_lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub seed: SeedArg,
    /// Negate one matcher, chosen from the seed, to prove the suite notices.
    #[arg(long)]
    pub fault: bool,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Classes per episode [default: 5].
    #[arg(long)]
    pub way: Option<usize>,
    /// Split to draw the episode from [default: test].
    #[arg(long)]
    pub split: Option<String>,
    /// Index of the episode in the fixed list [default: 0].
    #[arg(long, default_value_t = 0)]
    pub episode_index: usize,
    /// Index of the query within the episode [default: 0].
    #[arg(long, default_value_t = 0)]
    pub query_index: usize,
    /// Trained checkpoint; without it features are only l2-normalized.
    #[arg(long)]
    pub checkpoint: Option<String>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if cause.downcast_ref::<VerificationFailed>().is_some() {
            return EXIT_VERIFY;
        }
        if let Some(fewmatch::Error::InvalidConfig(_)) = cause.downcast_ref::<fewmatch::Error>() {
            return EXIT_USAGE;
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
