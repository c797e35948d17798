use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rerank_core::model::{HeadMode, PositionMode};
use rerank_core::obedience::SwapTrials;

use crate::settings::parse_trials;

#[derive(Debug, Parser)]
#[command(
    name = "rerank",
    version,
    about = "Train and evaluate list re-rankers with consistency principles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic click dataset (JSONL).
    Generate(GenerateArgs),
    /// Train a re-ranker and write its checkpoint and log.
    Train(TrainArgs),
    /// Score a dataset with a checkpoint: metrics and obedience.
    Evaluate(EvaluateArgs),
    /// Train the baseline, +P1, +P2 and +both variants and compare them.
    Ablate(AblateArgs),
    /// Compare analytic and finite-difference gradients on a small model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output dataset path.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub lists: Option<usize>,
    /// Items per list.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d_item: Option<usize>,
    #[arg(long)]
    pub d_user: Option<usize>,
    #[arg(long)]
    pub context_weight: Option<f64>,
    #[arg(long)]
    pub ranker_noise: Option<f64>,
    #[arg(long)]
    pub click_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the latent click model as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// JSON config file (section "synth").
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HeadArg {
    SoftmaxList,
    SigmoidItem,
}

impl From<HeadArg> for HeadMode {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::SoftmaxList => HeadMode::SoftmaxList,
            HeadArg::SigmoidItem => HeadMode::SigmoidItem,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PositionArg {
    LearnedAdd,
    Off,
}

impl From<PositionArg> for PositionMode {
    fn from(p: PositionArg) -> Self {
        match p {
            PositionArg::LearnedAdd => PositionMode::LearnedAdd,
            PositionArg::Off => PositionMode::Off,
        }
    }
}

/// Architecture flags shared by commands that build a model.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Hidden widths of the scoring MLP, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub mlp_hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub head_mode: Option<HeadArg>,
    #[arg(long, value_enum)]
    pub position_mode: Option<PositionArg>,
    /// Longest list the model accepts (default: longest training list).
    #[arg(long)]
    pub n_max: Option<usize>,
}

/// Optimisation flags shared by `train` and `ablate`.
#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset (JSONL).
    #[arg(long)]
    pub train: PathBuf,
    /// Validation dataset, used for per-epoch metrics and by --grid.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Include the convergence-consistency pair (default on).
    #[arg(long, overrides_with = "no_p1")]
    pub p1: bool,
    #[arg(long, overrides_with = "p1")]
    pub no_p1: bool,
    /// Include the adversarial-consistency pair (default on).
    #[arg(long, overrides_with = "no_p2")]
    pub p2: bool,
    #[arg(long, overrides_with = "p2")]
    pub no_p2: bool,
    /// Try every learning rate of the grid and keep the best on --valid.
    #[arg(long, conflicts_with = "lr")]
    pub grid: bool,
    /// Learning rates for --grid, comma separated.
    #[arg(long, value_delimiter = ',', requires = "grid")]
    pub lr_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Return the parameters of the epoch with the best validation NDCG.
    #[arg(long, requires = "valid")]
    pub keep_best_valid: bool,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory (default: $RERANK_OUT_DIR or ./rerank-out).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl TrainArgs {
    /// `Some(on)` when a flag was given.
    pub fn p1_flag(&self) -> Option<bool> {
        flag_pair(self.p1, self.no_p1)
    }

    pub fn p2_flag(&self) -> Option<bool> {
        flag_pair(self.p2, self.no_p2)
    }
}

fn flag_pair(on: bool, off: bool) -> Option<bool> {
    match (on, off) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AucArg {
    PerList,
    Pooled,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub auc_mode: Option<AucArg>,
    /// Adjacent swaps tried per list for P2 obedience: a count or `all`.
    #[arg(long, value_parser = parse_trials)]
    pub p2_trials: Option<SwapTrials>,
    /// Seed of the swap sampling.
    #[arg(long)]
    pub eval_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset to score (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Dataset the variants are compared on.
    #[arg(long)]
    pub test: PathBuf,
    /// Number of repeats; repeat i uses seed base-seed + i for every variant.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Items in the probe list.
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub d_item: usize,
    #[arg(long, default_value_t = 2)]
    pub d_user: usize,
    #[arg(long, default_value_t = 4)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 1)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rank of the adjacent pair swapped for the P2 term.
    #[arg(long, default_value_t = 1)]
    pub swap_k: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    /// Test hook: add 1 to this gradient coordinate (default 0) before comparing.
    #[arg(long, num_args = 0..=1, default_missing_value = "0")]
    pub corrupt: Option<usize>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}
