//! `ahue`: command-line front end for the activation-hue toolkit.
//!
//! Exit status: 0 on success, 1 when inputs fail validation or a check
//! fails, 2 on usage errors.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ahue", version, about = "Pixel-level kernel-density retrieval and activation-hue training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Memory index construction.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Classify one activation image against a memory index.
    Classify(ClassifyArgs),
    /// Spatial statistics of activations and their matches.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Loss utilities.
    #[command(subcommand)]
    Loss(LossCommand),
    /// Train the small reference network with one-hot or one-hot + hue loss.
    Train(TrainArgs),
    /// Synthetic data with planted per-class angles.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Subcommand, Debug)]
pub enum IndexCommand {
    /// Build an AHIX index from a manifest of AHUE files.
    Build(IndexBuildArgs),
}

#[derive(Subcommand, Debug)]
pub enum LossCommand {
    /// Analytic vs central-difference gradients of the combined loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Subcommand, Debug)]
pub enum SynthCommand {
    /// Write synthetic AHUE files plus a manifest.jsonl into a directory.
    Generate(SynthArgs),
}

#[derive(Subcommand, Debug)]
pub enum StatsCommand {
    /// Mean per-pixel energy map of the query images (no index needed).
    Energy(EnergyArgs),
    /// Location histogram of neighbour matches.
    Matches(MatchStatsArgs),
    /// Per-class circular mean of same- and different-class match angles.
    Angular(MatchStatsArgs),
    /// Radial/tangential split of match displacements.
    Radtan(MatchStatsArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Primary output file.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the run report (default: <OUT>.run.json).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Run single-threaded.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexModeArg {
    Exact,
    Tree,
}

#[derive(Args, Debug)]
pub struct IndexBuildArgs {
    /// JSON-lines manifest: {"path", "class_id", "image_id"} per line.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: IndexModeArg,
    /// Forest size (tree mode).
    #[arg(long, default_value_t = 32)]
    pub trees: usize,
    /// Maximum leaf size (tree mode).
    #[arg(long, default_value_t = 32)]
    pub leaf_size: usize,
    /// Candidate budget per query (tree mode); default trees*K*20.
    #[arg(long)]
    pub search_k: Option<usize>,
    /// Seed for the forest's random splits.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Save the entries without building an index.
    #[arg(long)]
    pub no_freeze: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct RetrievalArgs {
    /// AHIX memory index.
    #[arg(long)]
    pub index: PathBuf,
    /// Neighbours per query pixel.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Kernel bandwidth floor.
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    /// `exact` scans every entry even when the index has a forest; `tree`
    /// requires a forest.
    #[arg(long, value_enum)]
    pub mode: Option<IndexModeArg>,
    /// Ignore memory entries from the query's own image.
    #[arg(long)]
    pub leave_one_out: bool,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// AHUE query image.
    #[arg(long)]
    pub query: PathBuf,
    /// image_id of the query, required by --leave-one-out.
    #[arg(long)]
    pub image_id: Option<u32>,
    /// Also write every (pixel, neighbour) match as CSV.
    #[arg(long)]
    pub matches_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EnergyArgs {
    /// Manifest of query images.
    #[arg(long)]
    pub queries: PathBuf,
    /// Also write the mean energy map as a CSV grid.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterArg {
    Same,
    Different,
    All,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingArg {
    Uniform,
    Kernel,
}

#[derive(Args, Debug)]
pub struct MatchStatsArgs {
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Manifest of query images.
    #[arg(long)]
    pub queries: PathBuf,
    /// Which matches to include (matches, radtan).
    #[arg(long, value_enum, default_value = "all")]
    pub filter: FilterArg,
    /// Histogram bins per axis (matches); default is the activation width.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Match weighting for circular means (angular).
    #[arg(long, value_enum, default_value = "uniform")]
    pub weighting: WeightingArg,
    /// Seed for the shuffled-label null (angular).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write histograms as CSV grids (matches).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelModeArg {
    EquallySpaced,
    RandomPermutation,
    RandomAngles,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Class count; drawn from [2, 10] per trial when omitted.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "random-permutation")]
    pub mode: LabelModeArg,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossArg {
    Onehot,
    OnehotHue,
    Both,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `synth` or a directory containing manifest.jsonl.
    #[arg(long, default_value = "synth")]
    pub data: String,
    #[arg(long, value_enum, default_value = "onehot-hue")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Peak learning rate (cosine-annealed to --lr-min).
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lr_min: f64,
    /// Training seed (also seeds synthetic data).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Several training seeds for a comparison table; overrides --seed for
    /// training, while --seed still seeds synthetic data.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Cross-validation folds; 0 trains on everything.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_enum, default_value = "random-permutation")]
    pub label_mode: LabelModeArg,
    /// Weight of the hue term.
    #[arg(long, default_value_t = 1.0)]
    pub hue_weight: f64,
    /// Optional hidden ReLU layer width in the hue head.
    #[arg(long)]
    pub hue_hidden: Option<usize>,
    /// Disable flip and pad-crop augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Images per class when --data synth.
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Also write the comparison table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// 16×16 RGB images with a coloured blob at a class-specific angle.
    Images,
    /// 7×7 post-ReLU activation maps with class-specific angular structure.
    Activations,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "images")]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    /// Images per class (default 100 for images, 80 for activations).
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli, argv[1..].to_vec()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<commands::UsageError>().is_some();
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
