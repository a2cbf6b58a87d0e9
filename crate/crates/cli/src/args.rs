use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "retouch", version, about = "Learned step-by-step global color enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write procedurally generated reference scenes as PNG files.
    GenRefs(GenRefsArgs),
    /// Synthesize distorted/reference training pairs from a folder of references.
    Distort(DistortArgs),
    /// Train a Q-network on a pair folder.
    Train(TrainArgs),
    /// Enhance one image with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Score a checkpoint on a pair folder.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct GenRefsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Catalogue {
    /// Every brightness/contrast/saturation and channel-push operation.
    Full,
    /// Whole-image brightness and contrast only.
    GlobalTone,
    /// Brightness and contrast on highlights or shadows only.
    RegionalTone,
}

#[derive(Args, Debug)]
pub struct DistortArgs {
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 10.0)]
    pub min_d: f64,
    #[arg(long, default_value_t = 20.0)]
    pub max_d: f64,
    /// Pairs per reference image.
    #[arg(long, default_value_t = 1)]
    pub per_ref: usize,
    #[arg(long, value_enum, default_value_t = Catalogue::Full)]
    pub ops: Catalogue,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ContextKind {
    /// 16x16 thumbnail of the current image.
    Tiny,
    /// Precomputed `.ctxf` vectors, one per pair stem.
    File,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ContextKind::Tiny)]
    pub context: ContextKind,
    #[arg(long, required_if_eq("context", "file"))]
    pub features_dir: Option<PathBuf>,
    /// `key = value` training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment steps (overrides `total_steps`).
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from the network and optimizer state stored in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Training log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// JSON list of the applied edits.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub max_steps: usize,
    /// Context vector for checkpoints trained with `--context file`.
    #[arg(long)]
    pub context_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Where `.ctxf` files live for checkpoints trained with external context.
    #[arg(long)]
    pub features_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}
