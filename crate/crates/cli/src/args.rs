use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "msf",
    version,
    about = "Multi-frame point-cloud pooling harness"
)]
pub struct Cli {
    /// Worker threads; defaults to all cores (1 for `bench`).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene from a JSON scene config.
    Gen(GenArgs),
    /// Compare optimized pooling with the exhaustive oracle on a scene.
    Verify(VerifyArgs),
    /// Time naive and optimized pooling over a ladder of point counts.
    Bench(BenchArgs),
    /// Foreground recall per gamma and window length.
    Recall(RecallArgs),
    /// Full forward pipeline over a scene.
    Run(RunArgs),
    /// Write seeded default network weights.
    InitWeights(InitWeightsArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's frame count.
    #[arg(long)]
    pub frames: Option<u32>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PoolingFlags {
    #[arg(long, default_value_t = 0.4)]
    pub voxel_size: f64,
    #[arg(long, default_value_t = 32)]
    pub points_per_voxel: usize,
    #[arg(long, default_value_t = 128)]
    pub points_per_proposal: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.1)]
    pub gamma: f64,
    /// Use only the last N frames.
    #[arg(long)]
    pub frames: Option<usize>,
    #[command(flatten)]
    pub pooling: PoolingFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [168_000usize, 674_000, 1_382_000])]
    pub sizes: Vec<usize>,
    /// Proposals per scene.
    #[arg(long, default_value_t = 128)]
    pub proposals: usize,
    #[arg(long, default_value_t = 128)]
    pub points_per_proposal: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RecallArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long = "gamma", value_delimiter = ',', default_values_t = [1.0, 1.1])]
    pub gammas: Vec<f64>,
    #[arg(long = "frames", value_delimiter = ',', default_values_t = [4usize, 8, 16])]
    pub frames: Vec<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Network weights JSON; seeded defaults when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Pipeline config JSON (feature width, heads, blocks, ...).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.1)]
    pub gamma: f64,
    /// Use only the last N frames.
    #[arg(long)]
    pub frames: Option<usize>,
    #[command(flatten)]
    pub pooling: PoolingFlags,
    /// Shuffle every pooled point set before encoding.
    #[arg(long)]
    pub permute_points: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InitWeightsArgs {
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Window length the heads are sized for.
    #[arg(long)]
    pub frames: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
