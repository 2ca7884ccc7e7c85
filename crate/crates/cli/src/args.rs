use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use cfx_core::proto::Band;

#[derive(Debug, Parser)]
#[command(
    name = "cfx",
    version,
    about = "Prototype-based sparse counterfactuals for multichannel time series"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic three-class beat-train dataset.
    Synth(SynthArgs),
    /// Fit and calibrate the built-in reference classifier.
    Fit(FitArgs),
    /// Mine per-class prototypes into a database directory.
    Mine(MineArgs),
    /// Build counterfactuals for one record.
    Explain(ExplainArgs),
    /// Score saved counterfactuals and write metric tables.
    Evaluate(EvaluateArgs),
    /// Extract interval rules from attributions.
    Rules(RulesArgs),
    /// Draw an SVG overlay for a saved counterfactual.
    Render(RenderArgs),
    /// Serve a reference model over the adapter protocol on stdin/stdout.
    AdapterServe(AdapterServeArgs),
}

pub fn parse_band(s: &str) -> Result<Band, String> {
    match s {
        "auto" => Ok(Band::Auto),
        "none" | "unbanded" => Ok(Band::Unbanded),
        n => n
            .parse::<usize>()
            .map(Band::Fixed)
            .map_err(|_| format!("expected 'auto', 'none' or a half-width, got '{n}'")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Reference model file written by `cfx fit`.
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "adapter",
        conflicts_with = "adapter"
    )]
    pub model: Option<PathBuf>,
    /// Shell command of an external model adapter.
    #[arg(long, value_name = "CMD")]
    pub adapter: Option<String>,
    /// Per-class decision thresholds, comma separated. Adapters without
    /// this flag are calibrated on the dataset.
    #[arg(long, value_delimiter = ',', value_name = "T1,T2,..")]
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_per_class: usize,
    /// Extra records carrying two labels.
    #[arg(long, default_value_t = 0)]
    pub n_mixed: usize,
    #[arg(long, default_value_t = 500)]
    pub timesteps: usize,
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// Keep raw amplitudes instead of z-scoring.
    #[arg(long)]
    pub raw: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// DTW band half-width: `auto` (T/10), `none`, or a number of samples.
    #[arg(long, default_value = "auto", value_parser = parse_band)]
    pub band: Band,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output database directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub db: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub record_id: String,
    /// Target class name or index; chosen automatically when omitted.
    #[arg(long)]
    pub target: Option<String>,
    /// Also draw an overlay of `--svg-variant` here.
    #[arg(long, value_name = "PATH")]
    pub svg: Option<PathBuf>,
    #[arg(long, default_value = "Sparse")]
    pub svg_variant: String,
    /// First keep ratio tried by the sparsifier.
    #[arg(long)]
    pub keep_ratio: Option<f64>,
    #[arg(long)]
    pub max_keep_ratio: Option<f64>,
    /// Shortest modified run kept, in samples.
    #[arg(long)]
    pub min_segment: Option<usize>,
    #[arg(long, default_value = "auto", value_parser = parse_band)]
    pub band: Band,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the result files.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// A result directory, or a directory of result directories.
    #[arg(long, value_name = "DIR")]
    pub results: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "auto", value_parser = parse_band)]
    pub band: Band,
    /// Composite quality weights: validity, sparsity, stability, margin.
    #[arg(long, value_delimiter = ',', num_args = 4, value_name = "W")]
    pub weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the CSV tables.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RulesArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Attribution tensor (`attr.f32` or its directory).
    #[arg(
        long,
        value_name = "FILE",
        required_unless_present = "occlusion",
        conflicts_with = "occlusion"
    )]
    pub attr: Option<PathBuf>,
    /// Compute occlusion attributions instead of reading a file.
    #[arg(long)]
    pub occlusion: bool,
    #[arg(long, default_value_t = 25)]
    pub window: usize,
    #[arg(long, default_value_t = 90.0)]
    pub percentile: f64,
    #[arg(long, default_value_t = 1000)]
    pub n_perturb: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON-lines file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Result directory written by `cfx explain`.
    #[arg(long, value_name = "DIR")]
    pub result: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[arg(long, default_value = "Sparse")]
    pub variant: String,
    /// Attribution tensor for a heat strip (target-class slice).
    #[arg(long, value_name = "FILE")]
    pub attr: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdapterServeArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
}
