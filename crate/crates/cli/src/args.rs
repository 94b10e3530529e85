use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::UsageError;

/// Effort-conditioned motion generation: metrics, augmentation, training,
/// sampling and evaluation.
#[derive(Debug, Parser)]
#[command(name = "effortgen", version = env!("EFFORTGEN_VERSION"))]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-region effort metrics.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Write a synthetic labelled motion corpus.
    Synth(SynthArgs),
    /// Pacing augmentation of a motion directory.
    Augment(AugmentArgs),
    /// Train the denoiser on a motion directory.
    Train(TrainArgs),
    /// Sample motions under (scaled) effort metrics.
    Generate(GenerateArgs),
    /// Evaluation runs.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
    /// Re-run a recorded invocation from its run.json.
    Replay(ReplayArgs),
}

#[derive(Debug, Subcommand)]
pub enum MetricsCommand {
    /// Measure a motion file.
    Extract(ExtractArgs),
    /// Print the reference per-region baseline table.
    Baseline(BaselineArgs),
}

#[derive(Debug, Subcommand)]
pub enum EvaluateCommand {
    /// Metric-to-motion consistency over effort scales.
    Trend(TrendArgs),
}

/// Flags shared by every run.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file overriding the subcommand defaults; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to record the resolved invocation (default: next to the output).
    #[arg(long)]
    pub run_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Write the metrics here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Action ids, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub actions: Option<Vec<usize>>,
    #[arg(long)]
    pub per_action: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Amplitude range `lo..hi`.
    #[arg(long, value_parser = parse_range)]
    pub amplitude: Option<[f64; 2]>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    pub input_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Speed-up factors (frames skipped), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Slow-down factors (frames inserted), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub m: Option<Vec<usize>>,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss log (default: `<out>.loss.csv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Continue from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

/// Effort-target flags shared by `generate` and `evaluate trend`.
#[derive(Debug, Args, Clone)]
pub struct SamplingArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub guidance: Option<f64>,
    /// A value, a comma list, or `a..b:step`.
    #[arg(long, value_parser = parse_scales)]
    pub scale: Option<Scales>,
    /// Regions the scale applies to (default: all).
    #[arg(long, value_delimiter = ',')]
    pub regions: Option<Vec<String>>,
    /// Base metrics file (default: the reference baseline table).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub prompt: Option<String>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Direct assignment `region=peak,collective`, applied after scaling.
    #[arg(long = "set-metric", value_parser = parse_set_metric)]
    pub set_metric: Vec<(String, [f64; 2])>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrendArgs {
    /// Prompts, separated by `;` (default: the whole vocabulary).
    #[arg(long, value_delimiter = ';')]
    pub prompts: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub run: PathBuf,
    /// Redirect every output into this directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub run_json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scales(pub Vec<f64>);

/// Rounds away the drift of repeated float addition in ranges.
fn tidy(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

fn number(s: &str) -> Result<f64, UsageError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| UsageError(format!("`{s}` is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(UsageError(format!("`{s}` is not finite")))
    }
}

pub fn parse_scales(s: &str) -> Result<Scales, UsageError> {
    let values = if let Some((a, rest)) = s.split_once("..") {
        let (b, step) = match rest.split_once(':') {
            Some((b, step)) => (number(b)?, number(step)?),
            None => (number(rest)?, 0.1),
        };
        let a = number(a)?;
        if step <= 0.0 || b < a {
            return Err(UsageError(format!("range `{s}` needs a <= b and a positive step")));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| tidy(a + i as f64 * step)).collect()
    } else {
        s.split(',').map(number).collect::<Result<Vec<_>, _>>()?
    };
    if values.iter().any(|&v| v < 0.0) {
        return Err(UsageError(format!("scales must be non-negative: `{s}`")));
    }
    Ok(Scales(values))
}

pub fn parse_range(s: &str) -> Result<[f64; 2], UsageError> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| UsageError(format!("expected `lo..hi`, got `{s}`")))?;
    let (a, b) = (number(a)?, number(b)?);
    if a > b {
        return Err(UsageError(format!("empty range `{s}`")));
    }
    Ok([a, b])
}

pub fn parse_set_metric(s: &str) -> Result<(String, [f64; 2]), UsageError> {
    let bad = || UsageError(format!("expected `region=peak,collective`, got `{s}`"));
    let (region, values) = s.split_once('=').ok_or_else(bad)?;
    let (p, c) = values.split_once(',').ok_or_else(bad)?;
    Ok((region.trim().to_owned(), [number(p)?, number(c)?]))
}
