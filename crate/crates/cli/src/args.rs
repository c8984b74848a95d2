use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "shapebp",
    version,
    about = "Shape histograms and shape back-projection for point clouds"
)]
pub struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    /// Results do not depend on this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Only print errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    /// Print progress and summaries (repeat for more detail).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn log_level(&self) -> LevelFilter {
        if self.quiet {
            return LevelFilter::Error;
        }
        match self.verbose {
            0 => LevelFilter::Warn,
            1 => LevelFilter::Info,
            _ => LevelFilter::Debug,
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate a synthetic cloud and its ground-truth labels from a TOML scene spec.
    Synth(SynthArgs),
    /// Build a shape histogram from a sample cloud.
    Histogram(HistogramArgs),
    /// Score every point of a cloud against a shape histogram.
    Backproject(BackprojectArgs),
    /// Planar/curved classification against a planar sample.
    Classify(TaskArgs),
    /// Crease detection at a small radius against a planar sample.
    Edges(TaskArgs),
    /// Compare a predicted label file with ground truth.
    Eval(EvalArgs),
    /// Time the per-point INAD computation for several neighbor counts.
    Bench(BenchArgs),
    /// RANSAC plane or cylinder extraction (comparison baseline).
    Ransac(RansacArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct InputArgs {
    /// Input cloud (.pcd, .ply or .xyz, ASCII).
    #[arg(long, short)]
    pub input: PathBuf,

    /// Skip records with NaN or infinite coordinates instead of failing.
    #[arg(long)]
    pub drop_non_finite: bool,
}

/// Parameters of the normal and INAD estimation.
#[derive(Debug, Args, Serialize, Clone)]
pub struct ShapeArgs {
    /// INAD neighborhood radius in meters.
    #[arg(long, short)]
    pub radius: Option<f64>,

    /// Normal-estimation radius in meters (default: 2/3 of --radius).
    #[arg(long)]
    pub normal_radius: Option<f64>,

    /// Outlier rate c: angles farther than c standard deviations from the
    /// mean are discarded.
    #[arg(long, default_value_t = 1.0)]
    pub outlier_rate: f64,

    /// Apply the outlier test once instead of repeating it until stable.
    #[arg(long)]
    pub single_pass: bool,

    /// Upper bound on outlier-rejection passes.
    #[arg(long, default_value_t = 50)]
    pub max_passes: usize,

    /// Minimum neighbors for a valid normal.
    #[arg(long, default_value_t = 5)]
    pub min_neighbors: usize,

    /// Normal orientation viewpoint "x,y,z" (default: the cloud's sensor origin).
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub viewpoint: Option<[f64; 3]>,

    /// Use the normals stored in the input file instead of estimating them.
    #[arg(long)]
    pub use_stored_normals: bool,
}

#[derive(Debug, Args, Serialize, Clone, Copy)]
pub struct BinArgs {
    /// Bins along the mean-angle axis.
    #[arg(long, default_value_t = 10)]
    pub bins_mu: usize,

    /// Bins along the angle-spread axis.
    #[arg(long, default_value_t = 10)]
    pub bins_sigma: usize,

    /// Upper end of the mean-angle axis, degrees.
    #[arg(long, default_value_t = 90.0)]
    pub mu_max: f64,

    /// Upper end of the angle-spread axis, degrees.
    #[arg(long, default_value_t = 45.0)]
    pub sigma_max: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Scene spec (TOML).
    #[arg(long, short)]
    pub spec: PathBuf,

    /// Output cloud; the format follows the extension.
    #[arg(long, short)]
    pub out: PathBuf,

    /// Output label file (default: the cloud path with extension .labels).
    #[arg(long)]
    pub labels: Option<PathBuf>,

    /// Override the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Override the spec's noise standard deviation, meters.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct HistogramArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[command(flatten)]
    pub shape: ShapeArgs,

    #[command(flatten)]
    pub bins: BinArgs,

    /// Output histogram (JSON).
    #[arg(long, short)]
    pub out: PathBuf,

    /// Also write per-point INAD pairs as CSV.
    #[arg(long)]
    pub inad_csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BackprojectArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Shape histogram (JSON).
    #[arg(long = "histogram")]
    pub histogram: PathBuf,

    /// INAD parameters; --radius defaults to the histogram's source radius.
    #[command(flatten)]
    pub shape: ShapeArgs,

    /// Output likelihood CSV (`point_id,score,valid`); stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,

    /// Also write a PLY colored from blue (0) to green (1).
    #[arg(long)]
    pub ply: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TaskArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Planar shape histogram built at the same radius.
    #[arg(long, conflicts_with = "sample", required_unless_present = "sample")]
    pub histogram: Option<PathBuf>,

    /// Planar sample cloud; its histogram is built with the same parameters.
    #[arg(long)]
    pub sample: Option<PathBuf>,

    /// --radius defaults to 0.03 for classify and 0.006 for edges.
    #[command(flatten)]
    pub shape: ShapeArgs,

    #[command(flatten)]
    pub bins: BinArgs,

    /// Decision threshold tau in (0, 1).
    #[arg(long, short, default_value_t = 0.5)]
    pub threshold: f64,

    /// Output label file.
    #[arg(long, short)]
    pub out: PathBuf,

    /// Also write the planar likelihood CSV.
    #[arg(long)]
    pub scores: Option<PathBuf>,

    /// Also write a PLY colored by label.
    #[arg(long)]
    pub ply: Option<PathBuf>,

    /// Ground-truth labels; enables the metrics report.
    #[arg(long)]
    pub truth: Option<PathBuf>,

    /// Metrics report (JSON; an aligned table goes to stderr). Requires --truth.
    #[arg(long, requires = "truth")]
    pub report: Option<PathBuf>,

    /// Record wall times in the report (makes it run-dependent).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Predicted labels.
    #[arg(long)]
    pub pred: PathBuf,

    /// Ground-truth labels.
    #[arg(long)]
    pub truth: PathBuf,

    /// Classes to score, comma separated (planar, curved, edge).
    #[arg(long, value_delimiter = ',', default_value = "planar,curved")]
    pub classes: Vec<String>,

    /// Report (JSON); stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Cloud to benchmark on; a noisy synthetic plane when omitted.
    #[arg(long, short)]
    pub input: Option<PathBuf>,

    /// Side length in samples of the synthetic plane.
    #[arg(long, default_value_t = 200)]
    pub grid: usize,

    /// Sample spacing of the synthetic plane, meters.
    #[arg(long, default_value_t = 0.001)]
    pub resolution: f64,

    /// Noise of the synthetic plane, meters.
    #[arg(long, default_value_t = 0.0005)]
    pub noise: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Neighbor counts, comma separated.
    #[arg(long = "k", value_delimiter = ',', default_value = "10,100,500")]
    pub k_list: Vec<usize>,

    /// Timed passes per k after one warm-up pass.
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,

    /// Query points per pass (0: every valid point).
    #[arg(long, default_value_t = 2000)]
    pub sample_points: usize,

    /// Normal-estimation radius, meters.
    #[arg(long, default_value_t = 0.004)]
    pub normal_radius: f64,

    #[arg(long, default_value_t = 1.0)]
    pub outlier_rate: f64,

    #[arg(long)]
    pub single_pass: bool,

    /// Spread queries over all threads (throughput, not latency).
    #[arg(long)]
    pub parallel: bool,

    /// Report (JSON); the table goes to stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RansacArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Model to fit: plane or cylinder.
    #[arg(long, default_value = "cylinder")]
    pub model: String,

    /// Number of extraction rounds.
    #[arg(long, default_value_t = 1)]
    pub instances: usize,

    /// Inlier distance to the model surface, meters.
    #[arg(long, default_value_t = 0.002)]
    pub inlier_threshold: f64,

    #[arg(long, default_value_t = 1000)]
    pub max_iterations: usize,

    #[arg(long, default_value_t = 50)]
    pub min_inliers: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Smallest accepted cylinder radius, meters.
    #[arg(long, requires = "radius_max")]
    pub radius_min: Option<f64>,

    /// Largest accepted cylinder radius, meters.
    #[arg(long, requires = "radius_min")]
    pub radius_max: Option<f64>,

    /// Normal-estimation radius for cylinder sampling, meters.
    #[arg(long, default_value_t = 0.02)]
    pub normal_radius: f64,

    #[arg(long, default_value_t = 5)]
    pub min_neighbors: usize,

    /// Normal orientation viewpoint "x,y,z" (default: the cloud's sensor origin).
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub viewpoint: Option<[f64; 3]>,

    /// Use the normals stored in the input file.
    #[arg(long)]
    pub use_stored_normals: bool,

    /// Output labels: inliers get the model's class (curved or planar).
    #[arg(long, short)]
    pub out: PathBuf,

    /// Also write the fitted models (JSON).
    #[arg(long)]
    pub models: Option<PathBuf>,

    /// Ground-truth labels; enables the metrics report.
    #[arg(long)]
    pub truth: Option<PathBuf>,

    /// Metrics report (JSON). Requires --truth.
    #[arg(long, requires = "truth")]
    pub report: Option<PathBuf>,
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got {s:?}"));
    }
    let mut out = [0.0f64; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("not a number: {p:?}"))?;
        if !o.is_finite() {
            return Err(format!("not finite: {p:?}"));
        }
    }
    Ok(out)
}
