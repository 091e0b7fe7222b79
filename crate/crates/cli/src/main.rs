use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod tables;

/// Patch-dataset tooling for local feature descriptors.
#[derive(Debug, Parser)]
#[command(name = "patchkit", version, about)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file whose keys mirror the command-line flags; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect or sample keypoints on an image or a registered view.
    Detect(DetectArgs),
    /// Cut patch sets out of a registered view.
    Extract(ExtractArgs),
    /// Augment a patch store.
    Augment(AugmentArgs),
    /// Describe patches into an embedding file.
    Describe(DescribeArgs),
    /// Triplet margin loss between anchor and positive embeddings.
    Loss(LossArgs),
    /// Reduce a dataset by per-set hardness.
    Reduce(ReduceArgs),
    /// Sample training batches from patch stores.
    Sample(SampleArgs),
    /// Evaluation metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// PCA compression of embeddings.
    #[command(subcommand)]
    Pca(PcaCommand),
    /// Keep cameras whose sample images pass the quality filters.
    Curate(CurateArgs),
    /// Group images into views from pairwise homographies.
    ClusterViews(ClusterArgs),
    /// Translate keypoints.
    Shift(ShiftArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DetectMode {
    Detect,
    Sample,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Normalization {
    ScaleNormalized,
    InversePower,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RepresentativeArg {
    Random,
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ResponseArg {
    Uniform,
    Hessian,
    SqrtHessian,
    SqrtHessianNms,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SourceArg {
    Random,
    Mean,
    Median,
    Average,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// An image, or a directory holding one registered view.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "detect")]
    mode: DetectMode,
    #[arg(long, default_value_t = 1.8)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    k1: u32,
    #[arg(long, default_value_t = 4)]
    k2: u32,
    /// Base scale in pixels.
    #[arg(long, default_value_t = 30.0)]
    bs: f64,
    #[arg(long, default_value_t = 0.00016)]
    threshold: f64,
    #[arg(long, default_value_t = 2000)]
    max_points: usize,
    #[arg(long, value_enum, default_value = "scale-normalized")]
    normalization: Normalization,
    /// Stand-in image when detecting on a directory.
    #[arg(long, value_enum, default_value = "median")]
    representative: RepresentativeArg,
    /// Response function of the sampling map.
    #[arg(long, value_enum, default_value = "sqrt-hessian")]
    response: ResponseArg,
    /// Window side for `sqrt-hessian-nms`.
    #[arg(long, default_value_t = 5)]
    nms_window: usize,
    /// Image(s) the sampling map is computed on.
    #[arg(long, value_enum, default_value = "average")]
    source: SourceArg,
    /// Keypoints to sample.
    #[arg(long, default_value_t = 5000)]
    count: usize,
    #[arg(long, default_value_t = 30.0)]
    min_scale: f64,
    #[arg(long, default_value_t = 120.0)]
    max_scale: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    view_dir: PathBuf,
    #[arg(long)]
    keypoints: PathBuf,
    #[arg(long, default_value_t = 96)]
    patch_size: usize,
    #[arg(long, default_value_t = 0)]
    view_id: u64,
    #[arg(long, default_value_t = 0)]
    first_label: u64,
    /// Replace keypoint angles by uniform random ones.
    #[arg(long)]
    random_angles: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RecipeArg {
    Amos,
    Liberty,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    recipe: RecipeArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Baseline,
}

#[derive(Debug, Args)]
struct DescribeArgs {
    #[arg(long)]
    patches: PathBuf,
    #[arg(long, value_enum, default_value = "baseline")]
    method: MethodArg,
    /// Describe only this patch of every set (default: all patches).
    #[arg(long)]
    view_index: Option<usize>,
    /// Also write one set label per output row.
    #[arg(long)]
    labels_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LossArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Sum over labels of the n-positive loss instead of the pairwise mean.
    #[arg(long)]
    generalized: bool,
    /// Labels for the rows of `a` (reused for `b`) or of `a` then `b`.
    #[arg(long, requires = "generalized")]
    labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReduceMode {
    Low,
    Medium,
    High,
}

#[derive(Debug, Args)]
struct ReduceArgs {
    /// CSV with header `label,mean_e,count`.
    #[arg(long)]
    hardness: PathBuf,
    #[arg(long)]
    target: usize,
    #[arg(long, value_enum, default_value = "medium")]
    mode: ReduceMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Uniform,
    ImagePairs,
    NoCollisions,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CombineArg {
    PerEpoch,
    PerBatch,
    InBatch,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Patch-store directories of one dataset, comma separated; repeat per dataset.
    #[arg(long, required = true)]
    dataset: Vec<String>,
    #[arg(long, value_enum, default_value = "uniform")]
    strategy: StrategyArg,
    /// Patches per batch.
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    #[arg(long, default_value_t = 2)]
    positives: usize,
    #[arg(long, default_value_t = 1)]
    source_views: usize,
    #[arg(long, default_value_t = 1)]
    batches: usize,
    #[arg(long, value_enum, default_value = "per-batch")]
    combine: CombineArg,
    /// Dataset probabilities for `per-batch`, comma separated.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Defaults to `--batches`.
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Mean AP of matching reference rows to target rows.
    Matching {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        /// Target row per reference row (default: identity).
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// FPR at 95% recall of `score,label` rows.
    Fpr95 {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Average precision of `score,label` rows.
    Ap {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Mean AP over queries of `query,score,label` rows.
    Retrieval {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Mean average accuracy of pose errors in degrees.
    Maa {
        #[arg(long)]
        errors: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        max: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
    },
}

#[derive(Debug, Subcommand)]
enum PcaCommand {
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 128)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Keep projected rows at their natural length.
        #[arg(long)]
        no_renorm: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct CurateArgs {
    /// One subdirectory of sample images per camera.
    #[arg(long)]
    cameras: PathBuf,
    /// JSON map from `camera/file` to `{sky_fraction, dynamic_objects}`.
    #[arg(long)]
    externals: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    /// JSON map from `"i,j"` to `{"H": [9 numbers], "inliers": n}` or null.
    #[arg(long)]
    pairs: PathBuf,
    /// Number of images (default: largest index in the pairs + 1).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ShiftArgs {
    #[arg(long)]
    keypoints: PathBuf,
    #[arg(long)]
    dx: f64,
    #[arg(long)]
    dy: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<OsString> = std::env::args_os().collect();
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
