mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use shapecode::CodecId;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "shapecode", version, about = "Shape codes, detection targets and mask-level evaluation")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Side of the canonical frame codes live in.
    #[arg(long, global = true, default_value_t = shapecode::CANONICAL_SIZE)]
    canonical_size: usize,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CodecKind {
    Grid,
    Radial,
    Learned,
}

impl From<CodecKind> for CodecId {
    fn from(k: CodecKind) -> Self {
        match k {
            CodecKind::Grid => CodecId::Grid,
            CodecKind::Radial => CodecId::Radial,
            CodecKind::Learned => CodecId::Learned,
        }
    }
}

#[derive(Debug, Args)]
pub struct CodecArgs {
    #[arg(long, value_enum)]
    pub codec: CodecKind,
    /// Code length; grid codes need a perfect square. Learned codes take it
    /// from the model when omitted.
    #[arg(long)]
    pub dim: Option<usize>,
    /// STAE model file for the learned codec.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Number of object categories.
    #[arg(long)]
    pub num_classes: usize,
    /// Shape code length inside each predictor block.
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 7)]
    pub s: usize,
    #[arg(long, default_value_t = 2)]
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OverlapKind {
    Box,
    Mask,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode every mask of a manifest into an STSC code file (or CSV).
    Encode {
        #[command(flatten)]
        codec: CodecArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Output file; a `.csv` extension writes one code per line.
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode an STSC code file into PBM masks.
    Decode {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        /// Output directory; masks are named by row index.
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean reconstruction error per code size.
    ReconTable {
        #[arg(long, value_enum)]
        codec: CodecKind,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        /// Learned models, matched to `--dims` by embedding size.
        #[arg(long)]
        model: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean IoU after adding Gaussian noise to the codes.
    NoiseSweep {
        #[command(flatten)]
        codec: CodecArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.2,0.5")]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pose variance and category agreement among nearest neighbours.
    NnStats {
        #[command(flatten)]
        codec: CodecArgs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoising autoencoder on a manifest.
    TrainAe {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 20)]
        dim: usize,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 60)]
        lr_halving_period: usize,
        #[arg(long, default_value_t = 0.2)]
        noise_sigma: f64,
        /// Model output (STAE).
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss curve as CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Compare autoencoder gradients with central finite differences.
    Gradcheck {
        /// `tiny` for the built-in 8x8 model, or an STAE file.
        #[arg(long, default_value = "tiny")]
        model: String,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Embedding size of the tiny model.
        #[arg(long, default_value_t = 4)]
        dim: usize,
        /// Check only this many random parameters.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Build grid target tensors from instance annotations.
    BuildTargets {
        #[command(flatten)]
        codec: CodecArgs,
        #[arg(long)]
        instances: PathBuf,
        /// Category names in index order; defaults to the sorted names found.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        #[arg(long, default_value_t = 7)]
        s: usize,
        #[arg(long, default_value_t = 2)]
        b: usize,
        /// Tensor file (STSC, codec 255), one row per image.
        #[arg(long)]
        out: PathBuf,
        /// Image ids in row order, one per line.
        #[arg(long)]
        ids: Option<PathBuf>,
    },
    /// Detection loss of prediction tensors against targets.
    Loss {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        lambda_shape: f64,
        #[arg(long, default_value_t = 5.0)]
        lambda_box: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_obj: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda_noobj: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_class: f64,
        /// Per-row loss terms as CSV.
        #[arg(long)]
        out: PathBuf,
        /// Gradient tensors (STSC, codec 255).
        #[arg(long)]
        grad: Option<PathBuf>,
    },
    /// Turn prediction tensors into scored detections.
    DecodeDets {
        #[arg(long)]
        pred: PathBuf,
        /// Category names in index order.
        #[arg(long, value_delimiter = ',', required = true)]
        classes: Vec<String>,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 7)]
        s: usize,
        #[arg(long, default_value_t = 2)]
        b: usize,
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        /// Image ids in row order; rows are numbered otherwise.
        #[arg(long)]
        ids: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-image, per-category non-maximum suppression.
    Nms {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, value_enum, default_value_t = OverlapKind::Mask)]
        overlap: OverlapKind,
        /// Codec of the detections' shape codes (mask overlap only).
        #[arg(long, value_enum)]
        codec: Option<CodecKind>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Canvas on which shapes are placed for mask overlap.
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mask-level mean average precision.
    EvalMap {
        #[arg(long)]
        dets: PathBuf,
        /// Ground-truth instances.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.7")]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        score_threshold: f64,
        /// Minimum ground-truth area, in pixels, of the large bucket.
        #[arg(long, default_value_t = 9216.0)]
        large_area: f64,
        /// Codec of the detections' shape codes.
        #[arg(long, value_enum)]
        codec: Option<CodecKind>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Canvas for images without ground truth.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic shape dataset.
    GenSynth {
        /// Comma-separated families; all when omitted.
        #[arg(long)]
        families: Option<String>,
        /// Shapes per family.
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        canvas: usize,
        /// Skip pose annotations.
        #[arg(long)]
        no_poses: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

pub struct Globals {
    pub seed: u64,
    pub frame: usize,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?;
    }
    if cli.canonical_size < 8 {
        return Err(CliError::Usage(format!("--canonical-size {} is below 8", cli.canonical_size)));
    }
    let g = Globals { seed: cli.seed, frame: cli.canonical_size };
    use commands as c;
    match cli.command {
        Command::Encode { codec, manifest, out } => c::encode(&g, &codec, &manifest, &out),
        Command::Decode { codes, model, width, height, out } => {
            c::decode(&g, &codes, model.as_deref(), width, height, &out)
        }
        Command::ReconTable { codec, dims, model, manifest, out } => {
            c::recon_table(&g, codec, &dims, &model, &manifest, &out)
        }
        Command::NoiseSweep { codec, manifest, sigmas, trials, out } => {
            c::noise_sweep(&g, &codec, &manifest, &sigmas, trials, &out)
        }
        Command::NnStats { codec, train, val, k, out } => c::nn_stats(&g, &codec, &train, &val, k, &out),
        Command::TrainAe { manifest, dim, epochs, batch_size, lr, lr_halving_period, noise_sigma, out, curve } => {
            let cfg = shapecode::TrainConfig {
                batch_size,
                epochs,
                lr0: lr,
                lr_halving_period,
                noise_sigma,
                seed: g.seed,
                frozen_layers: Vec::new(),
            };
            c::train_ae(&g, &manifest, dim, &cfg, &out, curve.as_deref())
        }
        Command::Gradcheck { model, eps, tol, dim, samples } => c::gradcheck(&g, &model, eps, tol, dim, samples),
        Command::BuildTargets { codec, instances, classes, s, b, out, ids } => {
            c::build_targets(&g, &codec, &instances, &classes, s, b, &out, ids.as_deref())
        }
        Command::Loss {
            grid,
            pred,
            target,
            lambda_shape,
            lambda_box,
            lambda_obj,
            lambda_noobj,
            lambda_class,
            out,
            grad,
        } => {
            let w = shapecode::detection::LossWeights {
                shape: lambda_shape,
                bbox: lambda_box,
                obj: lambda_obj,
                noobj: lambda_noobj,
                class: lambda_class,
            };
            c::loss(&grid, &pred, &target, &w, &out, grad.as_deref())
        }
        Command::DecodeDets { pred, classes, dim, s, b, threshold, ids, out } => {
            c::decode_dets(&pred, &classes, dim, s, b, threshold, ids.as_deref(), &out)
        }
        Command::Nms { dets, iou, overlap, codec, model, width, height, out } => {
            c::nms(&g, &dets, iou, overlap, codec, model.as_deref(), (width, height), &out)
        }
        Command::EvalMap {
            dets,
            gt,
            thresholds,
            score_threshold,
            large_area,
            codec,
            model,
            width,
            height,
            out,
        } => {
            let cfg = shapecode::eval::EvalConfig { iou_thresholds: thresholds, score_threshold, large_area };
            c::eval_map(&g, &dets, &gt, &cfg, codec, model.as_deref(), width.zip(height), &out)
        }
        Command::GenSynth { families, count, canvas, no_poses, out } => {
            c::gen_synth(&g, families.as_deref(), count, canvas, !no_poses, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("shapecode: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
