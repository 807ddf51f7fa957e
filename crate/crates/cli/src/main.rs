//! `keytailor` command-line entry point.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 I/O or format
//! error, 4 numeric failure (non-finite loss, failed gradient check).

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use keytailor::gradsuite::Scope;
use keytailor::Error;

use config::{FileConfig, InferSection, ModelSection, SamplerSection, TrainSection};

#[derive(Parser, Debug)]
#[command(
    name = "keytailor",
    version,
    about = "Keyframe-guided video try-on at desk scale"
)]
struct Cli {
    /// TOML file with defaults for any flag; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Raise log verbosity (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render seeded synthetic samples.
    GenSynthetic(GenArgs),
    /// Select keyframes for a sample and report every score.
    SampleKeyframes(KeyframeArgs),
    /// Per-frame score table, including background integrity.
    ScoreFrames(KeyframeArgs),
    /// Fine-tune the adapters on one sample.
    Train(TrainArgs),
    /// Generate a try-on video from a checkpoint.
    Infer(InferArgs),
    /// SSIM and PSNR between two videos.
    Eval(EvalArgs),
    /// Finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Seeds as `a..b` (inclusive) or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Default)]
struct SamplerFlags {
    /// Free-text instruction naming views and actions to cover.
    #[arg(long)]
    instruction: Option<String>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Four comma-separated weights for the algorithm scoring mode.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    weights: Option<Vec<f64>>,
    /// Minimum keyframe spacing in seconds (default: a fifth of the video span).
    #[arg(long)]
    t_thres: Option<f64>,
    #[arg(long)]
    occlu_thres: Option<f64>,
    #[arg(long)]
    score_diff_min: Option<f64>,
    /// `eq1` or `algorithm`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    clarity_threshold: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct AblationFlags {
    #[arg(long)]
    no_iks: bool,
    #[arg(long = "keyframes-1")]
    keyframes_1: bool,
    #[arg(long)]
    no_distill: bool,
    #[arg(long)]
    no_gdde: bool,
    #[arg(long)]
    no_qkey: bool,
    #[arg(long)]
    no_keybg: bool,
    #[arg(long)]
    no_fusion: bool,
    #[arg(long)]
    no_cbdo: bool,
}

#[derive(Args, Debug, Default)]
struct ModelFlags {
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    latent_channels: Option<usize>,
    /// Weight of the video background in the background fusion.
    #[arg(long)]
    alpha: Option<f64>,
    /// Seed of parameter initialization and random keyframe choice.
    #[arg(long)]
    model_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct KeyframeArgs {
    /// Sample directory or its manifest.
    #[arg(long, required_unless_present = "show_config")]
    sample: Option<PathBuf>,
    #[command(flatten)]
    sampler: SamplerFlags,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    show_config: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    sample: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Seed of the training draws.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    sampler: SamplerFlags,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    ablations: AblationFlags,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint path (default: `<out>/checkpoint.ktckpt`).
    #[arg(long)]
    checkpoint_out: Option<PathBuf>,
    /// Also sample from the trained model in memory into `<out>/infer`.
    #[arg(long)]
    infer_after: bool,
    /// Inference steps for `--infer-after`.
    #[arg(long)]
    infer_steps: Option<usize>,
    /// Noise seed for `--infer-after`.
    #[arg(long)]
    infer_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    sample: PathBuf,
    /// Euler steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Noise seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    sampler: SamplerFlags,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    ablations: AblationFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// A KTSR video or a sample directory.
    #[arg(long)]
    generated: PathBuf,
    /// A KTSR video or a sample directory.
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value = "layer")]
    scope: Scope,
    /// Seeds per case (default: 20 for layer and block, 5 for model).
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Perturb every analytic gradient to exercise the failure path.
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

impl SamplerFlags {
    fn layer(&self, into: &mut FileConfig) {
        into.instruction = self.instruction.clone();
        into.sampler = SamplerSection {
            k_max: self.k_max,
            weights: self.weights.as_ref().map(|w| [w[0], w[1], w[2], w[3]]),
            lambda: self.lambda,
            t_thres: self.t_thres,
            occlu_thres: self.occlu_thres,
            score_diff_min: self.score_diff_min,
            mode: self.mode.clone(),
            clarity_threshold: self.clarity_threshold,
        };
    }
}

impl AblationFlags {
    fn layer(&self, into: &mut FileConfig) {
        let flags = [
            ("no-iks", self.no_iks),
            ("keyframes-1", self.keyframes_1),
            ("no-distill", self.no_distill),
            ("no-gdde", self.no_gdde),
            ("no-qkey", self.no_qkey),
            ("no-keybg", self.no_keybg),
            ("no-fusion", self.no_fusion),
            ("no-cbdo", self.no_cbdo),
        ];
        into.ablations = flags
            .iter()
            .filter(|(_, on)| *on)
            .map(|(n, _)| n.to_string())
            .collect();
    }
}

impl ModelFlags {
    fn layer(&self, into: &mut FileConfig) {
        into.model = ModelSection {
            blocks: self.blocks,
            width: self.width,
            heads: self.heads,
            rank: self.rank,
            latent_channels: self.latent_channels,
            alpha: self.alpha,
            seed: self.model_seed,
        };
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Usage(_)
        | Error::Shape(_)
        | Error::Dimension(_)
        | Error::EmptyTargets(_) => 2,
        Error::Io { .. } | Error::Format(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

/// Caps the worker pool when `KEYTAILOR_THREADS` is set.
fn init_threads() -> keytailor::Result<()> {
    let Ok(value) = std::env::var("KEYTAILOR_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::Config(format!(
                "KEYTAILOR_THREADS must be a positive integer, got {value:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> keytailor::Result<()> {
    init_threads()?;
    let file = cli.config.as_deref();
    match cli.command {
        Command::GenSynthetic(a) => {
            commands::gen_synthetic(file, a.seeds, a.frames, a.size, &a.out)
        }
        Command::SampleKeyframes(a) | Command::ScoreFrames(a) if a.show_config => {
            let mut flags = FileConfig::default();
            a.sampler.layer(&mut flags);
            commands::show_config(file, flags)
        }
        Command::SampleKeyframes(a) => {
            let mut flags = FileConfig::default();
            a.sampler.layer(&mut flags);
            let sample = a.sample.expect("clap requires --sample");
            commands::sample_keyframes(file, flags, &sample, a.out.as_deref())
        }
        Command::ScoreFrames(a) => {
            let mut flags = FileConfig::default();
            a.sampler.layer(&mut flags);
            let sample = a.sample.expect("clap requires --sample");
            commands::score_frames(file, flags, &sample, a.out.as_deref())
        }
        Command::Train(a) => {
            let mut flags = FileConfig::default();
            a.sampler.layer(&mut flags);
            a.model.layer(&mut flags);
            a.ablations.layer(&mut flags);
            flags.train = TrainSection {
                lr: a.lr,
                weight_decay: a.weight_decay,
                steps: a.steps,
                seed: a.seed,
                ..Default::default()
            };
            flags.infer = InferSection {
                steps: a.infer_steps,
                seed: a.infer_seed,
            };
            commands::train(
                file,
                flags,
                &a.sample,
                &a.out,
                a.checkpoint_out.as_deref(),
                a.infer_after,
            )
        }
        Command::Infer(a) => {
            let mut flags = FileConfig::default();
            a.sampler.layer(&mut flags);
            a.model.layer(&mut flags);
            a.ablations.layer(&mut flags);
            flags.infer = InferSection {
                steps: a.steps,
                seed: a.seed,
            };
            commands::infer(file, flags, &a.checkpoint, &a.sample, &a.out)
        }
        Command::Eval(a) => commands::eval(&a.generated, &a.reference, a.out.as_deref()),
        Command::Gradcheck(a) => commands::gradcheck(
            a.scope,
            a.seeds.unwrap_or(a.scope.default_seeds()),
            a.corrupt_gradient,
            a.out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
