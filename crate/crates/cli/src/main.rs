mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

/// Train and apply a context-encoder GAN for image inpainting.
#[derive(Parser, Debug)]
#[command(name = "cegan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train generator and discriminator on a PNG directory or synthetic images.
    Train(TrainArgs),
    /// Fill the masked region of one image or a directory of images.
    Inpaint(InpaintArgs),
    /// Report reconstruction metrics of a checkpoint on a PNG directory.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Write procedurally generated PNG images.
    Synth(SynthArgs),
}

/// Mask flags shared by every command that occludes images.
#[derive(Args, Debug, Clone, Default)]
struct MaskArgs {
    /// Mask placement: center or random.
    #[arg(long)]
    mask: Option<String>,
    /// Fraction of the image area covered by the mask.
    #[arg(long)]
    coverage: Option<f64>,
    /// Value written into occluded pixels.
    #[arg(long)]
    fill: Option<f64>,
}

impl MaskArgs {
    fn pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        push(&mut out, "mask", &self.mask);
        push(&mut out, "coverage", &self.coverage);
        push(&mut out, "fill", &self.fill);
        out
    }
}

fn push<T: ToString>(out: &mut Vec<(String, String)>, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        out.push((key.to_string(), v.to_string()));
    }
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["data", "synthetic"]))]
struct TrainArgs {
    /// Directory of PNG images.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Train on this many generated images instead of a directory.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Directory for the loss log, checkpoints and sample grids.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` file with defaults for any flag below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    image_size: Option<usize>,
    #[command(flatten)]
    mask: MaskArgs,
    #[arg(long)]
    lambda_adv: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Insert batch normalization after every convolution.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    batch_norm: Option<bool>,
    /// Feed the mask to the generator as a fourth input channel.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    mask_channel: Option<bool>,
    /// Six comma-separated unit widths.
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Weight of occluded pixels in the reconstruction loss.
    #[arg(long)]
    region_weight: Option<f64>,
    /// Iterations between checkpoints (0: final only).
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Iterations between sample grids (0: final only).
    #[arg(long)]
    sample_every: Option<u64>,
}

impl TrainArgs {
    fn flag_pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        push(&mut out, "epochs", &self.epochs);
        push(&mut out, "batch", &self.batch);
        push(&mut out, "lr", &self.lr);
        push(&mut out, "image-size", &self.image_size);
        out.extend(self.mask.pairs());
        push(&mut out, "lambda-adv", &self.lambda_adv);
        push(&mut out, "seed", &self.seed);
        push(&mut out, "batch-norm", &self.batch_norm);
        push(&mut out, "mask-channel", &self.mask_channel);
        push(&mut out, "channels", &self.channels);
        push(&mut out, "train-fraction", &self.train_fraction);
        push(&mut out, "region-weight", &self.region_weight);
        push(&mut out, "checkpoint-every", &self.checkpoint_every);
        push(&mut out, "sample-every", &self.sample_every);
        out
    }
}

#[derive(Args, Debug)]
struct InpaintArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// A PNG file or a directory of PNG files.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    mask: MaskArgs,
    /// Seed for random mask placement (defaults to the checkpoint's seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    mask: MaskArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Directory for metrics.json; without it metrics are only printed.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Problem size; only `small` is available.
    #[arg(long, default_value = "small", value_parser = ["small"])]
    size: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt the named case's analytic gradient (harness self-test).
    #[arg(long, hide = true)]
    perturb: Option<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 128)]
    image_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Inpaint(a) => commands::inpaint(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
