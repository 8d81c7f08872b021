//! `srlab`: train, run, and evaluate x4 super-resolution models.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data/file error,
//! 3 numerical abort (non-finite loss).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sr_core::Error;

#[derive(Parser)]
#[command(
    name = "srlab",
    version,
    about = "Desk-scale x4 super-resolution: RRDB/RRDRB generators with relativistic-average GAN training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PhaseArg {
    /// PSNR-oriented pretraining (pixel L1 only).
    Pretrain,
    /// Adversarial fine-tuning.
    Gan,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NoiseArg {
    /// Inject noise (requires noise-trained weights).
    On,
    /// Force the deterministic path.
    Off,
    /// Follow the weight file's spec.
    Auto,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training phase from a config file.
    Train {
        /// TOML run configuration (see configs/desk.toml).
        #[arg(long)]
        config: PathBuf,
        /// Which phase to run.
        #[arg(long, value_enum)]
        phase: PhaseArg,
        /// Resume from a checkpoint of the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the config file's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Deterministic execution. This implementation is always
        /// deterministic; passing false is rejected.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        deterministic: bool,
    },
    /// Super-resolve PNG images x4.
    Sr {
        /// Generator weight file, or a training checkpoint (the embedded
        /// generator is used).
        #[arg(long)]
        weights: PathBuf,
        /// Input PNG file or directory of PNGs.
        #[arg(long)]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        /// Seed for noise injection.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Noise injection at inference.
        #[arg(long, value_enum, default_value_t = NoiseArg::Auto)]
        noise: NoiseArg,
    },
    /// Score SR outputs against ground truth (Y-PSNR, NIQE, perceptual index).
    Eval {
        /// Directory of super-resolved images.
        #[arg(long = "sr-dir")]
        sr_dir: PathBuf,
        /// Directory of ground-truth HR images with matching stems.
        #[arg(long = "hr-dir")]
        hr_dir: PathBuf,
        /// Fitted NIQE model file.
        #[arg(long = "niqe-model")]
        niqe_model: PathBuf,
        /// CSV of per-image Ma scores (`filename,ma`).
        #[arg(long = "ma-file", conflicts_with = "ma_const")]
        ma_file: Option<PathBuf>,
        /// Constant Ma score applied to every image.
        #[arg(long = "ma-const")]
        ma_const: Option<f64>,
        /// Border pixels excluded from PSNR on each side.
        #[arg(long = "crop-border", default_value_t = 4)]
        crop_border: usize,
        /// Output report CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a NIQE pristine model from a directory of reference images.
    FitNiqe {
        /// Directory of pristine PNG images (>= 2).
        #[arg(long = "pristine-dir")]
        pristine_dir: PathBuf,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// NIQE patch size (even, >= 8).
        #[arg(long = "patch-size", default_value_t = 96)]
        patch_size: usize,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Incompatible { .. } | Error::Shape { .. } => 1,
        Error::NonFinite { .. } => 3,
        Error::Io { .. }
        | Error::Image { .. }
        | Error::Data(_)
        | Error::Format { .. }
        | Error::Corrupt { .. } => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train {
            config,
            phase,
            resume,
            seed,
            deterministic,
        } => commands::train(&config, phase, resume.as_deref(), seed, deterministic),
        Command::Sr {
            weights,
            input,
            output,
            seed,
            noise,
        } => commands::super_resolve(&weights, &input, &output, seed, noise),
        Command::Eval {
            sr_dir,
            hr_dir,
            niqe_model,
            ma_file,
            ma_const,
            crop_border,
            out,
        } => commands::eval(
            &sr_dir,
            &hr_dir,
            &niqe_model,
            ma_file.as_deref(),
            ma_const,
            crop_border,
            &out,
        ),
        Command::FitNiqe {
            pristine_dir,
            out,
            patch_size,
        } => commands::fit_niqe(&pristine_dir, &out, patch_size),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
