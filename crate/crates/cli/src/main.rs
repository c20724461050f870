use std::path::PathBuf;
use std::process::ExitCode;

use adrn_cli::commands::{self, parse_bands, parse_region};
use adrn_cli::{CliError, ExperimentManifest};
use adrn_core::denoise::Inference;
use adrn_core::render::DEFAULT_RENDER_BANDS;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adrn", version, about = "Hyperspectral image denoising with an attention-based residual network")]
struct Cli {
    /// Accepted for reproducible scripts. Every command already runs
    /// single-threaded with seeded randomness.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the normalized clean cube and one noisy cube per noise spec.
    Simulate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train on the manifest's training region.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Denoise every band of a cube with a trained checkpoint.
    Denoise {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Run each band through the network in one pass instead of tiles.
        #[arg(long)]
        whole_band: bool,
        #[arg(long, default_value_t = 64)]
        tile: usize,
        #[arg(long, default_value_t = 10)]
        overlap: usize,
    },
    /// Report per-band PSNR/SSIM and their means over one or more runs.
    Evaluate {
        #[arg(long)]
        clean: PathBuf,
        /// Denoised cubes, one per run.
        #[arg(long = "denoised", required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Restrict to `r0:r1,c0:c1`, e.g. a test region.
        #[arg(long)]
        region: Option<String>,
        /// Also write the per-band table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value = "denoised")]
        label: String,
    },
    /// Save a pseudo-colour PNG of three bands.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Red, green and blue band indices.
        #[arg(long)]
        bands: Option<String>,
    },
    /// Write a synthetic normalized scene of smooth spectral blobs.
    Synthesize {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 64)]
        rows: usize,
        #[arg(long, default_value_t = 64)]
        cols: usize,
        #[arg(long, default_value_t = 16)]
        bands: usize,
        #[arg(long, default_value_t = 12)]
        blobs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { manifest } => {
            let m = ExperimentManifest::load(&manifest)?;
            let out = commands::simulate(&m)?;
            println!("clean: {}", out.clean.display());
            for p in out.noisy {
                println!("noisy: {}", p.display());
            }
        }
        Command::Train { manifest, resume } => {
            let m = ExperimentManifest::load(&manifest)?;
            let out = commands::train(&m, resume.as_deref())?;
            println!("checkpoint: {}", out.checkpoint.display());
            println!("loss: {}", out.loss_csv.display());
        }
        Command::Denoise {
            checkpoint,
            input,
            output,
            whole_band,
            tile,
            overlap,
        } => {
            let mode = if whole_band {
                Inference::WholeBand
            } else {
                Inference::Tiled { tile, overlap }
            };
            commands::denoise(&checkpoint, &input, &output, mode)?;
            println!("denoised: {}", output.display());
        }
        Command::Evaluate {
            clean,
            runs,
            region,
            csv,
            label,
        } => {
            let region = region.as_deref().map(parse_region).transpose()?;
            let report = commands::evaluate(&clean, &runs, region.as_ref(), csv.as_deref())?;
            print!("{}", report.to_table(&label));
        }
        Command::Render {
            input,
            output,
            bands,
        } => {
            let bands = bands.as_deref().map(parse_bands).transpose()?;
            commands::render(&input, bands.unwrap_or(DEFAULT_RENDER_BANDS), &output)?;
            println!("image: {}", output.display());
        }
        Command::Synthesize {
            output,
            rows,
            cols,
            bands,
            blobs,
            seed,
        } => {
            commands::synthesize(&output, (rows, cols, bands), blobs, seed)?;
            println!("cube: {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.deterministic {
        log::debug!("deterministic mode");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
