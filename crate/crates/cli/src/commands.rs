//! One function per subcommand. Each reads and writes files only; the
//! binary adds argument parsing and exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use adrn_core::checkpoint::Checkpoint;
use adrn_core::dataset::{build_dataset, PatchPlan};
use adrn_core::denoise::{denoise_cube, Inference};
use adrn_core::hsi::Region;
use adrn_core::io::{load_cube, save_cube, Interleave};
use adrn_core::metrics::{evaluate as evaluate_runs, QualityReport};
use adrn_core::model::AdrnModel;
use adrn_core::noise::apply_noise;
use adrn_core::render::save_png;
use adrn_core::synthetic::synthetic_cube;
use adrn_core::training::{LossRecord, TrainEvent, Trainer, LOSS_CSV_HEADER};
use adrn_core::{Cube, Error, Real};

use crate::{CliError, ExperimentManifest};

type Result<T> = std::result::Result<T, CliError>;

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

/// The manifest's clean cube, min-max normalized per band when requested.
pub fn load_clean(m: &ExperimentManifest) -> Result<Cube> {
    let cube = load_cube::<Real>(&m.cube)?;
    if m.normalize {
        return Ok(cube.normalize_per_band().0);
    }
    if !cube.is_normalized(1e-6) {
        log::warn!("{} has values outside [0, 1] and normalize = false", m.cube.display());
    }
    Ok(cube)
}

/// Files written by [`simulate`].
#[derive(Clone, Debug, PartialEq)]
pub struct SimulateOutput {
    pub clean: PathBuf,
    /// One noisy cube per noise spec, each with a `.noise.toml` sidecar.
    pub noisy: Vec<PathBuf>,
}

pub fn noisy_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("noisy_{index}.raw"))
}

/// Write the (normalized) clean cube and one noisy realisation per noise
/// spec, with pseudo-colour previews of each.
pub fn simulate(m: &ExperimentManifest) -> Result<SimulateOutput> {
    let clean = load_clean(m)?;
    let out = &m.output_dir;
    let clean_path = out.join("clean.raw");
    save_cube(&clean, &clean_path, Interleave::Bsq)?;
    save_png(&clean, m.render_bands, &clean_path.with_extension("png"))?;
    let mut noisy = Vec::new();
    for (i, spec) in m.noise.iter().enumerate() {
        let path = noisy_path(out, i);
        let cube = apply_noise(&clean, spec)?;
        save_cube(&cube, &path, Interleave::Bsq)?;
        write(&path.with_extension("noise.toml"), &spec.to_toml()?)?;
        save_png(&cube, m.render_bands, &path.with_extension("png"))?;
        log::info!("{}: {}", path.display(), spec.label());
        noisy.push(path);
    }
    Ok(SimulateOutput {
        clean: clean_path,
        noisy,
    })
}

/// Files written by [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub history: Vec<LossRecord>,
}

pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("model.ckpt")
}

pub fn loss_csv_path(dir: &Path) -> PathBuf {
    dir.join("loss.csv")
}

/// Rows of an existing loss CSV logged before `step`.
fn earlier_rows(path: &Path, step: u64) -> Vec<String> {
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter(|line| {
            line.split(',')
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .is_some_and(|s| s < step)
        })
        .map(str::to_owned)
        .collect()
}

fn write_loss_csv(path: &Path, earlier: &[String], rows: &[LossRecord]) -> Result<()> {
    let mut text = String::from(LOSS_CSV_HEADER);
    text.push('\n');
    for line in earlier {
        text.push_str(line);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    write(path, &text)
}

/// Train on the manifest's training region from scratch, or continue from
/// `resume`. A checkpoint is written at every learning-rate decay boundary
/// and, if the loss diverges, a diagnostic one before aborting.
pub fn train(m: &ExperimentManifest, resume: Option<&Path>) -> Result<TrainOutput> {
    let tc = m.train.clone();
    let clean = load_clean(m)?;
    let plan = PatchPlan {
        region: m.split.train.clone(),
        patch: tc.patch,
        stride: tc.stride,
        spectral_bands: tc.spectral_bands,
    };
    let data = build_dataset(&clean, &m.noise, &plan)?;
    drop(clean);
    log::info!(
        "{} training samples ({} origins x {} bands x {} noise levels)",
        data.len(),
        data.origins().len(),
        data.bands(),
        data.noise_levels()
    );

    let mut trainer = match resume {
        Some(path) => Checkpoint::<Real>::load(path)?.into_trainer(tc.clone())?,
        None => Trainer::new(AdrnModel::init(tc.model_config(), tc.seed)?, tc.clone())?,
    };
    let out = &m.output_dir;
    let loss_csv = loss_csv_path(out);
    let earlier = match resume {
        Some(_) => earlier_rows(&loss_csv, trainer.step_count()),
        None => Vec::new(),
    };
    if trainer.step_count() > 0 {
        log::info!("resuming at step {}", trainer.step_count());
    }

    let mut rows = Vec::new();
    let result = trainer.run(&data, |t, event| {
        match event {
            TrainEvent::Logged(r) => {
                rows.push(r);
                if r.step % 100 == 0 {
                    log::info!("step {} lr {:.2e} loss {:.6e} rec {:.6e}", r.step, r.lr, r.loss_total, r.loss_rec);
                }
            }
            TrainEvent::DecayBoundary { step } => {
                let path = out.join("checkpoints").join(format!("step_{step:07}.ckpt"));
                Checkpoint::from_trainer(t).save(&path)?;
                log::info!("checkpoint {}", path.display());
            }
            TrainEvent::Diverged { step } => {
                let path = out.join(format!("diverged_step_{step:07}.ckpt"));
                Checkpoint::from_trainer(t).save(&path)?;
                log::error!("loss diverged at step {step}; parameters saved to {}", path.display());
            }
        }
        Ok(())
    });
    write_loss_csv(&loss_csv, &earlier, &rows)?;
    result?;
    let checkpoint = checkpoint_path(out);
    Checkpoint::from_trainer(&trainer).save(&checkpoint)?;
    Ok(TrainOutput {
        checkpoint,
        loss_csv,
        history: rows,
    })
}

/// Denoise every band of `input` with a trained checkpoint.
pub fn denoise(checkpoint: &Path, input: &Path, output: &Path, mode: Inference) -> Result<Cube> {
    let model = Checkpoint::<Real>::load(checkpoint)?.model;
    let noisy = load_cube::<Real>(input)?;
    if model.config.spectral_bands + 1 > noisy.bands() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint uses {} adjacent bands but {} has {} bands",
            model.config.spectral_bands,
            input.display(),
            noisy.bands()
        ))
        .into());
    }
    let out = denoise_cube(&model, &noisy, mode)?;
    save_cube(&out, output, Interleave::Bsq)?;
    Ok(out)
}

/// Quality of one or more denoised runs against the clean cube, optionally
/// restricted to `region`. Writes the per-band CSV when `csv` is given.
pub fn evaluate(
    clean: &Path,
    runs: &[PathBuf],
    region: Option<&Region>,
    csv: Option<&Path>,
) -> Result<QualityReport> {
    if runs.is_empty() {
        return Err(CliError::Usage("at least one run is required".into()));
    }
    let crop = |c: Cube| match region {
        Some(r) => c.crop(r),
        None => Ok(c),
    };
    let clean = crop(load_cube::<Real>(clean)?)?;
    let runs = runs
        .iter()
        .map(|p| crop(load_cube::<Real>(p)?))
        .collect::<adrn_core::Result<Vec<_>>>()?;
    let report = evaluate_runs(&clean, &runs)?;
    if let Some(path) = csv {
        write(path, &report.to_csv())?;
    }
    Ok(report)
}

pub fn render(input: &Path, bands: [usize; 3], output: &Path) -> Result<()> {
    let cube = load_cube::<Real>(input)?;
    save_png(&cube, bands, output)?;
    Ok(())
}

/// Write a synthetic normalized scene.
pub fn synthesize(
    output: &Path,
    (rows, cols, bands): (usize, usize, usize),
    blobs: usize,
    seed: u64,
) -> Result<Cube> {
    let cube = synthetic_cube::<Real>(rows, cols, bands, blobs, seed)?;
    save_cube(&cube, output, Interleave::Bsq)?;
    Ok(cube)
}

/// Parse `r0:r1,c0:c1` into a region.
pub fn parse_region(text: &str) -> Result<Region> {
    let bad = || CliError::Usage(format!("region {text:?} is not of the form r0:r1,c0:c1"));
    let (rows, cols) = text.split_once(',').ok_or_else(bad)?;
    let range = |s: &str| -> Result<std::ops::Range<usize>> {
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let a = a.trim().parse().map_err(|_| bad())?;
        let b = b.trim().parse().map_err(|_| bad())?;
        Ok(a..b)
    };
    let region = Region::new(range(rows)?, range(cols)?);
    if region.is_empty() {
        return Err(bad());
    }
    Ok(region)
}

/// Parse `r,g,b` band indices.
pub fn parse_bands(text: &str) -> Result<[usize; 3]> {
    let bad = || CliError::Usage(format!("bands {text:?} must be three comma-separated indices"));
    let v: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    v.try_into().map_err(|_| bad())
}
