//! Experiment manifests: one TOML file naming the clean cube, the data
//! split, the noise to simulate, the training settings and where outputs go.
//!
//! ```toml
//! cube = "data/scene.raw"
//! output_dir = "runs/sigma25"
//! render_bands = [8, 4, 1]
//!
//! [split]
//! train = { rows = [32, 64], cols = [0, 64] }
//! test = { rows = [0, 32], cols = [0, 64] }
//!
//! [[noise]]
//! kind = "constant"
//! sigma = 25.0
//! seed = 1
//!
//! [train]
//! preset = "desk"
//! total_steps = 2000
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use adrn_core::hsi::{Region, SplitSpec};
use adrn_core::io::{header_path, CubeHeader};
use adrn_core::noise::NoiseSpec;
use adrn_core::render::DEFAULT_RENDER_BANDS;
use adrn_core::training::TrainConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionSpec {
    rows: [usize; 2],
    cols: [usize; 2],
}

impl From<RegionSpec> for Region {
    fn from(r: RegionSpec) -> Self {
        Region::new(r.rows[0]..r.rows[1], r.cols[0]..r.cols[1])
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitTable {
    train: RegionSpec,
    test: RegionSpec,
}

fn default_render_bands() -> [usize; 3] {
    DEFAULT_RENDER_BANDS
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    cube: PathBuf,
    output_dir: PathBuf,
    #[serde(default = "default_render_bands")]
    render_bands: [usize; 3],
    #[serde(default = "default_true")]
    normalize: bool,
    split: Option<SplitTable>,
    noise: Vec<NoiseSpec>,
    #[serde(default)]
    train: toml::Table,
}

/// A validated manifest with absolute paths.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentManifest {
    pub cube: PathBuf,
    pub output_dir: PathBuf,
    pub render_bands: [usize; 3],
    /// Min-max scale every band before use.
    pub normalize: bool,
    pub split: SplitSpec,
    pub noise: Vec<NoiseSpec>,
    pub train: TrainConfig,
    /// Shape of the clean cube as declared by its header.
    pub header: CubeHeader,
}

/// Start from the named preset (`desk` unless given) and overlay the
/// remaining keys, rejecting unknown ones.
pub fn train_config_from_table(table: &toml::Table) -> Result<TrainConfig, CliError> {
    let mut overrides = table.clone();
    let base = match overrides.remove("preset") {
        None => TrainConfig::desk(),
        Some(toml::Value::String(name)) => match name.as_str() {
            "desk" => TrainConfig::desk(),
            "full" => TrainConfig::full(),
            other => {
                return Err(CliError::Manifest(format!(
                    "unknown training preset {other:?} (expected \"desk\" or \"full\")"
                )))
            }
        },
        Some(v) => return Err(CliError::Manifest(format!("preset must be a string, got {v}"))),
    };
    let mut merged = toml::Table::try_from(&base).map_err(|e| CliError::Manifest(e.to_string()))?;
    merged.extend(overrides);
    let config: TrainConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e| CliError::Manifest(format!("[train]: {e}")))?;
    config.validate()?;
    Ok(config)
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| adrn_core::Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    /// Parse manifest text, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let raw: RawManifest =
            toml::from_str(text).map_err(|e| CliError::Manifest(e.to_string()))?;
        let cube = base.join(&raw.cube);
        let hdr = header_path(&cube);
        if !cube.is_file() {
            return Err(CliError::Manifest(format!("cube {} does not exist", cube.display())));
        }
        let header_text = fs::read_to_string(&hdr)
            .map_err(|e| CliError::Manifest(format!("cube header {}: {e}", hdr.display())))?;
        let header = CubeHeader::parse(&header_text)?;

        let split = match raw.split {
            Some(s) => SplitSpec {
                train: s.train.into(),
                test: s.test.into(),
            },
            None => SplitSpec::dc_mall(),
        };
        split.validate(header.rows, header.cols)?;

        if raw.noise.is_empty() {
            return Err(CliError::Manifest("at least one [[noise]] entry is required".into()));
        }
        for spec in &raw.noise {
            spec.validate()?;
        }
        if let Some(b) = raw.render_bands.iter().find(|&&b| b >= header.bands) {
            return Err(CliError::Manifest(format!(
                "render band {b} out of range for {} bands",
                header.bands
            )));
        }
        let train = train_config_from_table(&raw.train)?;
        if train.spectral_bands + 1 > header.bands {
            return Err(CliError::Manifest(format!(
                "spectral_bands = {} needs a cube with more than {} bands, got {}",
                train.spectral_bands, train.spectral_bands, header.bands
            )));
        }
        let (h, w) = (split.train.height(), split.train.width());
        if train.patch > h.min(w) {
            return Err(CliError::Manifest(format!(
                "patch {} does not fit the {h}x{w} training region",
                train.patch
            )));
        }
        Ok(Self {
            cube,
            output_dir: base.join(raw.output_dir),
            render_bands: raw.render_bands,
            normalize: raw.normalize,
            split,
            noise: raw.noise,
            train,
            header,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use adrn_core::io::{save_cube, Interleave};
    use adrn_core::hsi::HsiCube;

    fn setup() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let cube = HsiCube::<f32>::zeros(40, 30, 12).unwrap();
        save_cube(&cube, &dir.path().join("c.raw"), Interleave::Bsq).unwrap();
        dir
    }

    const BASE: &str = r#"
cube = "c.raw"
output_dir = "out"
render_bands = [3, 2, 1]

[split]
train = { rows = [20, 40], cols = [0, 30] }
test = { rows = [0, 20], cols = [0, 30] }

[[noise]]
kind = "constant"
sigma = 25.0
seed = 4
"#;

    #[test]
    fn parses_and_resolves_paths() {
        let dir = setup();
        let text = format!("{BASE}\n[train]\nspectral_bands = 4\ntotal_steps = 7\n");
        let m = ExperimentManifest::parse(&text, dir.path()).unwrap();
        assert_eq!(m.cube, dir.path().join("c.raw"));
        assert_eq!(m.output_dir, dir.path().join("out"));
        assert_eq!(m.noise, vec![NoiseSpec::constant(25.0, 4)]);
        assert_eq!(m.train.total_steps, 7);
        assert_eq!(m.train.channels, TrainConfig::desk().channels);
        assert_eq!(m.split.train, Region::new(20..40, 0..30));
        assert!(m.normalize);
    }

    #[test]
    fn rejects_bad_manifests() {
        let dir = setup();
        let cases = [
            BASE.replace("c.raw", "missing.raw"),
            BASE.replace("[3, 2, 1]", "[12, 2, 1]"),
            BASE.replace("sigma = 25.0", "sigma = 0.0"),
            format!("{BASE}\n[train]\nbogus = 1\n"),
            format!("{BASE}\n[train]\npreset = \"huge\"\n"),
            // default K = 8 fits 12 bands, K = 12 does not
            format!("{BASE}\n[train]\nspectral_bands = 12\n"),
            BASE.replace("rows = [0, 20]", "rows = [0, 25]"),
            format!("{BASE}\n[train]\nspectral_bands = 4\npatch = 21\n"),
        ];
        for text in &cases {
            assert!(ExperimentManifest::parse(text, dir.path()).is_err(), "{text}");
        }
    }

    #[test]
    fn full_preset_overlay() {
        let mut t = toml::Table::new();
        t.insert("preset".into(), "full".into());
        t.insert("depth".into(), 4.into());
        let c = train_config_from_table(&t).unwrap();
        assert_eq!(c.depth, 4);
        assert_eq!(c.batch_size, TrainConfig::full().batch_size);
    }
}
