//! Paired noisy/clean training patches.

use crate::error::{param_err, Result};
use crate::hsi::{extract_patches, HsiCube, Region};
use crate::noise::{apply_noise, NoiseSpec};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// One noisy band patch, its noisy spectral neighbourhood, and the clean
/// target.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample<T> {
    /// `(1, 1, p, p)`
    pub y_spatial: Tensor4<T>,
    /// `(1, K, p, p)`
    pub y_spectral: Tensor4<T>,
    /// `(1, 1, p, p)`
    pub x_clean: Tensor4<T>,
    pub band_index: usize,
    pub origin: (usize, usize),
    pub noise_index: usize,
}

/// A stack of samples along the batch axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub y_spatial: Tensor4<T>,
    pub y_spectral: Tensor4<T>,
    pub x_clean: Tensor4<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(samples: &[TrainingSample<T>]) -> Result<Self> {
        let stack = |f: fn(&TrainingSample<T>) -> &Tensor4<T>| {
            Tensor4::stack(&samples.iter().map(f).collect::<Vec<_>>())
        };
        Ok(Self {
            y_spatial: stack(|s| &s.y_spatial)?,
            y_spectral: stack(|s| &s.y_spectral)?,
            x_clean: stack(|s| &s.x_clean)?,
        })
    }

    pub fn len(&self) -> usize {
        self.y_spatial.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Every `(noise level, band, patch origin)` triple of a training region.
///
/// Samples are cut lazily from one noisy realisation per noise spec, so the
/// spatial band and its spectral window always share the same noise draw.
pub struct TrainingSet<T> {
    clean: HsiCube<T>,
    noisy: Vec<HsiCube<T>>,
    origins: Vec<(usize, usize)>,
    windows: Vec<Vec<usize>>,
    patch: usize,
}

/// Geometry of the patches cut from the training region.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPlan {
    pub region: Region,
    pub patch: usize,
    pub stride: usize,
    pub spectral_bands: usize,
}

impl<T: Scalar> TrainingSet<T> {
    pub fn len(&self) -> usize {
        self.noisy.len() * self.clean.bands() * self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn noise_levels(&self) -> usize {
        self.noisy.len()
    }

    pub fn origins(&self) -> &[(usize, usize)] {
        &self.origins
    }

    pub fn bands(&self) -> usize {
        self.clean.bands()
    }

    /// Decompose a flat index into `(noise, band, origin)`.
    pub fn locate(&self, index: usize) -> (usize, usize, usize) {
        let per_noise = self.clean.bands() * self.origins.len();
        let noise = index / per_noise;
        let rest = index % per_noise;
        (noise, rest / self.origins.len(), rest % self.origins.len())
    }

    pub fn get(&self, index: usize) -> Result<TrainingSample<T>> {
        if index >= self.len() {
            return Err(param_err!("sample {index} out of range ({})", self.len()));
        }
        let (noise, band, o) = self.locate(index);
        let origin = self.origins[o];
        let size = (self.patch, self.patch);
        let noisy = &self.noisy[noise];
        Ok(TrainingSample {
            y_spatial: noisy.patch_tensor(&[band], origin, size)?,
            y_spectral: noisy.patch_tensor(&self.windows[band], origin, size)?,
            x_clean: self.clean.patch_tensor(&[band], origin, size)?,
            band_index: band,
            origin,
            noise_index: noise,
        })
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch<T>> {
        let samples = indices
            .iter()
            .map(|&i| self.get(i))
            .collect::<Result<Vec<_>>>()?;
        Batch::from_samples(&samples)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<TrainingSample<T>>> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    pub fn sample_shape(&self, k: usize) -> Shape4 {
        Shape4::new(1, k, self.patch, self.patch)
    }
}

/// Build the training set of a normalized clean cube.
///
/// Origins in the returned samples are relative to `plan.region`.
pub fn build_dataset<T: Scalar>(
    clean: &HsiCube<T>,
    noise_specs: &[NoiseSpec],
    plan: &PatchPlan,
) -> Result<TrainingSet<T>> {
    if noise_specs.is_empty() {
        return Err(param_err!("at least one noise spec is required"));
    }
    let region = clean.crop(&plan.region)?;
    let origins = extract_patches(
        &Region::full(region.rows(), region.cols()),
        plan.patch,
        plan.stride,
        true,
    )?;
    let windows = (0..region.bands())
        .map(|b| region.spectral_window(b, plan.spectral_bands))
        .collect::<Result<Vec<_>>>()?;
    // Noise the whole scene before cropping so the training region sees the
    // same draws as a simulated full cube, disjoint from any test region.
    let noisy = noise_specs
        .iter()
        .map(|spec| apply_noise(clean, spec)?.crop(&plan.region))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingSet {
        clean: region,
        noisy,
        origins,
        windows,
        patch: plan.patch,
    })
}
