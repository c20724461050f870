//! Simulated additive white Gaussian noise.
//!
//! Noise levels are expressed on the 0-255 gray scale and divided by 255
//! when added to `[0, 1]` data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::hsi::HsiCube;
use crate::scalar::Scalar;

/// Scale of the gray levels the noise standard deviations refer to.
pub const GRAY_LEVELS: f64 = 255.0;

/// One of the three simulated noise regimes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// Every band uses the same standard deviation.
    Constant { sigma: f64 },
    /// Each band draws its standard deviation uniformly from `(0, sigma_max]`.
    RandPerBand { sigma_max: f64 },
    /// Standard deviation follows a Gaussian bump over the band index,
    /// centred on the middle band, with `sum(sigma_k^2) = beta^2`.
    GaussProfile { beta: f64, eta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn constant(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Constant { sigma },
            seed,
        }
    }

    pub fn rand_per_band(sigma_max: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::RandPerBand { sigma_max },
            seed,
        }
    }

    pub fn gauss_profile(beta: f64, eta: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::GaussProfile { beta, eta },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(param_err!("{name} must be > 0, got {v}"))
            }
        };
        match self.kind {
            NoiseKind::Constant { sigma } => positive("sigma", sigma),
            NoiseKind::RandPerBand { sigma_max } => positive("sigma_max", sigma_max),
            NoiseKind::GaussProfile { beta, eta } => {
                positive("beta", beta)?;
                positive("eta", eta)
            }
        }
    }

    /// Short human-readable label, e.g. `sigma=25` or `gau(200,30)`.
    pub fn label(&self) -> String {
        match self.kind {
            NoiseKind::Constant { sigma } => format!("sigma={sigma}"),
            NoiseKind::RandPerBand { sigma_max } => format!("rand({sigma_max})"),
            NoiseKind::GaussProfile { beta, eta } => format!("gau({beta},{eta})"),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Per-band standard deviations on the gray-level scale.
    pub fn band_sigmas(&self, bands: usize) -> Vec<f64> {
        match self.kind {
            NoiseKind::Constant { sigma } => vec![sigma; bands],
            NoiseKind::RandPerBand { sigma_max } => (0..bands)
                .map(|b| {
                    let u: f64 = band_rng(self.seed, b).gen();
                    sigma_max * (1.0 - u)
                })
                .collect(),
            NoiseKind::GaussProfile { beta, eta } => band_sigma_profile(beta, eta, bands),
        }
    }
}

/// Gaussian band profile `sigma(k) = beta * sqrt(g(k) / sum_j g(j))` with
/// `g(k) = exp(-(k - B/2)^2 / (2 eta^2))` for 1-based band index `k`.
///
/// Entry `i` of the result is `sigma(i + 1)`.
pub fn band_sigma_profile(beta: f64, eta: f64, bands: usize) -> Vec<f64> {
    let centre = bands as f64 / 2.0;
    let weights: Vec<f64> = (1..=bands)
        .map(|k| (-(k as f64 - centre).powi(2) / (2.0 * eta * eta)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| beta * (w / total).sqrt()).collect()
}

/// Each band draws from its own stream so results do not depend on the
/// order bands are processed in.
fn band_rng(seed: u64, band: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(band as u64);
    rng
}

/// Add simulated noise to a `[0, 1]` cube. Output values are not clipped.
pub fn apply_noise<T: Scalar>(cube: &HsiCube<T>, spec: &NoiseSpec) -> Result<HsiCube<T>> {
    spec.validate()?;
    if !cube.is_normalized(1e-6) {
        log::warn!("adding noise to a cube with values outside [0, 1]");
    }
    let sigmas = spec.band_sigmas(cube.bands());
    let mut out = cube.clone();
    for (b, sigma) in sigmas.into_iter().enumerate() {
        // Offset the stream so the per-band sigma draw and the pixel noise
        // never share a sequence.
        let mut rng = band_rng(spec.seed ^ 0x9e37_79b9_7f4a_7c15, b);
        let scale = sigma / GRAY_LEVELS;
        for v in out.band_mut(b) {
            let z: f64 = rng.sample(StandardNormal);
            *v = T::of(v.as_f64() + scale * z);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIGMA_95: f64 = 23.078678593843645;

    #[test]
    fn profile_energy_is_beta_squared() {
        let s = band_sigma_profile(200.0, 30.0, 191);
        let energy: f64 = s.iter().map(|v| v * v).sum();
        assert!((energy - 40000.0).abs() / 40000.0 < 1e-6);
    }

    #[test]
    fn profile_peak_is_the_middle_pair() {
        let s = band_sigma_profile(200.0, 30.0, 191);
        let max = s.iter().copied().fold(f64::MIN, f64::max);
        // 1-based k = 95 and 96
        assert_eq!(s[94], max);
        assert_eq!(s[95], max);
        assert!(s[93] < max && s[96] < max);
        assert!((s[94] - SIGMA_95).abs() / SIGMA_95 < 1e-6);
    }

    #[test]
    fn rand_per_band_sigmas_in_range() {
        let s = NoiseSpec::rand_per_band(25.0, 3).band_sigmas(500);
        assert!(s.iter().all(|&v| v > 0.0 && v <= 25.0));
        let mean = s.iter().sum::<f64>() / 500.0;
        assert!((mean - 12.5).abs() < 1.5, "mean {mean}");
        assert_eq!(s, NoiseSpec::rand_per_band(25.0, 3).band_sigmas(500));
    }

    #[test]
    fn validation() {
        assert!(NoiseSpec::constant(0.0, 1).validate().is_err());
        assert!(NoiseSpec::rand_per_band(-1.0, 1).validate().is_err());
        assert!(NoiseSpec::gauss_profile(200.0, 0.0, 1).validate().is_err());
        assert!(NoiseSpec::constant(f64::NAN, 1).validate().is_err());
        assert!(NoiseSpec::gauss_profile(200.0, 30.0, 1).validate().is_ok());
    }

    #[test]
    fn toml_round_trip() {
        for spec in [
            NoiseSpec::constant(25.0, 7),
            NoiseSpec::rand_per_band(25.0, 8),
            NoiseSpec::gauss_profile(200.0, 30.0, 9),
        ] {
            let text = spec.to_toml().unwrap();
            assert_eq!(NoiseSpec::from_toml(&text).unwrap(), spec);
        }
        let parsed = NoiseSpec::from_toml("kind = \"constant\"\nsigma = 25\nseed = 1\n").unwrap();
        assert_eq!(parsed, NoiseSpec::constant(25.0, 1));
        assert!(NoiseSpec::from_toml("kind = \"constant\"\nsigma = 0\nseed = 1\n").is_err());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cube = HsiCube::from_fn(16, 16, 3, |r, c, _| ((r + c) as f32) / 30.0).unwrap();
        let spec = NoiseSpec::constant(25.0, 42);
        let a = apply_noise(&cube, &spec).unwrap();
        assert_eq!(a, apply_noise(&cube, &spec).unwrap());
        assert_ne!(a, apply_noise(&cube, &NoiseSpec::constant(25.0, 43)).unwrap());
    }

    #[test]
    fn vanishing_noise() {
        let cube = HsiCube::from_fn(8, 8, 2, |r, c, b| ((r * c + b) % 7) as f64 / 7.0).unwrap();
        let noisy = apply_noise(&cube, &NoiseSpec::constant(1e-9, 5)).unwrap();
        for (a, b) in noisy.as_bsq().iter().zip(cube.as_bsq()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn gauss_profile_scales_per_band() {
        let cube = HsiCube::<f64>::zeros(64, 64, 9).unwrap();
        let spec = NoiseSpec::gauss_profile(200.0, 2.0, 11);
        let noisy = apply_noise(&cube, &spec).unwrap();
        let sigmas = band_sigma_profile(200.0, 2.0, 9);
        for (b, s) in sigmas.iter().enumerate() {
            let n = noisy.band(b);
            let var = n.iter().map(|v| v * v).sum::<f64>() / n.len() as f64;
            let expected = s / GRAY_LEVELS;
            assert!((var.sqrt() - expected).abs() / expected < 0.06, "band {b}");
        }
    }
}
