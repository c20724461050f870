//! Synthetic scenes for tests and demos: smooth Gaussian blobs whose
//! brightness varies slowly across bands.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hsi::HsiCube;
use crate::scalar::Scalar;

struct Blob {
    row: f64,
    col: f64,
    radius: f64,
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

/// A per-band normalized cube built from `blobs` random Gaussian blobs on a
/// sloped background.
pub fn synthetic_cube<T: Scalar>(
    rows: usize,
    cols: usize,
    bands: usize,
    blobs: usize,
    seed: u64,
) -> Result<HsiCube<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rows.min(cols) as f64;
    let shapes: Vec<Blob> = (0..blobs)
        .map(|_| Blob {
            row: rng.gen_range(0.0..rows as f64),
            col: rng.gen_range(0.0..cols as f64),
            radius: rng.gen_range(scale / 16.0..scale / 5.0),
            amplitude: rng.gen_range(0.3..1.0),
            frequency: rng.gen_range(0.2..1.5),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    let tilt: f64 = rng.gen_range(-0.3..0.3);
    let cube = HsiCube::from_fn(rows, cols, bands, |r, c, b| {
        let t = b as f64 / bands.max(2) as f64;
        let mut v = 0.2 + tilt * (r as f64 / rows as f64 - c as f64 / cols as f64) * (1.0 + t);
        for s in &shapes {
            let d2 = (r as f64 - s.row).powi(2) + (c as f64 - s.col).powi(2);
            let spectrum = 0.6 + 0.4 * (std::f64::consts::TAU * s.frequency * t + s.phase).sin();
            v += s.amplitude * spectrum * (-d2 / (2.0 * s.radius * s.radius)).exp();
        }
        T::of(v)
    })?;
    Ok(cube.normalize_per_band().0)
}
