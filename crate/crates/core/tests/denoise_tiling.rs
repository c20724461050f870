//! Tiled inference against a single whole-band pass.
//!
//! Global pooling inside the attention blocks makes every output pixel
//! depend on the whole input, so tiles and the whole band only agree once
//! the attention weights are input independent. With the squeeze
//! convolutions' weights zeroed they reduce to constants set by the biases,
//! and the remaining network is purely local: pixels farther than the
//! receptive radius from every internal tile edge must then match.

use adrn_core::denoise::{denoise_cube, tile_layout, Inference};
use adrn_core::hsi::HsiCube;
use adrn_core::model::{AdrnModel, ModelConfig};
use adrn_core::synthetic::synthetic_cube;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model() -> AdrnModel<f64> {
    let config = ModelConfig {
        channels: 8,
        path_channels: 2,
        depth: 2,
        spectral_bands: 4,
        reduction: 4,
        attention: true,
    };
    let mut m = AdrnModel::init(config, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for cab in &mut m.cabs {
        cab.w3.weight = cab.w3.weight.map(|_| 0.0);
        cab.w3.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
        cab.w4.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
    }
    m
}

/// Whether every tile covering `p` keeps it `radius` away from its edges
/// that lie inside the band.
fn interior(p: usize, extent: usize, starts: &[usize], tile: usize, radius: usize) -> bool {
    starts.iter().filter(|&&s| p >= s && p < s + tile).all(|&s| {
        let low_ok = s == 0 || p - s >= radius;
        let high_ok = s + tile == extent || s + tile - 1 - p >= radius;
        low_ok && high_ok
    })
}

#[test]
fn interior_pixels_match_whole_band() {
    let m = model();
    let cube: HsiCube<f64> = synthetic_cube(100, 90, 6, 8, 5).unwrap();
    let tiled = denoise_cube(&m, &cube, Inference::default()).unwrap();
    let whole = denoise_cube(&m, &cube, Inference::WholeBand).unwrap();

    let (origins, (th, tw)) = tile_layout(100, 90, 64, 10).unwrap();
    let mut rs: Vec<usize> = origins.iter().map(|o| o.0).collect();
    let mut cs: Vec<usize> = origins.iter().map(|o| o.1).collect();
    rs.dedup();
    cs.sort_unstable();
    cs.dedup();
    let radius = m.config.receptive_radius();

    let (mut compared, mut worst) = (0, 0.0f64);
    for b in 0..6 {
        for r in (0..100).filter(|&r| interior(r, 100, &rs, th, radius)) {
            for c in (0..90).filter(|&c| interior(c, 90, &cs, tw, radius)) {
                worst = worst.max((tiled.get(r, c, b) - whole.get(r, c, b)).abs());
                compared += 1;
            }
        }
    }
    assert!(compared > 6 * 80 * 70, "{compared}");
    assert!(worst < 1e-5, "{worst}");
    assert_ne!(tiled, whole, "tile borders should differ");
}
