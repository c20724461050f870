//! Network forward and backward passes against independent oracles.

mod support;

use adrn_core::model::{reconstruct, AdrnModel, ModelConfig};
use adrn_core::tensor::{Shape4, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn cab_matches_straight_line_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let worst = support::cab_max_deviation(&mut rng, 20);
    assert!(worst < 1e-12, "{worst}");
}

fn tiny() -> ModelConfig {
    ModelConfig {
        channels: 8,
        path_channels: 2,
        depth: 2,
        spectral_bands: 4,
        reduction: 10,
        attention: true,
    }
}

#[test]
fn zero_model_is_identity() {
    let model = AdrnModel::<f32>::zeros(tiny()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ys = Tensor4::from_fn(Shape4::new(1, 1, 9, 7), |_, _, _, _| rng.gen_range(-0.5f32..1.5));
    let yp = Tensor4::from_fn(Shape4::new(1, 4, 9, 7), |_, _, _, _| rng.gen_range(0.0f32..1.0));
    assert_eq!(model.denoise(&ys, &yp).unwrap(), ys);
}

#[test]
fn known_residual_recovers_clean() {
    // Dyadic values keep y = x + v and y - v exact in binary floating point.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = Shape4::new(2, 1, 6, 5);
    let x = Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(0..1024) as f64 / 1024.0);
    let v = Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-256..256) as f64 / 2048.0);
    let y = x.zip_map(&v, |a, b| a + b).unwrap();
    assert_eq!(reconstruct(&y, &v).unwrap(), x);
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = AdrnModel::<f64>::init(tiny(), 9).unwrap();
    for k in model.kernels_mut() {
        k.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
    }
    let batch = support::random_batch(&mut rng, 2, 4, 8);
    let check = support::gradient_check(&model, &batch, 10.0, 1e-5, 5);
    assert!(check.checked > 100);
    assert!(check.max_rel < 1e-4, "{check:?}");
}
