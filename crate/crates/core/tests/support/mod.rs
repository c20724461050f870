//! Independent reference implementations shared by integration tests and
//! the acceptance suite.
#![allow(dead_code, clippy::needless_range_loop)]

use adrn_core::dataset::Batch;
use adrn_core::model::{AdrnModel, ChannelAttentionBlock};
use adrn_core::tensor::{ConvKernel, Shape4, Tensor4};
use adrn_core::training::loss_and_grad;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `planes[channel][row][col]`
pub type Planes = Vec<Vec<Vec<f64>>>;

pub fn to_planes(t: &Tensor4<f64>, n: usize) -> Planes {
    let s = t.shape();
    (0..s.c)
        .map(|c| (0..s.h).map(|y| (0..s.w).map(|x| t.get(n, c, y, x)).collect()).collect())
        .collect()
}

/// Zero-padded "same" cross-correlation written as nested loops.
pub fn conv(input: &Planes, k: &ConvKernel<f64>) -> Planes {
    let ws = k.weight.shape();
    let (h, w) = (input[0].len(), input[0][0].len());
    let r = ws.h as isize / 2;
    let mut out = vec![vec![vec![0.0; w]; h]; ws.n];
    for o in 0..ws.n {
        for y in 0..h {
            for x in 0..w {
                let mut acc = k.bias[o];
                for (i, plane) in input.iter().enumerate() {
                    for dy in 0..ws.h {
                        for dx in 0..ws.w {
                            let sy = y as isize + dy as isize - r;
                            let sx = x as isize + dx as isize - r;
                            if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                acc += k.weight.get(o, i, dy, dx) * plane[sy as usize][sx as usize];
                            }
                        }
                    }
                }
                out[o][y][x] = acc;
            }
        }
    }
    out
}

pub fn relu(p: Planes) -> Planes {
    p.into_iter()
        .map(|c| c.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect())
        .collect()
}

/// `F + sigmoid(W4 * relu(W3 * GP(X))) * X` with `X = W2 * relu(W1 * F)`.
pub fn cab_reference(cab: &ChannelAttentionBlock<f64>, f: &Planes) -> Planes {
    let x = conv(&relu(conv(f, &cab.w1)), &cab.w2);
    let pooled: Planes = x
        .iter()
        .map(|c| {
            let n = (c.len() * c[0].len()) as f64;
            vec![vec![c.iter().flatten().sum::<f64>() / n]]
        })
        .collect();
    let a = conv(&relu(conv(&pooled, &cab.w3)), &cab.w4);
    f.iter()
        .zip(&x)
        .zip(&a)
        .map(|((fc, xc), ac)| {
            let s = 1.0 / (1.0 + (-ac[0][0]).exp());
            fc.iter()
                .zip(xc)
                .map(|(fr, xr)| fr.iter().zip(xr).map(|(fv, xv)| fv + s * xv).collect())
                .collect()
        })
        .collect()
}

pub fn randomize(k: &mut ConvKernel<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    k.weight = Tensor4::from_fn(k.weight.shape(), |_, _, _, _| rng.gen_range(-scale..scale));
    k.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
}

/// Largest deviation between a block's forward pass and the reference over
/// `pairs` random blocks and inputs.
pub fn cab_max_deviation(rng: &mut ChaCha8Rng, pairs: usize) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let channels = rng.gen_range(2..9);
        let reduction = rng.gen_range(1..5);
        let mut cab = ChannelAttentionBlock::<f64>::zeros(channels, reduction);
        for k in cab.kernels_mut() {
            randomize(k, rng, 0.6);
        }
        let shape = Shape4::new(2, channels, rng.gen_range(3..10), rng.gen_range(3..10));
        let input = Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0));
        let out = cab.forward(&input).expect("valid block input");
        for n in 0..shape.n {
            let expected = cab_reference(&cab, &to_planes(&input, n));
            for (c, plane) in expected.iter().enumerate() {
                for (y, row) in plane.iter().enumerate() {
                    for (x, v) in row.iter().enumerate() {
                        worst = worst.max((out.get(n, c, y, x) - v).abs());
                    }
                }
            }
        }
    }
    worst
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, k: usize, p: usize) -> Batch<f64> {
    let mut t = |c| Tensor4::from_fn(Shape4::new(n, c, p, p), |_, _, _, _| rng.gen_range(0.0..1.0));
    Batch {
        y_spatial: t(1),
        y_spectral: t(k),
        x_clean: t(1),
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel: f64,
    pub worst: (usize, usize),
}

/// Central-difference check of every `every`-th parameter of `model`.
///
/// Relative error is `|analytic - numeric| / max(|analytic|, |numeric|)`;
/// two exact zeros count as agreement.
pub fn gradient_check(
    model: &AdrnModel<f64>,
    batch: &Batch<f64>,
    lambda: f64,
    h: f64,
    every: usize,
) -> GradCheck {
    let (_, grads) = loss_and_grad(model, batch, lambda).expect("loss");
    let mut out = GradCheck {
        checked: 0,
        max_rel: 0.0,
        worst: (0, 0),
    };
    let mut probe = model.clone();
    for (t, g) in grads.iter().enumerate() {
        for i in (0..g.len()).step_by(every) {
            let original = probe.params()[t][i];
            let mut eval = |value: f64| {
                probe.params_mut()[t][i] = value;
                loss_and_grad(&probe, batch, lambda).expect("loss").0.total
            };
            let numeric = (eval(original + h) - eval(original - h)) / (2.0 * h);
            probe.params_mut()[t][i] = original;
            let scale = g[i].abs().max(numeric.abs());
            let rel = if scale == 0.0 { 0.0 } else { (g[i] - numeric).abs() / scale };
            if rel > out.max_rel {
                out.max_rel = rel;
                out.worst = (t, i);
            }
            out.checked += 1;
        }
    }
    out
}

/// 64-bit LCG producing doubles in `[0, 1)`.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Mean SSIM from scikit-image `structural_similarity` (Gaussian weights,
/// sigma 1.5, population covariance, data range 1) on [`ssim_pair`].
pub const SKIMAGE_SSIM: [f64; 10] = [
    0.7868590331258264,
    0.7754132316212549,
    0.7962545409052924,
    0.814967402274424,
    0.7734583502765782,
    0.7829231058931048,
    0.783013096043609,
    0.7755020781687768,
    0.7657743294341861,
    0.7684334986148076,
];

/// `(rows, cols, x, y)` with `y = 0.6 x + 0.4 u`, all drawn from seed `1000 + i`.
pub fn ssim_pair(i: usize) -> (usize, usize, Vec<f64>, Vec<f64>) {
    let (rows, cols) = (16 + 3 * i, 20 + 2 * i);
    let mut g = Lcg(1000 + i as u64);
    let x: Vec<f64> = (0..rows * cols).map(|_| g.next()).collect();
    let y: Vec<f64> = x.iter().map(|v| 0.6 * v + 0.4 * g.next()).collect();
    (rows, cols, x, y)
}

/// `sigma(95)` of the (200, 30, 191) profile from an independent script.
pub const PROFILE_SIGMA_95: f64 = 23.078678593843645;
