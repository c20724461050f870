//! Per-band PSNR/SSIM and their cube-level means.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{shape_err, Result};
use crate::hsi::HsiCube;
use crate::scalar::Scalar;

/// Reported PSNR when the two bands are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr_band<T: Scalar>(x_hat: &[T], x: &[T], peak: f64) -> Result<f64> {
    if x_hat.len() != x.len() || x.is_empty() {
        return Err(shape_err!("psnr of bands with {} and {} pixels", x_hat.len(), x.len()));
    }
    let mse = x_hat
        .iter()
        .zip(x)
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable Gaussian filter keeping only fully-covered positions.
fn filter_valid(img: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (or, oc) = (rows - k + 1, cols - k + 1);
    let mut horiz = vec![0.0; rows * oc];
    for r in 0..rows {
        let line = &img[r * cols..(r + 1) * cols];
        for c in 0..oc {
            horiz[r * oc + c] = taps.iter().zip(&line[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for (i, t) in taps.iter().enumerate() {
            let src = &horiz[(r + i) * oc..(r + i + 1) * oc];
            out[r * oc..(r + 1) * oc]
                .iter_mut()
                .zip(src)
                .for_each(|(o, v)| *o += t * v);
        }
    }
    out
}

fn ssim_terms(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, peak: f64) -> f64 {
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean SSIM over every position of an 11x11 Gaussian window (sigma 1.5)
/// that fits inside the band, with `C1 = (0.01 peak)^2`, `C2 = (0.03 peak)^2`.
///
/// Bands smaller than the window fall back to one global window.
pub fn ssim_band<T: Scalar>(x_hat: &[T], x: &[T], rows: usize, cols: usize, peak: f64) -> Result<f64> {
    if x_hat.len() != rows * cols || x.len() != rows * cols || x.is_empty() {
        return Err(shape_err!(
            "ssim of {rows}x{cols} band got {} and {} pixels",
            x_hat.len(),
            x.len()
        ));
    }
    let a: Vec<f64> = x_hat.iter().map(|v| v.as_f64()).collect();
    let b: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();

    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        log::warn!("{rows}x{cols} band is smaller than the SSIM window; using global statistics");
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
        let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
        let cab = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / n;
        return Ok(ssim_terms(ma, mb, va, vb, cab, peak));
    }

    let taps = gaussian_taps();
    let f = |img: &[f64]| filter_valid(img, rows, cols, &taps);
    let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_a = f(&a);
    let mu_b = f(&b);
    let e_aa = f(&sq(&a, &a));
    let e_bb = f(&sq(&b, &b));
    let e_ab = f(&sq(&a, &b));
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            ssim_terms(
                ma,
                mb,
                e_aa[i] - ma * ma,
                e_bb[i] - mb * mb,
                e_ab[i] - ma * mb,
                peak,
            )
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Mean and sample (n - 1) standard deviation across repeated runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunStat {
    pub mean: f64,
    /// `None` for a single run.
    pub std: Option<f64>,
}

impl RunStat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Self { mean, std }
    }

    /// `mean±std` with the given decimals, or just the mean for one run.
    pub fn format(&self, mean_decimals: usize, std_decimals: usize) -> String {
        match self.std {
            Some(s) => format!("{:.*}±{:.*}", mean_decimals, self.mean, std_decimals, s),
            None => format!("{:.*}", mean_decimals, self.mean),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunStats {
    pub runs: usize,
    pub mpsnr: RunStat,
    pub mssim: RunStat,
}

/// Quality of one or more denoised cubes against the clean reference.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QualityReport {
    /// Per-band PSNR in dB, averaged over runs.
    pub psnr_per_band: Vec<f64>,
    /// Per-band SSIM, averaged over runs.
    pub ssim_per_band: Vec<f64>,
    pub mpsnr: f64,
    pub mssim: f64,
    /// Present when more than one run was evaluated.
    pub run_stats: Option<RunStats>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn band_metrics<T: Scalar>(clean: &HsiCube<T>, denoised: &HsiCube<T>) -> Result<(Vec<f64>, Vec<f64>)> {
    clean.same_dims(denoised)?;
    let (rows, cols, bands) = clean.dims();
    let mut psnr = Vec::with_capacity(bands);
    let mut ssim = Vec::with_capacity(bands);
    for b in 0..bands {
        psnr.push(psnr_band(denoised.band(b), clean.band(b), 1.0)?);
        ssim.push(ssim_band(denoised.band(b), clean.band(b), rows, cols, 1.0)?);
    }
    Ok((psnr, ssim))
}

/// Evaluate every run against `clean` with peak 1.0.
pub fn evaluate<T: Scalar>(clean: &HsiCube<T>, runs: &[HsiCube<T>]) -> Result<QualityReport> {
    if runs.is_empty() {
        return Err(shape_err!("no denoised cubes to evaluate"));
    }
    let per_run = runs
        .iter()
        .map(|r| band_metrics(clean, r))
        .collect::<Result<Vec<_>>>()?;
    let bands = clean.bands();
    let avg = |metric: usize| -> Vec<f64> {
        (0..bands)
            .map(|b| {
                let total: f64 = per_run
                    .iter()
                    .map(|(psnr, ssim)| if metric == 0 { psnr[b] } else { ssim[b] })
                    .sum();
                total / per_run.len() as f64
            })
            .collect()
    };
    let psnr_per_band = avg(0);
    let ssim_per_band = avg(1);
    let run_stats = (runs.len() > 1).then(|| RunStats {
        runs: runs.len(),
        mpsnr: RunStat::of(&per_run.iter().map(|r| mean(&r.0)).collect::<Vec<_>>()),
        mssim: RunStat::of(&per_run.iter().map(|r| mean(&r.1)).collect::<Vec<_>>()),
    });
    Ok(QualityReport {
        mpsnr: mean(&psnr_per_band),
        mssim: mean(&ssim_per_band),
        psnr_per_band,
        ssim_per_band,
        run_stats,
    })
}

impl QualityReport {
    pub fn mpsnr_cell(&self) -> String {
        match &self.run_stats {
            Some(s) => s.mpsnr.format(3, 4),
            None => format!("{:.3}", self.mpsnr),
        }
    }

    pub fn mssim_cell(&self) -> String {
        match &self.run_stats {
            Some(s) => s.mssim.format(4, 4),
            None => format!("{:.4}", self.mssim),
        }
    }

    /// Per-band CSV followed by the aggregate rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("band,psnr_db,ssim\n");
        for (b, (p, s)) in self.psnr_per_band.iter().zip(&self.ssim_per_band).enumerate() {
            let _ = writeln!(out, "{b},{p:.6},{s:.6}");
        }
        let _ = writeln!(out, "mean,{:.6},{:.6}", self.mpsnr, self.mssim);
        if let Some(s) = &self.run_stats {
            // Sample standard deviation (n - 1) across runs.
            let _ = writeln!(
                out,
                "std_n-1,{:.6},{:.6}",
                s.mpsnr.std.unwrap_or(0.0),
                s.mssim.std.unwrap_or(0.0)
            );
            let _ = writeln!(out, "runs,{},{}", s.runs, s.runs);
        }
        out
    }

    /// Aligned text table: one MPSNR and one MSSIM row for `label`.
    pub fn to_table(&self, label: &str) -> String {
        let mut out = String::new();
        let w = label.len().max("Noise Level".len());
        let _ = writeln!(out, "{:<w$}  {:<9}  ADRN", "Noise Level", "Criterion");
        let _ = writeln!(out, "{:<w$}  {:<9}  {}", label, "MPSNR", self.mpsnr_cell());
        let _ = writeln!(out, "{:<w$}  {:<9}  {}", "", "MSSIM", self.mssim_cell());
        if let Some(s) = &self.run_stats {
            let _ = writeln!(out, "({} runs, mean±sample std)", s.runs);
        }
        out
    }
}
