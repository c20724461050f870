//! Band-by-band inference over a whole cube.

use crate::error::{param_err, Result};
use crate::hsi::{axis_origins, HsiCube};
use crate::model::AdrnModel;
use crate::scalar::Scalar;

/// How each band is pushed through the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Inference {
    /// Overlapping square tiles whose residuals are averaged uniformly.
    Tiled { tile: usize, overlap: usize },
    /// The full band in a single forward pass.
    WholeBand,
}

impl Default for Inference {
    fn default() -> Self {
        Inference::Tiled {
            tile: 64,
            overlap: 10,
        }
    }
}

/// Tile origins and the common tile extent, both as `(row, col)`.
pub type TileLayout = (Vec<(usize, usize)>, (usize, usize));

/// Tile origins `(row, col)` and the tile extent used for a `rows x cols`
/// band. Tiles shrink to the band when it is smaller than `tile`.
pub fn tile_layout(
    rows: usize,
    cols: usize,
    tile: usize,
    overlap: usize,
) -> Result<TileLayout> {
    if tile == 0 || overlap >= tile {
        return Err(param_err!("tile {tile} must exceed overlap {overlap}"));
    }
    let (th, tw) = (tile.min(rows), tile.min(cols));
    let stride = tile - overlap;
    let rs = axis_origins(0, rows, th, stride, true);
    let cs = axis_origins(0, cols, tw, stride, true);
    let origins = rs.iter().flat_map(|&r| cs.iter().map(move |&c| (r, c))).collect();
    Ok((origins, (th, tw)))
}

/// Predicted residual of one band.
pub fn band_residual<T: Scalar>(
    model: &AdrnModel<T>,
    noisy: &HsiCube<T>,
    band: usize,
    mode: Inference,
) -> Result<Vec<T>> {
    let (rows, cols, _) = noisy.dims();
    let window = noisy.spectral_window(band, model.config.spectral_bands)?;
    let (origins, size) = match mode {
        Inference::WholeBand => (vec![(0, 0)], (rows, cols)),
        Inference::Tiled { tile, overlap } => tile_layout(rows, cols, tile, overlap)?,
    };
    let mut sum = vec![T::zero(); rows * cols];
    let mut count = vec![0u32; rows * cols];
    for origin in origins {
        let ys = noisy.patch_tensor(&[band], origin, size)?;
        let yp = noisy.patch_tensor(&window, origin, size)?;
        let r = model.forward(&ys, &yp)?;
        let r = r.plane(0, 0);
        for y in 0..size.0 {
            let row = (origin.0 + y) * cols + origin.1;
            for x in 0..size.1 {
                sum[row + x] += r[y * size.1 + x];
                count[row + x] += 1;
            }
        }
    }
    Ok(sum
        .into_iter()
        .zip(count)
        .map(|(s, n)| if n == 1 { s } else { s / T::of(f64::from(n)) })
        .collect())
}

/// Denoise every band: `Y - mean(R over covering tiles)`.
pub fn denoise_cube<T: Scalar>(
    model: &AdrnModel<T>,
    noisy: &HsiCube<T>,
    mode: Inference,
) -> Result<HsiCube<T>> {
    let k = model.config.spectral_bands;
    if k + 1 > noisy.bands() {
        return Err(param_err!(
            "model needs {} adjacent bands but the cube has only {}",
            k,
            noisy.bands()
        ));
    }
    let mut out = noisy.clone();
    for b in 0..noisy.bands() {
        let residual = band_residual(model, noisy, b, mode)?;
        out.band_mut(b)
            .iter_mut()
            .zip(residual)
            .for_each(|(v, r)| *v -= r);
    }
    Ok(out)
}
