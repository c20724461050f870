//! Hyperspectral cube data model, per-band normalization, spectral windows,
//! and patch grids.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// A `rows x cols x bands` raster, stored band-sequential.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube<T> {
    rows: usize,
    cols: usize,
    bands: usize,
    data: Vec<T>,
    band_names: Option<Vec<String>>,
}

impl<T: Scalar> HsiCube<T> {
    pub fn zeros(rows: usize, cols: usize, bands: usize) -> Result<Self> {
        Self::from_bsq(rows, cols, bands, vec![T::zero(); rows * cols * bands])
    }

    /// Build from band-sequential data: index `(b * rows + r) * cols + c`.
    pub fn from_bsq(rows: usize, cols: usize, bands: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(shape_err!("cube extents must be >= 1, got {rows}x{cols}x{bands}"));
        }
        if data.len() != rows * cols * bands {
            return Err(shape_err!(
                "{rows}x{cols}x{bands} cube needs {} values, got {}",
                rows * cols * bands,
                data.len()
            ));
        }
        Ok(Self {
            rows,
            cols,
            bands,
            data,
            band_names: None,
        })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols * bands);
        for b in 0..bands {
            for r in 0..rows {
                for c in 0..cols {
                    data.push(f(r, c, b));
                }
            }
        }
        Self::from_bsq(rows, cols, bands, data)
    }

    pub fn with_band_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.bands {
            return Err(shape_err!("{} band names for {} bands", names.len(), self.bands));
        }
        self.band_names = Some(names);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.bands)
    }

    pub fn band_names(&self) -> Option<&[String]> {
        self.band_names.as_deref()
    }

    pub fn as_bsq(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> T {
        self.data[(band * self.rows + row) * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, band: usize, value: T) {
        self.data[(band * self.rows + row) * self.cols + col] = value;
    }

    /// Row-major `rows x cols` plane of one band.
    pub fn band(&self, band: usize) -> &[T] {
        let p = self.rows * self.cols;
        &self.data[band * p..(band + 1) * p]
    }

    pub fn band_mut(&mut self, band: usize) -> &mut [T] {
        let p = self.rows * self.cols;
        &mut self.data[band * p..(band + 1) * p]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn cast<U: Scalar>(&self) -> HsiCube<U> {
        HsiCube {
            rows: self.rows,
            cols: self.cols,
            bands: self.bands,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            band_names: self.band_names.clone(),
        }
    }

    pub fn same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(shape_err!(
                "cube dims differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            ));
        }
        Ok(())
    }

    /// Spatial crop keeping every band.
    pub fn crop(&self, region: &Region) -> Result<Self> {
        region.check_within(self.rows, self.cols)?;
        let (h, w) = (region.height(), region.width());
        let mut data = Vec::with_capacity(h * w * self.bands);
        for b in 0..self.bands {
            let plane = self.band(b);
            for r in region.rows.clone() {
                data.extend_from_slice(&plane[r * self.cols + region.cols.start..][..w]);
            }
        }
        Ok(Self {
            rows: h,
            cols: w,
            bands: self.bands,
            data,
            band_names: self.band_names.clone(),
        })
    }

    /// True if every value lies in `[-tol, 1 + tol]`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        self.data.iter().all(|v| {
            let v = v.as_f64();
            v >= -tol && v <= 1.0 + tol
        })
    }

    /// Min-max scale every band to `[0, 1]`.
    ///
    /// Constant bands are mapped to zeros; their indices are returned and a
    /// warning is logged for each.
    pub fn normalize_per_band(&self) -> (Self, Vec<usize>) {
        let mut out = self.clone();
        let mut constant = Vec::new();
        for b in 0..self.bands {
            let plane = out.band_mut(b);
            let (lo, hi) = plane
                .iter()
                .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if hi > lo {
                let span = hi - lo;
                plane.iter_mut().for_each(|v| *v = (*v - lo) / span);
            } else {
                log::warn!("band {b} is constant ({lo}); mapped to zeros");
                plane.fill(T::zero());
                constant.push(b);
            }
        }
        (out, constant)
    }

    /// Indices of the `k` bands nearest to `band`, see [`spectral_window`].
    pub fn spectral_window(&self, band: usize, k: usize) -> Result<Vec<usize>> {
        spectral_window(self.bands, band, k)
    }

    /// Spatial crop of the given bands as a `(1, bands.len(), size, size)`
    /// tensor with its top-left corner at `origin`.
    pub fn patch_tensor(
        &self,
        bands: &[usize],
        origin: (usize, usize),
        size: (usize, usize),
    ) -> Result<Tensor4<T>> {
        let (r0, c0) = origin;
        let (h, w) = size;
        if r0 + h > self.rows || c0 + w > self.cols {
            return Err(shape_err!(
                "patch {h}x{w} at ({r0}, {c0}) exceeds {}x{} cube",
                self.rows,
                self.cols
            ));
        }
        let mut data = Vec::with_capacity(bands.len() * h * w);
        for &b in bands {
            if b >= self.bands {
                return Err(param_err!("band {b} out of range for {} bands", self.bands));
            }
            let plane = self.band(b);
            for r in r0..r0 + h {
                data.extend_from_slice(&plane[r * self.cols + c0..][..w]);
            }
        }
        Tensor4::from_vec(Shape4::new(1, bands.len(), h, w), data)
    }
}

/// The `k` bands closest to `band` (itself excluded), in ascending order.
///
/// The window is split `k / 2` below and the rest above. Near either end of
/// the spectrum it is shifted inward so exactly `k` real bands are returned.
pub fn spectral_window(bands: usize, band: usize, k: usize) -> Result<Vec<usize>> {
    if band >= bands {
        return Err(param_err!("band {band} out of range for {bands} bands"));
    }
    if k + 1 > bands {
        return Err(param_err!(
            "spectral window of {k} bands needs at least {} bands, cube has {bands}",
            k + 1
        ));
    }
    let mut below = k / 2;
    let mut above = k - below;
    if below > band {
        below = band;
        above = k - below;
    }
    if band + above > bands - 1 {
        above = bands - 1 - band;
        below = k - above;
    }
    Ok((band - below..band).chain(band + 1..=band + above).collect())
}

/// Half-open spatial rectangle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl Region {
    pub fn new(rows: Range<usize>, cols: Range<usize>) -> Self {
        Self { rows, cols }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self::new(0..rows, 0..cols)
    }

    pub fn height(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() || self.cols.is_empty()
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        let r = self.rows.start < other.rows.end && other.rows.start < self.rows.end;
        let c = self.cols.start < other.cols.end && other.cols.start < self.cols.end;
        !self.is_empty() && !other.is_empty() && r && c
    }

    pub fn check_within(&self, rows: usize, cols: usize) -> Result<()> {
        if self.is_empty() {
            return Err(param_err!("empty region {self:?}"));
        }
        if self.rows.end > rows || self.cols.end > cols {
            return Err(param_err!("region {self:?} exceeds {rows}x{cols} image"));
        }
        Ok(())
    }
}

/// Disjoint training and test rectangles of one scene.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Region,
    pub test: Region,
}

impl SplitSpec {
    /// Washington DC Mall layout: a 200x200 test corner and the remaining
    /// 1080 rows (full width) for training.
    pub fn dc_mall() -> Self {
        Self {
            test: Region::new(0..200, 0..200),
            train: Region::new(200..1280, 0..303),
        }
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        self.train.check_within(rows, cols)?;
        self.test.check_within(rows, cols)?;
        if self.train.overlaps(&self.test) {
            return Err(param_err!("train and test regions overlap"));
        }
        Ok(())
    }
}

/// Origins along one axis of length `extent` starting at `start`.
pub(crate) fn axis_origins(
    start: usize,
    extent: usize,
    patch: usize,
    stride: usize,
    flush: bool,
) -> Vec<usize> {
    let last = extent - patch;
    let mut v: Vec<usize> = (0..=last).step_by(stride).map(|o| start + o).collect();
    if flush && !last.is_multiple_of(stride) {
        v.push(start + last);
    }
    v
}

/// Top-left corners `(row, col)` of a regular patch grid over `region`.
///
/// With `flush_edges`, one extra row/column of origins is placed flush with
/// the far edge whenever the stride does not land there exactly, so every
/// pixel of the region is covered.
pub fn extract_patches(
    region: &Region,
    patch: usize,
    stride: usize,
    flush_edges: bool,
) -> Result<Vec<(usize, usize)>> {
    if region.is_empty() {
        return Err(param_err!("cannot extract patches from an empty region"));
    }
    if patch == 0 || stride == 0 {
        return Err(param_err!("patch size and stride must be >= 1"));
    }
    if patch > region.height() || patch > region.width() {
        return Err(param_err!(
            "patch {patch} larger than region {}x{}",
            region.height(),
            region.width()
        ));
    }
    let rows = axis_origins(region.rows.start, region.height(), patch, stride, flush_edges);
    let cols = axis_origins(region.cols.start, region.width(), patch, stride, flush_edges);
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_affine() {
        let cube = HsiCube::from_bsq(1, 3, 1, vec![10.0f64, 20.0, 30.0]).unwrap();
        let (n, constant) = cube.normalize_per_band();
        assert_eq!(n.as_bsq(), &[0.0, 0.5, 1.0]);
        assert!(constant.is_empty());
        assert_eq!(n.normalize_per_band().0, n);
    }

    #[test]
    fn normalize_constant_band() {
        let cube = HsiCube::from_fn(2, 2, 2, |r, c, b| if b == 0 { 7.0f32 } else { (r + c) as f32 })
            .unwrap();
        let (n, constant) = cube.normalize_per_band();
        assert_eq!(constant, vec![0]);
        assert!(n.band(0).iter().all(|&v| v == 0.0));
        assert_eq!(n.band(1), &[0.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn window_centered() {
        let w = spectral_window(191, 95, 64).unwrap();
        let expected: Vec<usize> = (63..=94).chain(96..=127).collect();
        assert_eq!(w, expected);
    }

    #[test]
    fn window_edges() {
        assert_eq!(spectral_window(191, 0, 64).unwrap(), (1..=64).collect::<Vec<_>>());
        assert_eq!(
            spectral_window(191, 190, 64).unwrap(),
            (126..=189).collect::<Vec<_>>()
        );
        assert_eq!(spectral_window(5, 2, 4).unwrap(), vec![0, 1, 3, 4]);
        assert_eq!(spectral_window(191, 3, 64).unwrap(), {
            let mut v: Vec<usize> = (0..3).collect();
            v.extend(4..=64);
            v
        });
    }

    #[test]
    fn window_too_wide() {
        assert!(spectral_window(5, 2, 5).is_err());
        assert!(spectral_window(5, 5, 2).is_err());
    }

    #[test]
    fn patch_grid_counts() {
        let r = Region::full(25, 25);
        assert_eq!(
            extract_patches(&r, 20, 5, true).unwrap(),
            vec![(0, 0), (0, 5), (5, 0), (5, 5)]
        );
        assert_eq!(extract_patches(&Region::full(20, 20), 20, 5, true).unwrap(), vec![(0, 0)]);
        let train = Region::new(200..1280, 0..303);
        assert_eq!(extract_patches(&train, 20, 5, false).unwrap().len(), 213 * 57);
        // 303 - 20 = 283 is not a multiple of 5, so a flush column is added.
        assert_eq!(extract_patches(&train, 20, 5, true).unwrap().len(), 213 * 58);
    }

    #[test]
    fn patch_grid_errors() {
        assert!(extract_patches(&Region::new(0..0, 0..5), 2, 1, true).is_err());
        assert!(extract_patches(&Region::full(10, 10), 11, 1, true).is_err());
    }

    #[test]
    fn crop_and_patch_agree() {
        let cube = HsiCube::from_fn(6, 7, 3, |r, c, b| (r * 100 + c * 10 + b) as f32).unwrap();
        let crop = cube.crop(&Region::new(2..5, 1..4)).unwrap();
        assert_eq!(crop.dims(), (3, 3, 3));
        assert_eq!(crop.get(0, 0, 2), cube.get(2, 1, 2));
        let t = cube.patch_tensor(&[2, 0], (2, 1), (3, 3)).unwrap();
        assert_eq!(t.get(0, 0, 1, 2), cube.get(3, 3, 2));
        assert_eq!(t.get(0, 1, 2, 0), cube.get(4, 1, 0));
    }

    #[test]
    fn dc_mall_split_is_valid() {
        let s = SplitSpec::dc_mall();
        s.validate(1280, 303).unwrap();
        assert!(s.validate(1000, 303).is_err());
        let bad = SplitSpec {
            train: Region::new(0..50, 0..50),
            test: Region::new(40..60, 40..60),
        };
        assert!(bad.validate(100, 100).is_err());
    }

    proptest! {
        #[test]
        fn window_is_k_distinct_bands(bands in 2usize..200, band_frac in 0.0f64..1.0, k_frac in 0.0f64..1.0) {
            let band = ((bands as f64 * band_frac) as usize).min(bands - 1);
            let k = 1 + ((bands - 2) as f64 * k_frac) as usize;
            let w = spectral_window(bands, band, k).unwrap();
            prop_assert_eq!(w.len(), k);
            prop_assert!(!w.contains(&band));
            prop_assert!(w.iter().all(|&b| b < bands));
            prop_assert!(w.windows(2).all(|p| p[0] < p[1]));
        }

        #[test]
        fn grid_covers_region(h in 1usize..60, w in 1usize..60, patch in 1usize..20, stride in 1usize..20) {
            prop_assume!(patch <= h && patch <= w && stride <= patch);
            let region = Region::new(3..3 + h, 5..5 + w);
            let origins = extract_patches(&region, patch, stride, true).unwrap();
            let mut covered = vec![false; h * w];
            for (r, c) in origins {
                prop_assert!(r + patch <= 3 + h && c + patch <= 5 + w);
                for y in r - 3..r - 3 + patch {
                    for x in c - 5..c - 5 + patch {
                        covered[y * w + x] = true;
                    }
                }
            }
            prop_assert!(covered.iter().all(|&v| v));
        }

        #[test]
        fn normalization_is_idempotent(values in proptest::collection::vec(-50.0f64..50.0, 12)) {
            let cube = HsiCube::from_bsq(2, 3, 2, values).unwrap();
            let (once, _) = cube.normalize_per_band();
            let (twice, _) = once.normalize_per_band();
            prop_assert!(once.is_normalized(0.0));
            for (a, b) in once.as_bsq().iter().zip(twice.as_bsq()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
