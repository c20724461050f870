//! Raw little-endian float32 cubes with a `key = value` sidecar header.
//!
//! ```text
//! rows = 64
//! cols = 64
//! bands = 16
//! dtype = float32
//! interleave = bsq
//! byte_order = little
//! ```
//!
//! The header for `scene.raw` lives next to it as `scene.hdr`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hsi::HsiCube;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Interleave {
    /// Band sequential: `[band][row][col]`.
    #[default]
    Bsq,
    /// Band interleaved by line: `[row][band][col]`.
    Bil,
    /// Band interleaved by pixel: `[row][col][band]`.
    Bip,
}

impl fmt::Display for Interleave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interleave::Bsq => "bsq",
            Interleave::Bil => "bil",
            Interleave::Bip => "bip",
        })
    }
}

impl FromStr for Interleave {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bsq" => Ok(Interleave::Bsq),
            "bil" => Ok(Interleave::Bil),
            "bip" => Ok(Interleave::Bip),
            other => Err(Error::Format(format!("unknown interleave '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CubeHeader {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
    pub interleave: Interleave,
    pub band_names: Option<Vec<String>>,
}

impl CubeHeader {
    pub fn new(rows: usize, cols: usize, bands: usize, interleave: Interleave) -> Self {
        Self {
            rows,
            cols,
            bands,
            interleave,
            band_names: None,
        }
    }

    pub fn values(&self) -> usize {
        self.rows * self.cols * self.bands
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut rows, mut cols, mut bands) = (None, None, None);
        let mut interleave = Interleave::Bsq;
        let mut band_names = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("header line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let dim = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::Format(format!("header {key}: bad integer '{v}'")))
            };
            match key {
                "rows" => rows = Some(dim(value)?),
                "cols" => cols = Some(dim(value)?),
                "bands" => bands = Some(dim(value)?),
                "interleave" => interleave = value.parse()?,
                "dtype" if value == "float32" => {}
                "dtype" => {
                    return Err(Error::Format(format!("unsupported dtype '{value}'")));
                }
                "byte_order" if value == "little" => {}
                "byte_order" => {
                    return Err(Error::Format(format!("unsupported byte order '{value}'")));
                }
                "band_names" => {
                    band_names = Some(value.split(',').map(|s| s.trim().to_string()).collect());
                }
                _ => log::debug!("ignoring header key '{key}'"),
            }
        }
        let missing = |k: &str| Error::Format(format!("header is missing '{k}'"));
        let header = Self {
            rows: rows.ok_or_else(|| missing("rows"))?,
            cols: cols.ok_or_else(|| missing("cols"))?,
            bands: bands.ok_or_else(|| missing("bands"))?,
            interleave,
            band_names,
        };
        if header.values() == 0 {
            return Err(Error::Format("header declares an empty cube".into()));
        }
        Ok(header)
    }
}

impl fmt::Display for CubeHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows = {}", self.rows)?;
        writeln!(f, "cols = {}", self.cols)?;
        writeln!(f, "bands = {}", self.bands)?;
        writeln!(f, "dtype = float32")?;
        writeln!(f, "interleave = {}", self.interleave)?;
        writeln!(f, "byte_order = little")?;
        if let Some(names) = &self.band_names {
            writeln!(f, "band_names = {}", names.join(", "))?;
        }
        Ok(())
    }
}

/// Sidecar header path for a data file.
pub fn header_path(data: &Path) -> PathBuf {
    data.with_extension("hdr")
}

/// Decode a raw payload into a cube.
pub fn decode_cube<T: Scalar>(header: &CubeHeader, bytes: &[u8]) -> Result<HsiCube<T>> {
    if bytes.len() != header.values() * 4 {
        return Err(Error::Format(format!(
            "header declares {}x{}x{} = {} float32 values but payload holds {} bytes",
            header.rows,
            header.cols,
            header.bands,
            header.values(),
            bytes.len()
        )));
    }
    let (rows, cols, bands) = (header.rows, header.cols, header.bands);
    let floats = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut bsq = vec![T::zero(); header.values()];
    let plane = rows * cols;
    for (i, v) in floats.enumerate() {
        let (b, r, c) = match header.interleave {
            Interleave::Bsq => (i / plane, (i / cols) % rows, i % cols),
            Interleave::Bil => ((i / cols) % bands, i / (cols * bands), i % cols),
            Interleave::Bip => (i % bands, i / (cols * bands), (i / bands) % cols),
        };
        bsq[(b * rows + r) * cols + c] = T::of(f64::from(v));
    }
    let cube = HsiCube::from_bsq(rows, cols, bands, bsq)?;
    match &header.band_names {
        Some(names) => cube.with_band_names(names.clone()),
        None => Ok(cube),
    }
}

/// Encode a cube's values as little-endian float32 in the given interleave.
pub fn encode_cube<T: Scalar>(cube: &HsiCube<T>, interleave: Interleave) -> Vec<u8> {
    let (rows, cols, bands) = cube.dims();
    let mut out = Vec::with_capacity(rows * cols * bands * 4);
    let mut put = |v: T| out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    match interleave {
        Interleave::Bsq => cube.as_bsq().iter().for_each(|&v| put(v)),
        Interleave::Bil => {
            for r in 0..rows {
                for b in 0..bands {
                    for c in 0..cols {
                        put(cube.get(r, c, b));
                    }
                }
            }
        }
        Interleave::Bip => {
            for r in 0..rows {
                for c in 0..cols {
                    for b in 0..bands {
                        put(cube.get(r, c, b));
                    }
                }
            }
        }
    }
    out
}

/// Read `data` using the header at `header`.
pub fn load_cube_with_header<T: Scalar>(data: &Path, header: &Path) -> Result<HsiCube<T>> {
    let text = fs::read_to_string(header).map_err(|e| Error::io(header, e))?;
    let header = CubeHeader::parse(&text)?;
    let bytes = fs::read(data).map_err(|e| Error::io(data, e))?;
    decode_cube(&header, &bytes)
}

/// Read a cube and its sidecar header.
pub fn load_cube<T: Scalar>(data: &Path) -> Result<HsiCube<T>> {
    load_cube_with_header(data, &header_path(data))
}

/// Write a cube and its sidecar header.
pub fn save_cube<T: Scalar>(cube: &HsiCube<T>, data: &Path, interleave: Interleave) -> Result<()> {
    let (rows, cols, bands) = cube.dims();
    let header = CubeHeader {
        band_names: cube.band_names().map(<[String]>::to_vec),
        ..CubeHeader::new(rows, cols, bands, interleave)
    };
    if let Some(parent) = data.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(data, encode_cube(cube, interleave)).map_err(|e| Error::io(data, e))?;
    let hdr = header_path(data);
    fs::write(&hdr, header.to_string()).map_err(|e| Error::io(&hdr, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let mut h = CubeHeader::new(10, 12, 5, Interleave::Bil);
        h.band_names = Some(vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into()]);
        assert_eq!(CubeHeader::parse(&h.to_string()).unwrap(), h);
    }

    #[test]
    fn header_rejects_bad_fields() {
        assert!(CubeHeader::parse("rows = 2\ncols = 2\n").is_err());
        assert!(CubeHeader::parse("rows = 2\ncols = 2\nbands = 1\ndtype = int16\n").is_err());
        assert!(CubeHeader::parse("rows = 2\ncols = x\nbands = 1\n").is_err());
        assert!(CubeHeader::parse("rows 2\n").is_err());
    }

    #[test]
    fn payload_size_mismatch() {
        let h = CubeHeader::new(10, 10, 5, Interleave::Bsq);
        let bytes = vec![0u8; 499 * 4];
        assert!(matches!(decode_cube::<f32>(&h, &bytes), Err(Error::Format(_))));
    }

    #[test]
    fn every_interleave_round_trips() {
        let cube = HsiCube::from_fn(3, 4, 5, |r, c, b| (r * 100 + c * 10 + b) as f32 * 0.25).unwrap();
        for il in [Interleave::Bsq, Interleave::Bil, Interleave::Bip] {
            let bytes = encode_cube(&cube, il);
            let h = CubeHeader::new(3, 4, 5, il);
            assert_eq!(decode_cube::<f32>(&h, &bytes).unwrap(), cube, "{il}");
        }
    }
}
