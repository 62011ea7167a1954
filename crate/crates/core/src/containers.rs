//! Datacube and matrix containers, flattening, and the SIC binary format.
//!
//! A [`SpectrumImage`] is a `rows × cols × channels` cube of (possibly
//! fractional) counts. PCA works on its flattened [`DataMatrix`] form, with
//! pixels in row-major order.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub const SIC_MAGIC: [u8; 4] = *b"SIC1";
const SIC_HEADER_LEN: usize = 4 + 4 * 3 + 8 * 2 + 4;

/// Linear energy calibration: channel `i` is centred on `offset + i * dispersion`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyAxis {
    pub offset_kev: f64,
    pub dispersion_kev: f64,
    pub n_channels: usize,
}

impl EnergyAxis {
    pub fn new(offset_kev: f64, dispersion_kev: f64, n_channels: usize) -> Result<Self> {
        if !(dispersion_kev > 0.0) || !dispersion_kev.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "dispersion must be positive, got {dispersion_kev}"
            )));
        }
        if !offset_kev.is_finite() {
            return Err(Error::InvalidParameter("offset must be finite".into()));
        }
        if n_channels == 0 {
            return Err(Error::InvalidParameter("axis needs at least one channel".into()));
        }
        Ok(Self { offset_kev, dispersion_kev, n_channels })
    }

    /// Axis whose channels tile `[lo, hi)` exactly.
    pub fn spanning(lo_kev: f64, hi_kev: f64, n_channels: usize) -> Result<Self> {
        if n_channels == 0 {
            return Err(Error::InvalidParameter("axis needs at least one channel".into()));
        }
        let d = (hi_kev - lo_kev) / n_channels as f64;
        Self::new(lo_kev + 0.5 * d, d, n_channels)
    }

    /// Centre energy of channel `i`.
    #[inline]
    pub fn energy_of(&self, i: usize) -> f64 {
        self.offset_kev + i as f64 * self.dispersion_kev
    }

    /// Nearest channel to `e`, or `None` when `e` falls outside the axis.
    pub fn channel_of(&self, e: f64) -> Option<usize> {
        let x = ((e - self.offset_kev) / self.dispersion_kev).round();
        if x >= 0.0 && x < self.n_channels as f64 {
            Some(x as usize)
        } else {
            None
        }
    }

    pub fn lower_edge(&self) -> f64 {
        self.offset_kev - 0.5 * self.dispersion_kev
    }

    pub fn upper_edge(&self) -> f64 {
        self.energy_of(self.n_channels - 1) + 0.5 * self.dispersion_kev
    }

    pub fn energies(&self) -> Vec<f64> {
        (0..self.n_channels).map(|i| self.energy_of(i)).collect()
    }
}

/// A spectrum image: one spectrum per pixel of a 2D grid.
///
/// Counts are `f64` so that noise-free expectations and reconstructions fit
/// the same container. Values must be finite; sign is not enforced, since a
/// low-rank reconstruction can dip below zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumImage {
    axis: EnergyAxis,
    counts: Array3<f64>,
    provenance: String,
}

impl SpectrumImage {
    pub fn new(axis: EnergyAxis, counts: Array3<f64>, provenance: impl Into<String>) -> Result<Self> {
        let (rows, cols, n) = counts.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch("cube must have at least one pixel".into()));
        }
        if n != axis.n_channels {
            return Err(Error::DimensionMismatch(format!(
                "cube has {n} channels but axis has {}",
                axis.n_channels
            )));
        }
        if counts.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrum image"));
        }
        let counts = if counts.is_standard_layout() { counts } else { counts.as_standard_layout().to_owned() };
        Ok(Self { axis, counts, provenance: provenance.into() })
    }

    pub fn zeros(rows: usize, cols: usize, axis: EnergyAxis) -> Self {
        Self { axis, counts: Array3::zeros((rows, cols, axis.n_channels)), provenance: String::new() }
    }

    pub fn rows(&self) -> usize {
        self.counts.dim().0
    }

    pub fn cols(&self) -> usize {
        self.counts.dim().1
    }

    pub fn n_channels(&self) -> usize {
        self.axis.n_channels
    }

    pub fn axis(&self) -> &EnergyAxis {
        &self.axis
    }

    pub fn counts(&self) -> &Array3<f64> {
        &self.counts
    }

    pub fn into_counts(self) -> Array3<f64> {
        self.counts
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn total_counts(&self) -> f64 {
        self.counts.sum()
    }

    pub fn spectrum(&self, row: usize, col: usize) -> ArrayView1<'_, f64> {
        self.counts.slice(ndarray::s![row, col, ..])
    }

    /// Per-pixel sum over all channels.
    pub fn total_map(&self) -> Array2<f64> {
        self.counts.sum_axis(ndarray::Axis(2))
    }

    /// Multiply every cell by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { axis: self.axis, counts: &self.counts * factor, provenance: self.provenance.clone() }
    }

    /// Clamp negative cells to zero (presentation only).
    pub fn clamped_nonnegative(&self) -> Self {
        Self { axis: self.axis, counts: self.counts.mapv(|v| v.max(0.0)), provenance: self.provenance.clone() }
    }

    pub fn negative_fraction(&self) -> f64 {
        let neg = self.counts.iter().filter(|&&v| v < 0.0).count();
        neg as f64 / self.counts.len() as f64
    }
}

/// Flattened `m × n` pixel-by-channel matrix, pixels in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub values: Array2<f64>,
    rows: usize,
    cols: usize,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != values.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} grid does not match {} matrix rows",
                values.nrows()
            )));
        }
        Ok(Self { values, rows, cols })
    }

    /// Matrix with a trivial `m × 1` pixel grid.
    pub fn from_values(values: Array2<f64>) -> Self {
        let m = values.nrows();
        Self { values, rows: m, cols: 1 }
    }

    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Source grid position of matrix row `i`.
    #[inline]
    pub fn pixel(&self, i: usize) -> (usize, usize) {
        (i / self.cols, i % self.cols)
    }

    pub fn pixel_map(&self) -> Vec<(usize, usize)> {
        (0..self.m()).map(|i| self.pixel(i)).collect()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        if values.dim() != self.values.dim() {
            return Err(Error::DimensionMismatch(format!(
                "expected {:?}, got {:?}",
                self.values.dim(),
                values.dim()
            )));
        }
        Ok(Self { values, rows: self.rows, cols: self.cols })
    }
}

pub fn flatten(cube: &SpectrumImage) -> DataMatrix {
    let (rows, cols, n) = cube.counts.dim();
    let values = cube
        .counts
        .clone()
        .into_shape_with_order((rows * cols, n))
        .expect("standard layout cube");
    DataMatrix { values, rows, cols }
}

pub fn unflatten(matrix: &DataMatrix, rows: usize, cols: usize, axis: EnergyAxis) -> Result<SpectrumImage> {
    if rows * cols != matrix.m() {
        return Err(Error::DimensionMismatch(format!(
            "{rows}x{cols} = {} pixels, matrix has {}",
            rows * cols,
            matrix.m()
        )));
    }
    if axis.n_channels != matrix.n() {
        return Err(Error::DimensionMismatch(format!(
            "axis has {} channels, matrix has {}",
            axis.n_channels,
            matrix.n()
        )));
    }
    let counts = matrix
        .values
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((rows, cols, axis.n_channels))
        .expect("sizes checked above");
    SpectrumImage::new(axis, counts, String::new())
}

/// Fraction of strictly nonzero entries.
pub fn sparsity(matrix: &DataMatrix) -> f64 {
    fill_fraction(matrix.values.iter())
}

pub(crate) fn fill_fraction<'a>(values: impl ExactSizeIterator<Item = &'a f64>) -> f64 {
    let total = values.len();
    if total == 0 {
        return 0.0;
    }
    let nz = values.filter(|&&v| v != 0.0).count();
    nz as f64 / total as f64
}

pub fn to_sic_bytes(cube: &SpectrumImage) -> Vec<u8> {
    let prov = cube.provenance.as_bytes();
    let mut buf = Vec::with_capacity(SIC_HEADER_LEN + prov.len() + cube.counts.len() * 8);
    buf.extend_from_slice(&SIC_MAGIC);
    buf.extend_from_slice(&(cube.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(cube.cols() as u32).to_le_bytes());
    buf.extend_from_slice(&(cube.n_channels() as u32).to_le_bytes());
    buf.extend_from_slice(&cube.axis.offset_kev.to_le_bytes());
    buf.extend_from_slice(&cube.axis.dispersion_kev.to_le_bytes());
    buf.extend_from_slice(&(prov.len() as u32).to_le_bytes());
    buf.extend_from_slice(prov);
    // standard layout: channel fastest, then col, then row
    for v in cube.counts.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn from_sic_bytes(bytes: &[u8]) -> Result<SpectrumImage> {
    if bytes.len() < 4 {
        return Err(Error::CorruptHeader(format!("file too short ({} bytes)", bytes.len())));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != SIC_MAGIC {
        return Err(Error::MagicMismatch { expected: SIC_MAGIC, found });
    }
    if bytes.len() < SIC_HEADER_LEN {
        return Err(Error::CorruptHeader(format!("header truncated ({} bytes)", bytes.len())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (rows, cols, n) = (u32_at(4), u32_at(8), u32_at(12));
    let (offset, dispersion) = (f64_at(16), f64_at(24));
    let prov_len = u32_at(32);
    if rows == 0 || cols == 0 || n == 0 {
        return Err(Error::CorruptHeader(format!("zero dimension in {rows}x{cols}x{n}")));
    }
    let axis = EnergyAxis::new(offset, dispersion, n)
        .map_err(|e| Error::CorruptHeader(format!("bad energy axis: {e}")))?;
    let prov_end = SIC_HEADER_LEN
        .checked_add(prov_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::CorruptHeader(format!("provenance length {prov_len} exceeds file")))?;
    let provenance = std::str::from_utf8(&bytes[SIC_HEADER_LEN..prov_end])
        .map_err(|_| Error::CorruptHeader("provenance is not valid UTF-8".into()))?
        .to_owned();
    let n_values = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(n))
        .ok_or_else(|| Error::CorruptHeader("declared size overflows".into()))?;
    let payload = &bytes[prov_end..];
    if payload.len() != n_values * 8 {
        return Err(Error::CorruptHeader(format!(
            "header declares {rows}x{cols}x{n} = {n_values} values, payload holds {} bytes",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let counts = Array3::from_shape_vec((rows, cols, n), data).expect("length checked");
    SpectrumImage::new(axis, counts, provenance)
}

pub fn save_container(cube: &SpectrumImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_sic_bytes(cube)).map_err(|e| Error::io(path, e))
}

pub fn load_container(path: impl AsRef<Path>) -> Result<SpectrumImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_sic_bytes(&bytes)
}

/// Write `header` followed by one comma-separated line per row.
pub fn write_csv<I, R>(path: impl AsRef<Path>, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let fields: Vec<String> = row.into_iter().collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// One spectrum as `channel,energy_kev,value`.
pub fn write_spectrum_csv(path: impl AsRef<Path>, axis: &EnergyAxis, values: ArrayView1<'_, f64>) -> Result<()> {
    write_csv(
        path,
        "channel,energy_kev,value",
        values
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i.to_string(), fmt_f64(axis.energy_of(i)), fmt_f64(*v)]),
    )
}

/// A 2D map, one line per pixel row; header names the columns.
pub fn write_map_csv(path: impl AsRef<Path>, map: ArrayView2<'_, f64>) -> Result<()> {
    let mut header = String::new();
    for c in 0..map.ncols() {
        if c > 0 {
            header.push(',');
        }
        let _ = write!(header, "c{c}");
    }
    write_csv(path, &header, map.rows().into_iter().map(|r| r.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>()))
}

/// Shortest round-trip decimal representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
