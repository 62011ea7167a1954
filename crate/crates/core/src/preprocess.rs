//! Sparsity-reducing filters and Poisson weighting.
//!
//! Order matters: bin → Gaussian filter (on the cube) → flatten → weight →
//! center. Weighting divides by `sqrt(G ⊗ H)` built from the mean image `G`
//! and mean spectrum `H`; empty rows/columns are zeroed rather than dropped
//! so pixel and channel indices stay stable.

use ndarray::{Array1, Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::containers::{flatten, DataMatrix, EnergyAxis, SpectrumImage};
use crate::error::{Error, Result};

/// Result of [`bin2x2`]; the flags report a dropped trailing row/column.
#[derive(Debug, Clone)]
pub struct Binned {
    pub image: SpectrumImage,
    pub dropped_row: bool,
    pub dropped_col: bool,
}

/// Sum 2×2 pixel blocks. Odd trailing rows/columns are dropped and flagged.
pub fn bin2x2(cube: &SpectrumImage) -> Result<Binned> {
    let (rows, cols, n) = cube.counts().dim();
    let (r2, c2) = (rows / 2, cols / 2);
    if r2 == 0 || c2 == 0 {
        return Err(Error::InvalidParameter(format!("cannot bin a {rows}x{cols} image 2x2")));
    }
    let src = cube.counts();
    let mut out = Array3::<f64>::zeros((r2, c2, n));
    out.as_slice_mut().unwrap().par_chunks_mut(c2 * n).enumerate().for_each(|(r, row)| {
        for c in 0..c2 {
            let dst = &mut row[c * n..(c + 1) * n];
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let s = src.slice(ndarray::s![2 * r + dr, 2 * c + dc, ..]);
                dst.iter_mut().zip(s.iter()).for_each(|(d, v)| *d += v);
            }
        }
    });
    let dropped_row = rows % 2 == 1;
    let dropped_col = cols % 2 == 1;
    if dropped_row || dropped_col {
        log::warn!("bin2x2: odd grid {rows}x{cols}, trailing row/column dropped");
    }
    let image = SpectrumImage::new(*cube.axis(), out, format!("bin2x2 of [{}]", cube.provenance()))?;
    Ok(Binned { image, dropped_row, dropped_col })
}

/// Kernel taps `(dy, dx, weight)` of a Gaussian truncated below 10% of its
/// peak, normalized to unit sum. For σ = 1 this is the centre plus 12 neighbours.
pub fn gaussian_kernel(sigma_px: f64) -> Result<Vec<(isize, isize, f64)>> {
    if !(sigma_px > 0.0) || !sigma_px.is_finite() {
        return Err(Error::InvalidParameter(format!("gaussian sigma must be positive, got {sigma_px}")));
    }
    let r2_max = 2.0 * sigma_px * sigma_px * 10f64.ln();
    let radius = r2_max.sqrt().floor() as isize;
    let mut taps = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let r2 = (dx * dx + dy * dy) as f64;
            let w = (-r2 / (2.0 * sigma_px * sigma_px)).exp();
            if w >= 0.1 {
                taps.push((dy, dx, w));
            }
        }
    }
    let sum: f64 = taps.iter().map(|t| t.2).sum();
    taps.iter_mut().for_each(|t| t.2 /= sum);
    Ok(taps)
}

/// Per-channel spatial convolution with the truncated Gaussian. At the border
/// the kernel is renormalized over the taps that fall inside the image.
pub fn gaussian_filter_spatial(cube: &SpectrumImage, sigma_px: f64) -> Result<SpectrumImage> {
    let taps = gaussian_kernel(sigma_px)?;
    let (rows, cols, n) = cube.counts().dim();
    let src = cube.counts().as_slice().expect("standard layout");
    let mut out = Array3::<f64>::zeros((rows, cols, n));
    out.as_slice_mut().unwrap().par_chunks_mut(cols * n).enumerate().for_each(|(r, row)| {
        for c in 0..cols {
            let dst = &mut row[c * n..(c + 1) * n];
            let mut norm = 0.0;
            for &(dy, dx, w) in &taps {
                let (y, x) = (r as isize + dy, c as isize + dx);
                if y < 0 || x < 0 || y >= rows as isize || x >= cols as isize {
                    continue;
                }
                norm += w;
                let off = (y as usize * cols + x as usize) * n;
                dst.iter_mut().zip(&src[off..off + n]).for_each(|(d, v)| *d += w * v);
            }
            dst.iter_mut().for_each(|d| *d /= norm);
        }
    });
    SpectrumImage::new(*cube.axis(), out, format!("gauss sigma={sigma_px} of [{}]", cube.provenance()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Mean image ⊗ mean spectrum.
    Full,
    /// Mean spectrum only (G ≡ 1).
    Spectrum,
    /// No weighting (W ≡ 1).
    None,
}

/// Weighting factors `W = sqrt(G ⊗ H)` and the rows/columns they zero out.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightModel {
    pub g: Array1<f64>,
    pub h: Array1<f64>,
    pub mode: WeightMode,
    pub zero_rows: Vec<usize>,
    pub zero_cols: Vec<usize>,
}

impl WeightModel {
    pub fn identity(m: usize, n: usize) -> Self {
        Self { g: Array1::ones(m), h: Array1::ones(n), mode: WeightMode::None, zero_rows: vec![], zero_cols: vec![] }
    }

    pub fn m(&self) -> usize {
        self.g.len()
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    /// Build from explicit `G` and `H` (e.g. from a noise-free twin).
    pub fn from_parts(g: Array1<f64>, h: Array1<f64>, mode: WeightMode) -> Result<Self> {
        if g.iter().chain(h.iter()).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite and non-negative".into()));
        }
        let zero_rows = g.iter().enumerate().filter(|(_, &v)| v == 0.0).map(|(i, _)| i).collect();
        let zero_cols = h.iter().enumerate().filter(|(_, &v)| v == 0.0).map(|(j, _)| j).collect();
        Ok(Self { g, h, mode, zero_rows, zero_cols })
    }

    #[inline]
    pub fn w(&self, i: usize, j: usize) -> f64 {
        (self.g[i] * self.h[j]).sqrt()
    }

    fn check(&self, matrix: &DataMatrix) -> Result<()> {
        if matrix.m() != self.m() || matrix.n() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "weights are {}x{}, matrix is {}x{}",
                self.m(),
                self.n(),
                matrix.m(),
                matrix.n()
            )));
        }
        Ok(())
    }
}

pub fn compute_weights(matrix: &DataMatrix, mode: WeightMode) -> Result<WeightModel> {
    let v = &matrix.values;
    if v.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidParameter("weights need a non-negative matrix".into()));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::AllZeroMatrix);
    }
    let (m, n) = v.dim();
    if mode == WeightMode::None {
        return Ok(WeightModel::identity(m, n));
    }
    let h = v.mean_axis(Axis(0)).expect("m > 0");
    let g = match mode {
        WeightMode::Full => {
            let g = v.mean_axis(Axis(1)).expect("n > 0");
            let mean = g.mean().expect("m > 0");
            g / mean
        }
        _ => Array1::ones(m),
    };
    WeightModel::from_parts(g, h, mode)
}

/// `out[i][j] = in[i][j] / sqrt(G[i] H[j])`, zero where the weight is zero.
pub fn apply_weighting(matrix: &DataMatrix, w: &WeightModel) -> Result<DataMatrix> {
    w.check(matrix)?;
    let mut out = matrix.values.clone();
    scale_rows(&mut out, w, |x, wij| if wij > 0.0 { x / wij } else { 0.0 });
    matrix.with_values(out)
}

/// Inverse of [`apply_weighting`]; entries with zero weight come back as 0.
pub fn invert_weighting(matrix: &DataMatrix, w: &WeightModel) -> Result<DataMatrix> {
    w.check(matrix)?;
    let mut out = matrix.values.clone();
    scale_rows(&mut out, w, |x, wij| x * wij);
    matrix.with_values(out)
}

fn scale_rows(values: &mut Array2<f64>, w: &WeightModel, f: impl Fn(f64, f64) -> f64 + Sync) {
    let sqrt_h: Vec<f64> = w.h.iter().map(|h| h.sqrt()).collect();
    if !values.is_standard_layout() {
        *values = values.as_standard_layout().to_owned();
    }
    let n = values.ncols();
    values.as_slice_mut().unwrap().par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        let sg = w.g[i].sqrt();
        row.iter_mut().zip(&sqrt_h).for_each(|(x, sh)| *x = f(*x, sg * sh));
    });
}

/// Mean spectrum removed by [`center`].
#[derive(Debug, Clone, PartialEq)]
pub struct CenterModel {
    pub mean: Array1<f64>,
}

impl CenterModel {
    pub fn zeros(n: usize) -> Self {
        Self { mean: Array1::zeros(n) }
    }
}

pub fn center(matrix: &DataMatrix) -> (DataMatrix, CenterModel) {
    let mean = matrix.values.mean_axis(Axis(0)).expect("m > 0");
    let values = &matrix.values - &mean;
    (matrix.with_values(values).expect("same shape"), CenterModel { mean })
}

pub fn uncenter(matrix: &DataMatrix, model: &CenterModel) -> Result<DataMatrix> {
    if model.mean.len() != matrix.n() {
        return Err(Error::DimensionMismatch(format!(
            "center has {} channels, matrix has {}",
            model.mean.len(),
            matrix.n()
        )));
    }
    matrix.with_values(&matrix.values + &model.mean)
}

/// Per-column sample variance (divisor m − 1).
pub fn column_variances(values: &Array2<f64>) -> Vec<f64> {
    let m = values.nrows() as f64;
    values
        .axis_iter(Axis(1))
        .map(|col| {
            let mean = col.sum() / m;
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)
        })
        .collect()
}

/// Per-channel variance of the weighted residual `(noisy − truth) / W`.
pub fn weighted_noise_variance(noisy: &DataMatrix, truth: &DataMatrix, w: &WeightModel) -> Result<Vec<f64>> {
    if noisy.values.dim() != truth.values.dim() {
        return Err(Error::DimensionMismatch("noisy and truth matrices differ in shape".into()));
    }
    let residual = noisy.with_values(&noisy.values - &truth.values)?;
    Ok(column_variances(&apply_weighting(&residual, w)?.values))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean over channels of the per-channel variance of the weighted data.
pub fn mean_weighted_data_variance(matrix: &DataMatrix, w: &WeightModel) -> Result<f64> {
    Ok(mean(&column_variances(&apply_weighting(matrix, w)?.values)))
}

/// Preprocessing switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub bin: bool,
    /// Spatial Gaussian σ in pixels; 0 disables the filter.
    pub gauss_sigma: f64,
    pub weight: WeightMode,
    pub center: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { bin: true, gauss_sigma: 1.0, weight: WeightMode::Full, center: true }
    }
}

impl PreprocessConfig {
    /// Raw data straight into PCA: no filter, no weights, centered.
    pub fn unweighted_raw() -> Self {
        Self { bin: false, gauss_sigma: 0.0, weight: WeightMode::None, center: true }
    }

    /// Whether the smoothing filter runs. Binning alone leaves a sparse
    /// cube sparse, so it does not count.
    pub fn filtered(&self) -> bool {
        self.gauss_sigma > 0.0
    }
}

/// Everything needed to go from a cube to the PCA input and back.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Cube after binning/filtering, in count units.
    pub filtered: SpectrumImage,
    /// Flattened filtered cube.
    pub matrix: DataMatrix,
    /// Weighted and (optionally) centered PCA input.
    pub input: DataMatrix,
    pub weights: WeightModel,
    pub center: CenterModel,
    /// Fill fraction of the raw cube before any filtering.
    pub raw_fill: f64,
    pub dropped_row: bool,
    pub dropped_col: bool,
}

impl Prepared {
    pub fn axis(&self) -> &EnergyAxis {
        self.filtered.axis()
    }
}

/// Filter a cube according to `config` (binning then Gaussian).
pub fn filter_cube(cube: &SpectrumImage, config: &PreprocessConfig) -> Result<(SpectrumImage, bool, bool)> {
    let (mut c, mut dr, mut dc) = (cube.clone(), false, false);
    if config.bin {
        let b = bin2x2(cube)?;
        c = b.image;
        dr = b.dropped_row;
        dc = b.dropped_col;
    }
    if config.gauss_sigma > 0.0 {
        c = gaussian_filter_spatial(&c, config.gauss_sigma)?;
    }
    Ok((c, dr, dc))
}

/// Run bin → filter → flatten → weight → center.
pub fn prepare(cube: &SpectrumImage, config: &PreprocessConfig) -> Result<Prepared> {
    prepare_inner(cube, config, None)
}

/// As [`prepare`], but with externally supplied weights (e.g. those of a
/// noisy twin, so that both twins live in the same weighted space).
pub fn prepare_with_weights(cube: &SpectrumImage, config: &PreprocessConfig, weights: &WeightModel) -> Result<Prepared> {
    prepare_inner(cube, config, Some(weights))
}

fn prepare_inner(cube: &SpectrumImage, config: &PreprocessConfig, weights: Option<&WeightModel>) -> Result<Prepared> {
    let raw_fill = crate::containers::fill_fraction(cube.counts().iter());
    let (filtered, dropped_row, dropped_col) = filter_cube(cube, config)?;
    let matrix = flatten(&filtered);
    let weights = match weights {
        Some(w) => w.clone(),
        None => compute_weights(&matrix, config.weight)?,
    };
    let weighted = apply_weighting(&matrix, &weights)?;
    let (input, center) = if config.center {
        center(&weighted)
    } else {
        let n = weighted.n();
        (weighted, CenterModel::zeros(n))
    };
    Ok(Prepared { filtered, matrix, input, weights, center, raw_fill, dropped_row, dropped_col })
}
