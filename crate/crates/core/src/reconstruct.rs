//! Rebuild a denoised cube from the leading components, integrate element
//! maps, and score the result against a noise-free reference.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

use crate::containers::{unflatten, DataMatrix, EnergyAxis, SpectrumImage};
use crate::decomposition::PcaModel;
use crate::error::{Error, Result};
use crate::phantom::SpectrumModel;
use crate::preprocess::invert_weighting;

/// `T_k P_kᵀ + mean`, still in the weighted domain.
pub fn reconstruct_weighted(model: &PcaModel, k: usize) -> Result<Array2<f64>> {
    if k > model.r() {
        return Err(Error::KOutOfRange { k, r: model.r() });
    }
    let t = model.scores.slice(s![.., ..k]);
    let p = model.loadings.slice(s![.., ..k]);
    let mut out = if k == 0 { Array2::zeros((model.m(), model.n())) } else { t.dot(&p.t()) };
    out += &model.center.mean;
    Ok(out)
}

/// Denoised cube from `k` components: re-add the mean spectrum, then undo
/// the weighting (centering came after weighting, so it is undone first).
pub fn reconstruct(model: &PcaModel, k: usize, rows: usize, cols: usize, axis: EnergyAxis) -> Result<SpectrumImage> {
    let weighted = DataMatrix::new(reconstruct_weighted(model, k)?, rows, cols)?;
    let counts = invert_weighting(&weighted, &model.weights)?;
    Ok(unflatten(&counts, rows, cols, axis)?.with_provenance(format!("reconstruction k={k}")))
}

/// Frobenius norm of `input − [T P ᵀ]_k` for k = 0..=r (non-increasing in k).
pub fn residual_norms(model: &PcaModel, input: ArrayView2<'_, f64>, max_k: usize) -> Result<Vec<f64>> {
    let max_k = max_k.min(model.r());
    let centered = &input - &model.center.mean;
    let mut resid = centered.clone();
    let mut out = vec![frobenius(resid.view())];
    for k in 0..max_k {
        let t = model.scores.column(k);
        let p = model.loadings.column(k);
        resid.axis_iter_mut(ndarray::Axis(0)).zip(t.iter()).for_each(|(mut row, &tk)| row.scaled_add(-tk, &p));
        out.push(frobenius(resid.view()));
    }
    Ok(out)
}

pub fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative Frobenius distance `‖a − b‖ / ‖a‖`.
pub fn relative_error(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    frobenius((&a - &b).view()) / frobenius(a)
}

/// Integration window; a channel belongs to it when its centre lies in `[lo, hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyWindow {
    pub lo_kev: f64,
    pub hi_kev: f64,
    pub label: String,
}

impl EnergyWindow {
    pub fn new(lo_kev: f64, hi_kev: f64, label: impl Into<String>) -> Result<Self> {
        if !(lo_kev < hi_kev) {
            return Err(Error::InvalidParameter(format!("window [{lo_kev}, {hi_kev}) is empty")));
        }
        Ok(Self { lo_kev, hi_kev, label: label.into() })
    }

    pub fn channels(&self, axis: &EnergyAxis) -> Vec<usize> {
        (0..axis.n_channels)
            .filter(|&i| {
                let e = axis.energy_of(i);
                e >= self.lo_kev && e < self.hi_kev
            })
            .collect()
    }
}

pub fn elemental_map(cube: &SpectrumImage, window: &EnergyWindow) -> Result<Array2<f64>> {
    let chans = window.channels(cube.axis());
    if chans.is_empty() {
        return Err(Error::EmptyWindow { lo: window.lo_kev, hi: window.hi_kev });
    }
    let (rows, cols, n) = cube.counts().dim();
    let src = cube.counts().as_slice().expect("standard layout");
    let mut out = Array2::<f64>::zeros((rows, cols));
    out.as_slice_mut().unwrap().par_iter_mut().enumerate().for_each(|(p, v)| {
        let spec = &src[p * n..(p + 1) * n];
        *v = chans.iter().map(|&j| spec[j]).sum();
    });
    Ok(out)
}

/// One window per element, centred on its strongest line inside the axis,
/// two detector FWHM wide.
pub fn default_windows(model: &SpectrumModel, axis: &EnergyAxis) -> Vec<EnergyWindow> {
    let (lo, hi) = (axis.lower_edge(), axis.upper_edge());
    model
        .elements
        .iter()
        .filter_map(|el| {
            let line = el
                .lines
                .iter()
                .filter(|l| l.energy_kev >= lo && l.energy_kev < hi)
                .max_by(|a, b| a.weight.total_cmp(&b.weight))?;
            let half = model.fwhm_kev(line.energy_kev);
            EnergyWindow::new(line.energy_kev - half, line.energy_kev + half, format!("{}-{}", el.symbol, line.label)).ok()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub mse_raw_vs_truth: f64,
    pub mse_recon_vs_truth: f64,
    /// `mse_raw / mse_recon`; `f64::MAX` when the reconstruction is exact.
    pub improvement_factor: f64,
    pub exact: bool,
    pub k_used: usize,
}

pub fn mse(a: &SpectrumImage, b: &SpectrumImage) -> Result<f64> {
    if a.counts().dim() != b.counts().dim() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.counts().dim(), b.counts().dim())));
    }
    let n = a.counts().len() as f64;
    Ok(a.counts().iter().zip(b.counts().iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

pub fn quality(recon: &SpectrumImage, raw: &SpectrumImage, truth: &SpectrumImage, k_used: usize) -> Result<QualityReport> {
    let mse_raw_vs_truth = mse(raw, truth)?;
    let mse_recon_vs_truth = mse(recon, truth)?;
    let exact = mse_recon_vs_truth == 0.0;
    let improvement_factor = if exact { f64::MAX } else { mse_raw_vs_truth / mse_recon_vs_truth };
    Ok(QualityReport { mse_raw_vs_truth, mse_recon_vs_truth, improvement_factor, exact, k_used })
}

/// Pearson correlation of two equally shaped maps.
pub fn correlation(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// Write a map as 16-bit binary PGM (P5, maxval 65535) with linear min–max
/// scaling; the scale goes to `<path>.scale.txt`.
pub fn write_pgm16(path: impl AsRef<Path>, map: ArrayView2<'_, f64>) -> Result<PathBuf> {
    let path = path.as_ref();
    let (lo, hi) = map.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    let mut buf = format!("P5\n{} {}\n65535\n", map.ncols(), map.nrows()).into_bytes();
    for &v in map.iter() {
        let q = if span > 0.0 { ((v - lo) / span * 65535.0).round() } else { 0.0 };
        buf.extend_from_slice(&(q.clamp(0.0, 65535.0) as u16).to_be_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    let mut side = path.as_os_str().to_owned();
    side.push(".scale.txt");
    let side = PathBuf::from(side);
    let text = format!(
        "min {}\nmax {}\nvalue = min + pixel / 65535 * (max - min)\n",
        crate::containers::fmt_f64(lo),
        crate::containers::fmt_f64(hi)
    );
    fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    Ok(side)
}
