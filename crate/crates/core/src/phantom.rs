//! Synthetic twin phantoms: a multilayer device and a two-phase ramp.
//!
//! Spectra come from a parametric model (Gaussian lines on a Kramers-shaped
//! continuum); the noise-free cube is a fractional expectation and the noisy
//! twin is an independent Poisson draw from it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::containers::{EnergyAxis, SpectrumImage};
use crate::error::{Error, Result};

const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub label: &'static str,
    pub energy_kev: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub symbol: &'static str,
    pub z: u32,
    pub lines: Vec<Line>,
}

macro_rules! lines {
    ($(($label:expr, $e:expr, $w:expr)),* $(,)?) => {
        vec![$(Line { label: $label, energy_kev: $e, weight: $w }),*]
    };
}

/// Built-in line table (energies in keV from standard X-ray emission tables).
/// Weights are relative per element and deliberately rough.
pub fn builtin_elements() -> Vec<Element> {
    vec![
        Element { symbol: "N", z: 7, lines: lines![("Ka", 0.392, 0.15)] },
        Element { symbol: "O", z: 8, lines: lines![("Ka", 0.525, 0.25)] },
        Element { symbol: "Al", z: 13, lines: lines![("Ka", 1.487, 0.9), ("Kb", 1.557, 0.018)] },
        Element { symbol: "Si", z: 14, lines: lines![("Ka", 1.740, 1.0), ("Kb", 1.836, 0.03)] },
        Element {
            symbol: "Ti",
            z: 22,
            lines: lines![("Ka", 4.511, 1.6), ("Kb", 4.932, 0.21), ("La", 0.452, 0.16)],
        },
        Element {
            symbol: "Hf",
            z: 72,
            lines: lines![
                ("Ma", 1.645, 1.08),
                ("Ll", 6.960, 0.09),
                ("La", 7.899, 1.8),
                ("Lb1", 9.023, 0.99),
                ("Lb2", 9.347, 0.36),
                ("Lg1", 10.515, 0.144),
            ],
        },
        Element {
            symbol: "Ta",
            z: 73,
            lines: lines![
                ("Ma", 1.710, 1.08),
                ("Ll", 7.173, 0.09),
                ("La", 8.146, 1.8),
                ("Lb1", 9.343, 0.99),
                ("Lb2", 9.652, 0.36),
                ("Lg1", 10.895, 0.144),
            ],
        },
    ]
}

/// A phase of fixed composition (atomic fractions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub composition: Vec<(String, f64)>,
}

impl Phase {
    pub fn new(name: impl Into<String>, composition: &[(&str, f64)]) -> Result<Self> {
        let phase = Self {
            name: name.into(),
            composition: composition.iter().map(|(s, f)| (s.to_string(), *f)).collect(),
        };
        phase.validate()?;
        Ok(phase)
    }

    pub fn validate(&self) -> Result<()> {
        if self.composition.is_empty() {
            return Err(Error::InvalidParameter(format!("phase '{}' is empty", self.name)));
        }
        if self.composition.iter().any(|(_, f)| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::InvalidParameter(format!("phase '{}' has non-positive fraction", self.name)));
        }
        let sum: f64 = self.composition.iter().map(|(_, f)| f).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "phase '{}' fractions sum to {sum}, expected 1",
                self.name
            )));
        }
        Ok(())
    }

    pub fn fraction_of(&self, symbol: &str) -> f64 {
        self.composition.iter().filter(|(s, _)| s == symbol).map(|(_, f)| f).sum()
    }
}

/// The eleven device layers, as (phase, default width fraction), left to right.
pub fn device_layers() -> Vec<(Phase, f64)> {
    let p = |n: &str, c: &[(&str, f64)]| Phase::new(n, c).expect("built-in phase");
    vec![
        (p("Si", &[("Si", 1.0)]), 0.20),
        (p("SiO-A", &[("Si", 0.33), ("O", 0.67)]), 0.06),
        (p("HfO", &[("Hf", 0.33), ("O", 0.67)]), 0.04),
        (p("TiN-A", &[("Ti", 0.50), ("N", 0.50)]), 0.07),
        (p("TaN", &[("Ta", 0.50), ("N", 0.50)]), 0.04),
        (p("TiN-B", &[("Ti", 0.50), ("N", 0.40), ("O", 0.10)]), 0.06),
        (p("Al", &[("Al", 0.80), ("Ti", 0.20)]), 0.15),
        (p("TiN-C", &[("Ti", 0.45), ("N", 0.45), ("Al", 0.10)]), 0.06),
        (p("AlO", &[("Al", 0.40), ("O", 0.60)]), 0.08),
        (p("SiN", &[("Si", 0.43), ("N", 0.57)]), 0.12),
        (p("SiO-B", &[("Si", 0.29), ("O", 0.57), ("N", 0.14)]), 0.12),
    ]
}

pub fn device_phase(name: &str) -> Option<Phase> {
    device_layers().into_iter().map(|(p, _)| p).find(|p| p.name == name)
}

/// Parametric spectrum model.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumModel {
    pub elements: Vec<Element>,
    /// Detector FWHM at `e_ref_kev`, in eV.
    pub fwhm_ref_ev: f64,
    pub e_ref_kev: f64,
    /// Slope of FWHM² vs energy, eV² per keV.
    pub fwhm_slope: f64,
    /// Continuum intensity per unit mean Z, per keV.
    pub background: f64,
    /// No continuum below this energy (detector window cut-off).
    pub background_onset_kev: f64,
    pub e0_kev: f64,
    /// Self-absorption strength; 0 (default) keeps every phase spectrum a
    /// linear mix of element spectra.
    pub absorption: f64,
}

impl Default for SpectrumModel {
    fn default() -> Self {
        Self {
            elements: builtin_elements(),
            fwhm_ref_ev: 125.0,
            e_ref_kev: 5.895,
            fwhm_slope: 2321.0,
            background: 3e-4,
            background_onset_kev: 0.1,
            e0_kev: 300.0,
            absorption: 0.0,
        }
    }
}

impl SpectrumModel {
    pub fn with_background(mut self, background: f64) -> Self {
        self.background = background;
        self
    }

    pub fn element(&self, symbol: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.symbol == symbol)
    }

    /// Detector resolution in keV.
    pub fn fwhm_kev(&self, e_kev: f64) -> f64 {
        let v = self.fwhm_ref_ev * self.fwhm_ref_ev + self.fwhm_slope * (e_kev - self.e_ref_kev);
        v.max(0.0).sqrt() * 1e-3
    }

    pub fn validate(&self, axis: &EnergyAxis) -> Result<()> {
        if !(self.background >= 0.0) {
            return Err(Error::InvalidParameter("background coefficient must be ≥ 0".into()));
        }
        for e in [axis.lower_edge(), axis.upper_edge()] {
            if !(self.fwhm_kev(e.max(0.0)) > 0.0) {
                return Err(Error::InvalidParameter(format!("detector FWHM is not positive at {e} keV")));
            }
        }
        if !(self.absorption >= 0.0) {
            return Err(Error::InvalidParameter("absorption must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Escape fraction `(1 − e^{−χ})/χ` of photons of energy `e_kev` leaving a
    /// slab of the given composition, with `χ = absorption · Σ c Z³ / E³`.
    pub fn escape_fraction(&self, z3_mean: f64, e_kev: f64) -> f64 {
        let chi = self.absorption * z3_mean / e_kev.powi(3);
        if chi < 1e-12 {
            1.0
        } else {
            -(-chi).exp_m1() / chi
        }
    }

    /// Channel-integrated unit-area Gaussian peak at `e_kev`.
    fn add_peak(&self, out: &mut [f64], axis: &EnergyAxis, e_kev: f64, area: f64) {
        let sigma = self.fwhm_kev(e_kev) / FWHM_TO_SIGMA;
        let scale = 1.0 / (std::f64::consts::SQRT_2 * sigma);
        let half = 0.5 * axis.dispersion_kev;
        for (i, v) in out.iter_mut().enumerate() {
            let c = axis.energy_of(i);
            let a = libm::erf((c + half - e_kev) * scale) - libm::erf((c - half - e_kev) * scale);
            *v += area * 0.5 * a;
        }
    }
}

/// Raw (unnormalized) expected spectrum of a phase; its sum is the phase's
/// relative brightness.
pub fn phase_spectrum_raw(phase: &Phase, model: &SpectrumModel, axis: &EnergyAxis) -> Result<Vec<f64>> {
    phase.validate()?;
    let mut out = vec![0.0; axis.n_channels];
    let (lo, hi) = (axis.lower_edge(), axis.upper_edge());
    let elements = phase
        .composition
        .iter()
        .map(|(symbol, frac)| {
            let el = model
                .element(symbol)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown element '{symbol}'")))?;
            Ok((el, *frac))
        })
        .collect::<Result<Vec<_>>>()?;
    let z_mean: f64 = elements.iter().map(|(el, f)| f * el.z as f64).sum();
    let z3_mean: f64 = elements.iter().map(|(el, f)| f * (el.z as f64).powi(3)).sum();
    for (el, frac) in &elements {
        for line in el.lines.iter().filter(|l| l.energy_kev >= lo && l.energy_kev < hi) {
            let area = frac * line.weight * model.escape_fraction(z3_mean, line.energy_kev);
            model.add_peak(&mut out, axis, line.energy_kev, area);
        }
    }
    if model.background > 0.0 {
        for (i, v) in out.iter_mut().enumerate() {
            let e = axis.energy_of(i);
            if e >= model.background_onset_kev && e > 0.0 {
                let kramers = ((model.e0_kev - e) / e).max(0.0);
                *v += model.background * z_mean * kramers * axis.dispersion_kev * model.escape_fraction(z3_mean, e);
            }
        }
    }
    let total: f64 = out.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoLinesInRange(phase.name.clone()));
    }
    Ok(out)
}

/// Expected spectrum of a phase normalized to unit total intensity.
pub fn phase_spectrum(phase: &Phase, model: &SpectrumModel, axis: &EnergyAxis) -> Result<Vec<f64>> {
    let mut s = phase_spectrum_raw(phase, model, axis)?;
    let total: f64 = s.iter().sum();
    s.iter_mut().for_each(|v| *v /= total);
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub phase: Phase,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub rows: usize,
    pub cols: usize,
    pub layers: Vec<Layer>,
    pub boundary_smear_px: f64,
    pub axis: EnergyAxis,
    pub dose: f64,
    pub seed: u64,
    /// Total counts of the noise-free cube at dose 1.
    pub reference_total: f64,
}

impl PhantomSpec {
    /// 96×128 pixels, 600 channels over 0.2–12.2 keV.
    pub fn desk() -> Self {
        Self {
            rows: 96,
            cols: 128,
            layers: device_layers().into_iter().map(|(phase, width)| Layer { phase, width }).collect(),
            boundary_smear_px: 1.0,
            axis: EnergyAxis::spanning(0.2, 12.2, 600).unwrap(),
            dose: 1.0,
            seed: 1,
            reference_total: 2.0e5,
        }
    }

    /// 244×336 pixels, 1200 channels, same counts per pixel as [`desk`](Self::desk).
    pub fn full() -> Self {
        let desk = Self::desk();
        let scale = (244.0 * 336.0) / (desk.rows * desk.cols) as f64;
        Self {
            rows: 244,
            cols: 336,
            axis: EnergyAxis::spanning(0.2, 12.2, 1200).unwrap(),
            reference_total: desk.reference_total * scale,
            ..desk
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidParameter("phantom grid must be non-empty".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidParameter("phantom needs at least one layer".into()));
        }
        if self.layers.iter().any(|l| !(l.width > 0.0)) {
            return Err(Error::InvalidParameter("layer widths must be positive".into()));
        }
        let sum: f64 = self.layers.iter().map(|l| l.width).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("layer widths sum to {sum}, expected 1")));
        }
        if !(self.dose > 0.0) || !self.dose.is_finite() {
            return Err(Error::InvalidParameter(format!("dose must be positive, got {}", self.dose)));
        }
        if !(self.boundary_smear_px >= 0.0) {
            return Err(Error::InvalidParameter("smear must be ≥ 0".into()));
        }
        if !(self.reference_total > 0.0) {
            return Err(Error::InvalidParameter("reference_total must be positive".into()));
        }
        for l in &self.layers {
            l.phase.validate()?;
        }
        Ok(())
    }

    /// First and one-past-last column of each layer before smearing.
    pub fn layer_edges(&self) -> Vec<(usize, usize)> {
        let mut acc = 0.0;
        let mut start = 0;
        self.layers
            .iter()
            .map(|l| {
                acc += l.width;
                let end = ((acc * self.cols as f64).round() as usize).min(self.cols);
                let span = (start, end);
                start = end;
                span
            })
            .collect()
    }

    pub fn describe(&self) -> String {
        let mut s = format!(
            "phantom rows={} cols={} channels={} offset_kev={} dispersion_kev={} dose={} seed={} smear={} reference_total={} layers=",
            self.rows,
            self.cols,
            self.axis.n_channels,
            self.axis.offset_kev,
            self.axis.dispersion_kev,
            self.dose,
            self.seed,
            self.boundary_smear_px,
            self.reference_total
        );
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                s.push(';');
            }
            let _ = write!(s, "{}:{}", l.phase.name, l.width);
        }
        s
    }
}

/// Gaussian smoothing along one line, renormalized over in-bounds taps.
fn smooth_line(v: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return v.to_vec();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let n = v.len() as isize;
    (0..n)
        .map(|i| {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (t, w) in taps.iter().enumerate() {
                let j = i + t as isize - radius;
                if (0..n).contains(&j) {
                    acc += w * v[j as usize];
                    norm += w;
                }
            }
            acc / norm
        })
        .collect()
}

/// Per-layer fraction maps (rows × cols), summing to one at every pixel.
///
/// Layers are vertical bands, so the 2D blur reduces to a 1D blur along columns.
pub fn build_phase_maps(spec: &PhantomSpec) -> Result<Vec<Array2<f64>>> {
    spec.validate()?;
    let profiles: Vec<Vec<f64>> = spec
        .layer_edges()
        .iter()
        .map(|&(a, b)| {
            let mask: Vec<f64> = (0..spec.cols).map(|c| if c >= a && c < b { 1.0 } else { 0.0 }).collect();
            smooth_line(&mask, spec.boundary_smear_px)
        })
        .collect();
    let norms: Vec<f64> = (0..spec.cols).map(|c| profiles.iter().map(|p| p[c]).sum()).collect();
    Ok(profiles
        .iter()
        .map(|p| Array2::from_shape_fn((spec.rows, spec.cols), |(_, c)| p[c] / norms[c]))
        .collect())
}

/// Noise-free expectation cube; total counts equal `dose × reference_total`.
///
/// Each layer contributes its raw model spectrum, so layers differ in
/// brightness as well as in spectral shape.
pub fn synthesize(spec: &PhantomSpec, model: &SpectrumModel) -> Result<SpectrumImage> {
    spec.validate()?;
    model.validate(&spec.axis)?;
    let maps = build_phase_maps(spec)?;
    let spectra = spec
        .layers
        .iter()
        .map(|l| phase_spectrum_raw(&l.phase, model, &spec.axis))
        .collect::<Result<Vec<_>>>()?;
    let n = spec.axis.n_channels;
    let mut column = Array2::<f64>::zeros((spec.cols, n));
    for (map, s) in maps.iter().zip(&spectra) {
        for c in 0..spec.cols {
            let f = map[[0, c]];
            if f != 0.0 {
                column.row_mut(c).iter_mut().zip(s).for_each(|(o, v)| *o += f * v);
            }
        }
    }
    let base_total = column.sum() * spec.rows as f64;
    let factor = spec.dose * (spec.reference_total / base_total);
    column.mapv_inplace(|v| v * factor);
    let counts = Array3::from_shape_fn((spec.rows, spec.cols, n), |(_, c, j)| column[[c, j]]);
    SpectrumImage::new(spec.axis, counts, format!("noise-free {}", spec.describe()))
}

/// Independent Poisson draw of every cell.
///
/// Each pixel owns a ChaCha stream keyed by `(seed, pixel index)`, so the
/// output does not depend on how work is split between threads.
pub fn add_poisson(noise_free: &SpectrumImage, seed: u64) -> Result<SpectrumImage> {
    if noise_free.counts().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter("Poisson means must be non-negative".into()));
    }
    let n = noise_free.n_channels();
    let mut counts = noise_free.counts().clone();
    let data = counts.as_slice_mut().expect("standard layout");
    data.par_chunks_mut(n).enumerate().for_each(|(pixel, spectrum)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(pixel as u64);
        for v in spectrum.iter_mut() {
            *v = if *v > 0.0 { Poisson::new(*v).expect("positive finite mean").sample(&mut rng) } else { 0.0 };
        }
    });
    let provenance = format!("poisson seed={seed} of [{}]", noise_free.provenance());
    SpectrumImage::new(*noise_free.axis(), counts, provenance)
}

/// The Si → SiO₂ composition ramp.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseSpec {
    pub rows: usize,
    pub cols: usize,
    pub axis: EnergyAxis,
    pub dose: f64,
    pub seed: u64,
    pub reference_total: f64,
}

impl Default for TwoPhaseSpec {
    fn default() -> Self {
        Self {
            rows: 100,
            cols: 100,
            axis: EnergyAxis::spanning(0.0, 3.0, 300).unwrap(),
            dose: 1.0,
            seed: 1,
            reference_total: 6.0e3,
        }
    }
}

impl TwoPhaseSpec {
    pub fn with_dose(mut self, dose: f64) -> Self {
        self.dose = dose;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// SiO₂ fraction in column `c`: 0 at the left edge, 1 at the right edge.
pub fn ramp_fraction(c: usize, cols: usize) -> f64 {
    if cols <= 1 {
        0.0
    } else {
        c as f64 / (cols - 1) as f64
    }
}

/// Returns `(noisy, noise_free)`.
pub fn two_phase_object(spec: &TwoPhaseSpec, model: &SpectrumModel) -> Result<(SpectrumImage, SpectrumImage)> {
    if spec.rows == 0 || spec.cols == 0 {
        return Err(Error::InvalidParameter("two-phase grid must be non-empty".into()));
    }
    if !(spec.dose > 0.0) || !(spec.reference_total > 0.0) {
        return Err(Error::InvalidParameter("dose and reference_total must be positive".into()));
    }
    let si = phase_spectrum(&Phase::new("Si", &[("Si", 1.0)])?, model, &spec.axis)?;
    let sio2 = phase_spectrum(&Phase::new("SiO2", &[("Si", 1.0 / 3.0), ("O", 2.0 / 3.0)])?, model, &spec.axis)?;
    let per_pixel = spec.dose * spec.reference_total / (spec.rows * spec.cols) as f64;
    let counts = Array3::from_shape_fn((spec.rows, spec.cols, spec.axis.n_channels), |(_, c, j)| {
        let f = ramp_fraction(c, spec.cols);
        per_pixel * ((1.0 - f) * si[j] + f * sio2[j])
    });
    let truth = SpectrumImage::new(
        spec.axis,
        counts,
        format!(
            "noise-free two-phase rows={} cols={} channels={} dose={} reference_total={}",
            spec.rows, spec.cols, spec.axis.n_channels, spec.dose, spec.reference_total
        ),
    )?;
    let noisy = add_poisson(&truth, spec.seed)?;
    Ok((noisy, truth))
}

/// Plain-text phantom configuration.
///
/// ```toml
/// grid = [96, 128]
/// channels = 600
/// energy_range_kev = [0.2, 12.2]
/// dose = 1.0
/// seed = 1
/// smear = 1.0
/// reference_total = 2.0e5
/// background = 3.0e-4
/// layers = ["Si", "SiO-A", "HfO"]
/// widths = [0.5, 0.3, 0.2]
///
/// [phases.SiC]
/// Si = 0.5
/// C = 0.5
/// ```
///
/// Layer names resolve against `[phases]` first, then the built-in set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub grid: [usize; 2],
    pub channels: usize,
    pub energy_range_kev: [f64; 2],
    pub dose: f64,
    pub seed: u64,
    pub smear: f64,
    pub reference_total: f64,
    pub background: f64,
    /// Self-absorption strength (see [`SpectrumModel::absorption`]).
    #[serde(default, skip_serializing_if = "is_zero")]
    pub absorption: f64,
    pub layers: Vec<String>,
    pub widths: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub phases: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let spec = PhantomSpec::desk();
        Self {
            grid: [spec.rows, spec.cols],
            channels: spec.axis.n_channels,
            energy_range_kev: [spec.axis.lower_edge(), spec.axis.upper_edge()],
            dose: spec.dose,
            seed: spec.seed,
            smear: spec.boundary_smear_px,
            reference_total: spec.reference_total,
            background: SpectrumModel::default().background,
            absorption: 0.0,
            layers: spec.layers.iter().map(|l| l.phase.name.clone()).collect(),
            widths: spec.layers.iter().map(|l| l.width).collect(),
            phases: BTreeMap::new(),
        }
    }
}

impl PhantomConfig {
    pub fn full() -> Self {
        let spec = PhantomSpec::full();
        Self {
            grid: [spec.rows, spec.cols],
            channels: spec.axis.n_channels,
            reference_total: spec.reference_total,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("phantom config serializes")
    }

    pub fn to_spec(&self) -> Result<(PhantomSpec, SpectrumModel)> {
        if self.layers.len() != self.widths.len() {
            return Err(Error::Config(format!(
                "{} layers but {} widths",
                self.layers.len(),
                self.widths.len()
            )));
        }
        let [lo, hi] = self.energy_range_kev;
        if !(hi > lo) {
            return Err(Error::Config("energy_range_kev must be increasing".into()));
        }
        let axis = EnergyAxis::spanning(lo, hi, self.channels)?;
        let layers = self
            .layers
            .iter()
            .zip(&self.widths)
            .map(|(name, &width)| {
                let phase = match self.phases.get(name) {
                    Some(comp) => Phase {
                        name: name.clone(),
                        composition: comp.iter().map(|(s, f)| (s.clone(), *f)).collect(),
                    },
                    None => device_phase(name).ok_or_else(|| Error::Config(format!("unknown phase '{name}'")))?,
                };
                phase.validate()?;
                Ok(Layer { phase, width })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = PhantomSpec {
            rows: self.grid[0],
            cols: self.grid[1],
            layers,
            boundary_smear_px: self.smear,
            axis,
            dose: self.dose,
            seed: self.seed,
            reference_total: self.reference_total,
        };
        spec.validate()?;
        let model = SpectrumModel { absorption: self.absorption, ..SpectrumModel::default().with_background(self.background) };
        model.validate(&axis)?;
        Ok((spec, model))
    }
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// Mean over pixels of the noisy-minus-truth residual's per-channel variance.
pub fn residual_channel_variance(noisy: &SpectrumImage, truth: &SpectrumImage) -> Vec<f64> {
    let r = noisy.counts() - truth.counts();
    let m = (noisy.rows() * noisy.cols()) as f64;
    let flat = r.to_shape((noisy.rows() * noisy.cols(), noisy.n_channels())).unwrap().to_owned();
    flat.axis_iter(Axis(1))
        .map(|col| {
            let mean = col.sum() / m;
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)
        })
        .collect()
}
