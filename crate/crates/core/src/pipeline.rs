//! Command implementations behind the `specden` binary.
//!
//! Every command writes into one output directory under fixed file names
//! (the constants below) and leaves a `manifest.toml` holding the
//! normalized configuration, from which the run can be repeated.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::containers::{flatten, fmt_f64, load_container, save_container, write_csv, write_map_csv, SpectrumImage};
use crate::decomposition::{decompose, proximity, write_scree_csv, PcaModel};
use crate::error::{Error, Result};
use crate::phantom::{add_poisson, synthesize, two_phase_object, PhantomConfig, SpectrumModel, TwoPhaseSpec};
use crate::preprocess::{
    bin2x2, compute_weights, mean, prepare, prepare_with_weights, weighted_noise_variance, PreprocessConfig, Prepared,
    WeightMode,
};
use crate::reconstruct::{default_windows, elemental_map, quality, reconstruct, write_pgm16, QualityReport};
use crate::truncation::{
    anisotropy_series, calibrate_filtered_noise, estimate_noise_sigma2_calibrated, gavish_donoho_cutoff,
    gavish_donoho_threshold, nadler_count, reference_variance_fixture, retrievability_table, scatter_grid,
    scree_knee_hint, AnisotropyConfig, AnisotropySeries, NoiseCalibration, SparsityGuard, TruncationReport,
};

pub const MANIFEST: &str = "manifest.toml";
pub const NOISY: &str = "phantom_noisy.sic";
pub const TRUTH: &str = "phantom_truth.sic";
pub const PHANTOM_CONFIG: &str = "phantom.toml";
pub const DENOISED: &str = "denoised.sic";
pub const REPORT: &str = "truncation_report.csv";
pub const SCREE: &str = "scree.csv";
pub const ANISOTROPY: &str = "anisotropy.csv";
pub const QUALITY: &str = "quality.csv";
pub const MAPS_DIR: &str = "maps";
pub const PROXIMITY: &str = "proximity.csv";
pub const PROXIMITY_SUMMARY: &str = "proximity_summary.csv";
pub const DOSE_STUDY: &str = "dose_study.csv";
pub const RETRIEVABILITY: &str = "retrievability.txt";

/// Bumped whenever a built-in default changes the numbers a run produces.
pub const DEFAULTS_REVISION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 96 × 128 px, 600 channels.
    #[default]
    Desk,
    /// 244 × 336 px, 1200 channels.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Sequential-couple anisotropy scan.
    #[default]
    Anisotropy,
    /// Optimal hard threshold with the estimated noise level.
    Threshold,
    /// Use `k` as given.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationConfig {
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Noise variance override (weighted units).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    /// Calibrate the noise estimator on filtered white noise.
    pub calibrate_noise: bool,
    /// Proceed with the anisotropy scan on sparse, unsmoothed input.
    pub force: bool,
    pub anisotropy: AnisotropyConfig,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            method: Method::Anisotropy,
            k: None,
            sigma2: None,
            calibrate_noise: true,
            force: false,
            anisotropy: AnisotropyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Noise-free twin; enables quality scores and the retrievability oracle.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub scale: Scale,
    /// Clamp negative reconstructed counts to zero before writing.
    pub clamp: bool,
    /// Write element maps for the built-in line windows.
    pub maps: bool,
    pub preprocess: PreprocessConfig,
    pub truncation: TruncationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            truth: None,
            out: PathBuf::from("out"),
            seed: 1,
            scale: Scale::Desk,
            clamp: false,
            maps: true,
            preprocess: PreprocessConfig::default(),
            truncation: TruncationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Normalized form: parsing it back and re-serializing is the identity.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    On,
    Off,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub out: PathBuf,
    pub noise: NoiseMode,
    pub phantom: PhantomConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub input: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    pub out: PathBuf,
    /// Number of sequential couples dumped as scatter grids.
    pub couples: usize,
    /// Number of reference components for the proximity tables.
    pub components: usize,
    pub preprocess: PreprocessConfig,
    pub anisotropy: AnisotropyConfig,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            reference: None,
            out: PathBuf::from("out"),
            couples: 12,
            components: 12,
            preprocess: PreprocessConfig::default(),
            anisotropy: AnisotropyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseStudyConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub doses: Vec<f64>,
}

pub fn default_doses() -> Vec<f64> {
    (-4..=6).map(|e| 2f64.powi(e)).collect()
}

/// What a run did, written as `manifest.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub defaults_revision: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denoise: Option<PipelineConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyze: Option<AnalyzeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dose_study: Option<DoseStudyConfig>,
}

impl Manifest {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            defaults_revision: DEFAULTS_REVISION,
            generate: None,
            denoise: None,
            analyze: None,
            dose_study: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST);
        let text = toml::to_string(self).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Cap the global worker pool from `SPECDEN_THREADS` (unset or 0 = all cores).
pub fn configure_threads() -> Result<usize> {
    let n = match std::env::var("SPECDEN_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("SPECDEN_THREADS must be a non-negative integer, got '{v}'")))?,
        Err(_) => 0,
    };
    if n > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load(path: &Path) -> Result<SpectrumImage> {
    load_container(path).map_err(|e| e.in_stage("load"))
}

// ---------------------------------------------------------------------------
// generate

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub noisy: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub written: Vec<PathBuf>,
}

pub fn run_generate(cfg: &GenerateConfig) -> Result<GenerateOutcome> {
    ensure_dir(&cfg.out)?;
    let (spec, model) = cfg.phantom.to_spec().map_err(|e| e.in_stage("spec"))?;
    info!("generate: {}", spec.describe());
    let truth = synthesize(&spec, &model).map_err(|e| e.in_stage("synthesize"))?;
    let mut out = GenerateOutcome { noisy: None, truth: None, written: Vec::new() };
    if matches!(cfg.noise, NoiseMode::On | NoiseMode::Both) {
        let noisy = add_poisson(&truth, spec.seed).map_err(|e| e.in_stage("poisson"))?;
        let path = cfg.out.join(NOISY);
        save_container(&noisy, &path)?;
        info!("generate: noisy twin has {} counts", noisy.total_counts());
        out.noisy = Some(path.clone());
        out.written.push(path);
    }
    if matches!(cfg.noise, NoiseMode::Off | NoiseMode::Both) {
        let path = cfg.out.join(TRUTH);
        save_container(&truth, &path)?;
        out.truth = Some(path.clone());
        out.written.push(path);
    }
    let spec_path = cfg.out.join(PHANTOM_CONFIG);
    fs::write(&spec_path, cfg.phantom.to_toml()).map_err(|e| Error::io(&spec_path, e))?;
    out.written.push(spec_path);
    let mut manifest = Manifest::new("generate");
    manifest.generate = Some(cfg.clone());
    out.written.push(manifest.write(&cfg.out)?);
    Ok(out)
}

// ---------------------------------------------------------------------------
// denoise

#[derive(Debug, Clone)]
pub struct DenoiseOutcome {
    pub k: usize,
    pub report: TruncationReport,
    pub quality: Option<QualityReport>,
    pub negative_fraction: f64,
    pub denoised: PathBuf,
    pub written: Vec<PathBuf>,
}

/// Noise-free twin prepared in the noisy data's weighted space.
pub struct Twin {
    pub cube: SpectrumImage,
    pub prepared: Prepared,
    pub model: PcaModel,
    /// Mean per-channel variance of the weighted noisy − truth residual.
    pub sigma2_measured: f64,
}

pub fn prepare_twin(truth: SpectrumImage, noisy: &Prepared, cfg: &PreprocessConfig) -> Result<Twin> {
    let prepared = prepare_with_weights(&truth, cfg, &noisy.weights)?;
    let model = decompose(&prepared)?;
    let sigma2_measured = mean(&weighted_noise_variance(&noisy.matrix, &prepared.matrix, &noisy.weights)?);
    Ok(Twin { cube: truth, prepared, model, sigma2_measured })
}

/// Run every rank-selection route on a decomposition.
pub fn build_truncation_report(
    prep: &Prepared,
    model: &PcaModel,
    preprocess: &PreprocessConfig,
    tc: &TruncationConfig,
    seed: u64,
    twin: Option<&Twin>,
) -> Result<TruncationReport> {
    let variances = model.variances.as_slice().expect("contiguous");
    let (m, n) = (model.m(), model.n());
    let mut notes = Vec::new();

    let calibration = if tc.calibrate_noise && preprocess.gauss_sigma > 0.0 {
        let c = calibrate_filtered_noise(prep.filtered.rows(), prep.filtered.cols(), n, preprocess.gauss_sigma, seed)?;
        if let NoiseCalibration::Empirical { factor } = c {
            notes.push(format!("noise estimator calibrated on filtered white noise (tail median = {factor:.4} sigma2)"));
        }
        c
    } else {
        NoiseCalibration::MarchenkoPastur
    };
    let sigma2_est = match estimate_noise_sigma2_calibrated(variances, m, n, calibration) {
        Ok(s) => s,
        Err(e) => {
            notes.push(format!("noise level not estimated: {e}"));
            f64::NAN
        }
    };
    let sigma2_used = tc.sigma2.unwrap_or(sigma2_est);
    let k_gd = if sigma2_used.is_finite() { gavish_donoho_cutoff(variances, sigma2_used, m, n) } else { 0 };
    info!(
        "truncation: sigma2 estimate {sigma2_est:.6}, used {sigma2_used:.6}, hard threshold {:.6} -> k = {k_gd}",
        gavish_donoho_threshold(sigma2_used, m, n)
    );

    let nadler_flags = twin.map(|t| {
        let lt = t.model.variances.as_slice().expect("contiguous");
        let scan = (tc.anisotropy.max_scan + 1).min(lt.len());
        notes.push(format!("twin oracle: measured sigma2 = {}", fmt_f64(t.sigma2_measured)));
        let thr = crate::truncation::nadler_threshold(m, n);
        let flags: Vec<bool> = lt[..scan].iter().map(|&l| l / t.sigma2_measured >= thr).collect();
        debug_assert_eq!(flags.iter().take_while(|&&b| b).count(), nadler_count(&lt[..scan], t.sigma2_measured, m, n));
        flags
    });

    let guard = SparsityGuard { raw_fill: prep.raw_fill, filtered: preprocess.filtered(), force: tc.force };
    let sparse_warning = guard.tripped();
    let (k_aniso, series) = if sparse_warning && !tc.force {
        warn!("truncation: raw fill {:.4} without smoothing; anisotropy scan refused", prep.raw_fill);
        notes.push(format!("anisotropy scan refused: raw fill {} and no smoothing (use --force)", fmt_f64(prep.raw_fill)));
        (None, AnisotropySeries { criterion: tc.anisotropy.criterion, values: Vec::new(), threshold: tc.anisotropy.threshold })
    } else {
        let series = anisotropy_series(model, &tc.anisotropy)?;
        let k = series.noise_domain_start();
        if k.is_none() {
            notes.push(format!("no noise domain within the first {} couples", series.values.len()));
        }
        (k, series)
    };
    info!("truncation: anisotropy ({}) k = {k_aniso:?}", series.criterion.name());

    Ok(TruncationReport {
        k_scree_hint: scree_knee_hint(variances, 30),
        k_gd,
        k_aniso,
        nadler_flags,
        sigma2_est,
        sigma2_used,
        series,
        sparse_warning,
        notes,
    })
}

fn select_k(report: &TruncationReport, tc: &TruncationConfig, r: usize, raw_fill: f64) -> Result<usize> {
    let k = match tc.method {
        Method::Anisotropy => match report.k_aniso {
            Some(k) => k,
            None if report.sparse_warning && !tc.force => return Err(Error::SparseUnfiltered { fill: raw_fill }),
            None => return Err(Error::NoNoiseDomain { max_scan: report.series.values.len() }),
        },
        Method::Threshold => report.k_gd,
        Method::Fixed => tc.k.ok_or_else(|| Error::Config("method 'fixed' needs k".into()))?,
    };
    if k > r {
        return Err(Error::KOutOfRange { k, r });
    }
    Ok(k)
}

fn write_report(path: &Path, report: &TruncationReport) -> Result<()> {
    fs::write(path, report.summary()).map_err(|e| Error::io(path, e))
}

fn write_quality(path: &Path, q: &QualityReport) -> Result<()> {
    write_csv(
        path,
        "metric,value",
        [
            ("mse_raw_vs_truth", fmt_f64(q.mse_raw_vs_truth)),
            ("mse_recon_vs_truth", fmt_f64(q.mse_recon_vs_truth)),
            ("improvement_factor", fmt_f64(q.improvement_factor)),
            ("exact", q.exact.to_string()),
            ("k_used", q.k_used.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| vec![k.to_string(), v]),
    )
}

/// Bring an unprocessed cube onto the grid of the PCA input (binning only).
pub fn on_model_grid(cube: &SpectrumImage, cfg: &PreprocessConfig) -> Result<SpectrumImage> {
    if cfg.bin {
        Ok(bin2x2(cube)?.image)
    } else {
        Ok(cube.clone())
    }
}

pub fn run_denoise(cfg: &PipelineConfig) -> Result<DenoiseOutcome> {
    let input = cfg.input.as_ref().ok_or_else(|| Error::Config("no input file given".into()))?;
    ensure_dir(&cfg.out)?;
    let mut written = Vec::new();

    let cube = load(input)?;
    info!(
        "load: {} ({}x{}x{}, {} counts)",
        input.display(),
        cube.rows(),
        cube.cols(),
        cube.n_channels(),
        cube.total_counts()
    );
    let pp = &cfg.preprocess;
    info!("preprocess: bin={} gauss_sigma={} weight={:?} center={}", pp.bin, pp.gauss_sigma, pp.weight, pp.center);
    let prep = prepare(&cube, pp).map_err(|e| e.in_stage("preprocess"))?;
    info!("preprocess: raw fill {:.4}, PCA input {}x{}", prep.raw_fill, prep.input.m(), prep.input.n());
    let model = decompose(&prep).map_err(|e| e.in_stage("decompose"))?;
    info!("decompose: r = {}, leading variance {:.6}", model.r(), model.variances.first().copied().unwrap_or(0.0));

    let scree_path = cfg.out.join(SCREE);
    write_scree_csv(&scree_path, &model)?;
    written.push(scree_path);

    let twin = match &cfg.truth {
        Some(p) => {
            let t = load(p)?;
            if t.counts().dim() != cube.counts().dim() {
                return Err(Error::DimensionMismatch(format!(
                    "truth {:?} vs input {:?}",
                    t.counts().dim(),
                    cube.counts().dim()
                ))
                .in_stage("load"));
            }
            Some(prepare_twin(t, &prep, pp).map_err(|e| e.in_stage("preprocess"))?)
        }
        None => None,
    };

    let tc = &cfg.truncation;
    let mut report =
        build_truncation_report(&prep, &model, pp, tc, cfg.seed, twin.as_ref()).map_err(|e| e.in_stage("truncation"))?;
    let report_path = cfg.out.join(REPORT);
    let aniso_path = cfg.out.join(ANISOTROPY);
    let k = match select_k(&report, tc, model.r(), prep.raw_fill) {
        Ok(k) => k,
        Err(e) => {
            write_report(&report_path, &report)?;
            return Err(e.in_stage("truncation"));
        }
    };
    info!("truncation: method {:?} -> k = {k}", tc.method);

    let mut recon = reconstruct(&model, k, prep.filtered.rows(), prep.filtered.cols(), *prep.axis())
        .map_err(|e| e.in_stage("reconstruct"))?;
    let negative_fraction = recon.negative_fraction();
    report.notes.push(format!("k used = {k}; negative cells after reconstruction = {}", fmt_f64(negative_fraction)));
    if cfg.clamp {
        recon = recon.clamped_nonnegative();
    }
    write_report(&report_path, &report)?;
    written.push(report_path);
    report.series.write_csv(&aniso_path)?;
    written.push(aniso_path);

    let denoised = cfg.out.join(DENOISED);
    save_container(&recon, &denoised)?;
    written.push(denoised.clone());

    let quality = match &twin {
        Some(t) => {
            let raw = on_model_grid(&cube, pp)?;
            let truth = on_model_grid(&t.cube, pp)?;
            let q = quality(&recon, &raw, &truth, k).map_err(|e| e.in_stage("quality"))?;
            info!("quality: improvement factor {:.3}", q.improvement_factor);
            let path = cfg.out.join(QUALITY);
            write_quality(&path, &q)?;
            written.push(path);
            Some(q)
        }
        None => None,
    };

    if cfg.maps {
        let dir = cfg.out.join(MAPS_DIR);
        ensure_dir(&dir)?;
        for w in default_windows(&SpectrumModel::default(), recon.axis()) {
            if w.channels(recon.axis()).is_empty() {
                continue;
            }
            let map = elemental_map(&recon, &w).map_err(|e| e.in_stage("maps"))?;
            let csv = dir.join(format!("{}.csv", w.label));
            write_map_csv(&csv, map.view())?;
            let pgm = dir.join(format!("{}.pgm", w.label));
            let side = write_pgm16(&pgm, map.view())?;
            written.extend([csv, pgm, side]);
        }
    }

    let mut manifest = Manifest::new("denoise");
    manifest.denoise = Some(cfg.clone());
    written.push(manifest.write(&cfg.out)?);
    Ok(DenoiseOutcome { k, report, quality, negative_fraction, denoised, written })
}

// ---------------------------------------------------------------------------
// analyze

#[derive(Debug, Clone)]
pub struct AnalyzeOutcome {
    pub model: PcaModel,
    pub series: AnisotropySeries,
    pub proximity: Option<Vec<crate::decomposition::ProximitySeries>>,
    pub written: Vec<PathBuf>,
}

pub fn run_analyze(cfg: &AnalyzeConfig) -> Result<AnalyzeOutcome> {
    ensure_dir(&cfg.out)?;
    let mut written = Vec::new();
    let cube = load(&cfg.input)?;
    let prep = prepare(&cube, &cfg.preprocess).map_err(|e| e.in_stage("preprocess"))?;
    let model = decompose(&prep).map_err(|e| e.in_stage("decompose"))?;
    let guard = SparsityGuard { raw_fill: prep.raw_fill, filtered: cfg.preprocess.filtered(), force: true };
    if guard.tripped() {
        warn!("analyze: raw fill {:.4} without smoothing; anisotropy values are unreliable", prep.raw_fill);
    }

    let path = cfg.out.join(SCREE);
    write_scree_csv(&path, &model)?;
    written.push(path);
    let series = anisotropy_series(&model, &cfg.anisotropy).map_err(|e| e.in_stage("anisotropy"))?;
    let path = cfg.out.join(ANISOTROPY);
    series.write_csv(&path)?;
    written.push(path);

    for i in 0..cfg.couples.min(model.r().saturating_sub(1)) {
        let grid = scatter_grid(model.scores.column(i), model.scores.column(i + 1), cfg.anisotropy.t)?;
        let path = cfg.out.join(format!("scatter_{}_{}.csv", i + 1, i + 2));
        let header = (0..grid.t).map(|c| format!("c{c}")).collect::<Vec<_>>().join(",");
        write_csv(&path, &header, grid.cells.rows().into_iter().map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>()))?;
        written.push(path);
    }

    let proximity_series = match &cfg.reference {
        Some(p) => {
            let reference = load(p)?;
            if reference.n_channels() != cube.n_channels() {
                return Err(Error::ChannelMismatch { test: cube.n_channels(), reference: reference.n_channels() }.in_stage("load"));
            }
            if reference.counts().dim() != cube.counts().dim() {
                return Err(Error::DimensionMismatch(format!(
                    "reference {:?} vs input {:?}",
                    reference.counts().dim(),
                    cube.counts().dim()
                ))
                .in_stage("load"));
            }
            let rprep = prepare_with_weights(&reference, &cfg.preprocess, &prep.weights).map_err(|e| e.in_stage("preprocess"))?;
            let rmodel = decompose(&rprep).map_err(|e| e.in_stage("decompose"))?;
            let all = (0..cfg.components.min(rmodel.r()))
                .map(|k| proximity(&model, &rmodel, k))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_stage("proximity"))?;
            let path = cfg.out.join(PROXIMITY);
            write_csv(
                &path,
                "reference_component,test_component,phi",
                all.iter().flat_map(|s| {
                    s.phi.iter().enumerate().map(move |(l, v)| vec![(s.k + 1).to_string(), (l + 1).to_string(), fmt_f64(*v)])
                }),
            )?;
            written.push(path);
            let path = cfg.out.join(PROXIMITY_SUMMARY);
            write_csv(
                &path,
                "reference_component,argmax,max_phi,sum_phi,complete",
                all.iter().map(|s| {
                    vec![
                        (s.k + 1).to_string(),
                        (s.argmax() + 1).to_string(),
                        fmt_f64(s.max()),
                        fmt_f64(s.sum()),
                        s.complete.to_string(),
                    ]
                }),
            )?;
            written.push(path);
            Some(all)
        }
        None => None,
    };

    let mut manifest = Manifest::new("analyze");
    manifest.analyze = Some(cfg.clone());
    written.push(manifest.write(&cfg.out)?);
    Ok(AnalyzeOutcome { model, series, proximity: proximity_series, written })
}

// ---------------------------------------------------------------------------
// dose study

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseRow {
    pub dose: f64,
    /// Mean weighted noise variance with weights from the noise-free twin.
    pub true_w: f64,
    /// Same, with weights estimated from the noisy data itself.
    pub estimated_w: f64,
}

/// Mean weighted noise variance of the two-phase ramp object over a dose
/// series, spectrum-only weighting.
pub fn dose_study(doses: &[f64], seed: u64) -> Result<Vec<DoseRow>> {
    let model = SpectrumModel::default();
    doses
        .iter()
        .map(|&dose| {
            if !(dose > 0.0 && dose.is_finite()) {
                return Err(Error::InvalidParameter(format!("dose must be positive, got {dose}")));
            }
            let spec = TwoPhaseSpec::default().with_dose(dose).with_seed(seed);
            let (noisy, truth) = two_phase_object(&spec, &model)?;
            let (nm, tm) = (flatten(&noisy), flatten(&truth));
            let w_true = compute_weights(&tm, WeightMode::Spectrum)?;
            let w_est = compute_weights(&nm, WeightMode::Spectrum)?;
            Ok(DoseRow {
                dose,
                true_w: mean(&weighted_noise_variance(&nm, &tm, &w_true)?),
                estimated_w: mean(&weighted_noise_variance(&nm, &tm, &w_est)?),
            })
        })
        .collect()
}

pub fn run_dose_study(cfg: &DoseStudyConfig) -> Result<Vec<DoseRow>> {
    ensure_dir(&cfg.out)?;
    let rows = dose_study(&cfg.doses, cfg.seed).map_err(|e| e.in_stage("dose-study"))?;
    for r in &rows {
        info!("dose {}: true-W {:.4}, estimated-W {:.4}", r.dose, r.true_w, r.estimated_w);
    }
    write_csv(
        cfg.out.join(DOSE_STUDY),
        "dose,true_w,estimated_w",
        rows.iter().map(|r| vec![fmt_f64(r.dose), fmt_f64(r.true_w), fmt_f64(r.estimated_w)]),
    )?;
    let mut manifest = Manifest::new("dose-study");
    manifest.dose_study = Some(cfg.clone());
    manifest.write(&cfg.out)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// truncation report

/// Retrievability verdicts for the built-in variance fixture.
pub fn run_truncation_report(out: &Path) -> Result<(Vec<bool>, String)> {
    ensure_dir(out)?;
    let (flags, text) = retrievability_table(&reference_variance_fixture());
    let path = out.join(RETRIEVABILITY);
    fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    Ok((flags, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_echo_is_normalized() {
        let text = "seed = 7\n[preprocess]\ngauss_sigma = 2.0\n[truncation]\nmethod = \"fixed\"\nk = 4\n";
        let cfg = PipelineConfig::from_toml(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.truncation.k, Some(4));
        assert!(cfg.preprocess.bin);
        let echo = cfg.to_toml();
        let again = PipelineConfig::from_toml(&echo).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), echo);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(PipelineConfig::from_toml("sed = 1\n"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[preprocess]\nbinn = true\n"), Err(Error::Config(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("denoise");
        m.denoise = Some(PipelineConfig { input: Some("a.sic".into()), ..Default::default() });
        let path = m.write(dir.path()).unwrap();
        assert_eq!(Manifest::load(path).unwrap(), m);
    }

    #[test]
    fn doses_span_sixteenth_to_sixty_four() {
        let d = default_doses();
        assert_eq!(d.len(), 11);
        assert_eq!(d[0], 0.0625);
        assert_eq!(d[10], 64.0);
    }
}
