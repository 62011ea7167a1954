use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use specden::phantom::PhantomConfig;
use specden::pipeline::{
    configure_threads, default_doses, run_analyze, run_denoise, run_dose_study, run_generate, run_truncation_report,
    AnalyzeConfig, DoseStudyConfig, GenerateConfig, Manifest, Method, NoiseMode, PipelineConfig, Scale,
};
use specden::preprocess::{PreprocessConfig, WeightMode};
use specden::truncation::{AnisotropyConfig, Criterion};
use specden::{Error, Result};

const AFTER_HELP: &str = "\
Output files (all under --out):
  generate           phantom_noisy.sic, phantom_truth.sic, phantom.toml, manifest.toml
  denoise            denoised.sic, truncation_report.csv, scree.csv, anisotropy.csv,
                     quality.csv (with --truth), maps/<line>.{csv,pgm,pgm.scale.txt}, manifest.toml
  analyze            scree.csv, anisotropy.csv, scatter_<i>_<j>.csv,
                     proximity.csv and proximity_summary.csv (with --reference), manifest.toml
  dose-study         dose_study.csv, manifest.toml
  truncation-report  retrievability.txt

Environment:
  SPECDEN_THREADS    worker threads (unset or 0 = all cores)
  RUST_LOG           log level (default info)";

#[derive(Parser)]
#[command(name = "specden", version, about = "Weighted PCA denoising of sparse spectrum images", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the layered phantom as noisy and/or noise-free twins.
    Generate(GenerateArgs),
    /// Preprocess, decompose, choose k, and reconstruct.
    Denoise(DenoiseArgs),
    /// Emit scree, anisotropy, scatter-grid and proximity tables.
    Analyze(AnalyzeArgs),
    /// Weighted noise variance of the two-phase object versus dose.
    DoseStudy(DoseArgs),
    /// Retrievability verdicts for the built-in variance fixture.
    TruncationReport(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Phantom description (TOML); defaults to the built-in device stack.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    scale: Scale,
    #[arg(long)]
    dose: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = NoiseMode::Both)]
    noise: NoiseMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Skip 2×2 binning.
    #[arg(long)]
    no_bin: bool,
    /// Gaussian σ in pixels (0 disables).
    #[arg(long)]
    gauss: Option<f64>,
    #[arg(long, value_enum)]
    weight: Option<WeightMode>,
    #[arg(long)]
    no_center: bool,
}

impl PreprocessArgs {
    fn apply(&self, mut p: PreprocessConfig) -> PreprocessConfig {
        if self.no_bin {
            p.bin = false;
        }
        if let Some(g) = self.gauss {
            p.gauss_sigma = g;
        }
        if let Some(w) = self.weight {
            p.weight = w;
        }
        if self.no_center {
            p.center = false;
        }
        p
    }
}

#[derive(Args)]
struct AnisotropyArgs {
    #[arg(long, value_enum)]
    criterion: Option<Criterion>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    max_scan: Option<usize>,
}

impl AnisotropyArgs {
    fn apply(&self, mut a: AnisotropyConfig) -> AnisotropyConfig {
        if let Some(c) = self.criterion {
            a.criterion = c;
        }
        if let Some(t) = self.threshold {
            a.threshold = t;
        }
        if let Some(s) = self.max_scan {
            a.max_scan = s;
        }
        a
    }
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Noise-free twin for quality scores.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base configuration (TOML); flags override it.
    #[arg(long, conflicts_with = "manifest")]
    config: Option<PathBuf>,
    /// Repeat a previous run from its manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    preprocess: PreprocessArgs,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Number of components for `--method fixed`.
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    anisotropy: AnisotropyArgs,
    /// Noise variance override in weighted units.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Use the plain Marchenko–Pastur noise estimator even after smoothing.
    #[arg(long)]
    no_calibrate: bool,
    /// Run the anisotropy scan on sparse, unsmoothed input anyway.
    #[arg(long)]
    force: bool,
    /// Clamp negative reconstructed counts to zero.
    #[arg(long)]
    clamp: bool,
    #[arg(long)]
    no_maps: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Second dataset (e.g. the noise-free twin) for proximity tables.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    couples: usize,
    #[arg(long, default_value_t = 12)]
    components: usize,
    #[command(flatten)]
    preprocess: PreprocessArgs,
    #[command(flatten)]
    anisotropy: AnisotropyArgs,
}

#[derive(Args)]
struct DoseArgs {
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated doses; default 1/16 … 64 in powers of two.
    #[arg(long, value_delimiter = ',')]
    doses: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    out: PathBuf,
}

fn read_text(path: &PathBuf) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn denoise_config(a: &DenoiseArgs) -> Result<PipelineConfig> {
    let mut cfg = if let Some(m) = &a.manifest {
        Manifest::load(m)?
            .denoise
            .ok_or_else(|| Error::Config(format!("{} is not a denoise manifest", m.display())))?
    } else if let Some(c) = &a.config {
        PipelineConfig::from_toml(&read_text(c)?)?
    } else {
        PipelineConfig::default()
    };
    if a.input.is_some() {
        cfg.input = a.input.clone();
    }
    if a.truth.is_some() {
        cfg.truth = a.truth.clone();
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.preprocess = a.preprocess.apply(cfg.preprocess);
    let t = &mut cfg.truncation;
    if let Some(m) = a.method {
        t.method = m;
    }
    if a.k.is_some() {
        t.k = a.k;
        if a.method.is_none() {
            t.method = Method::Fixed;
        }
    }
    if a.sigma2.is_some() {
        t.sigma2 = a.sigma2;
    }
    t.calibrate_noise &= !a.no_calibrate;
    t.force |= a.force;
    t.anisotropy = a.anisotropy.apply(t.anisotropy);
    cfg.clamp |= a.clamp;
    cfg.maps &= !a.no_maps;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let threads = configure_threads()?;
    log::info!("using {threads} worker threads");
    match cli.command {
        Command::Generate(a) => {
            let mut phantom = match &a.spec {
                Some(p) => PhantomConfig::from_toml(&read_text(p)?)?,
                None => match a.scale {
                    Scale::Desk => PhantomConfig::default(),
                    Scale::Full => PhantomConfig::full(),
                },
            };
            if let Some(d) = a.dose {
                phantom.dose = d;
            }
            if let Some(s) = a.seed {
                phantom.seed = s;
            }
            let out = run_generate(&GenerateConfig { out: a.out, noise: a.noise, phantom })?;
            for p in out.written {
                println!("{}", p.display());
            }
        }
        Command::Denoise(a) => {
            let cfg = denoise_config(&a)?;
            let out = run_denoise(&cfg)?;
            print!("{}", out.report.summary());
            if let Some(q) = out.quality {
                println!("improvement factor,{}", q.improvement_factor);
            }
        }
        Command::Analyze(a) => {
            let cfg = AnalyzeConfig {
                input: a.input,
                reference: a.reference,
                out: a.out,
                couples: a.couples,
                components: a.components,
                preprocess: a.preprocess.apply(PreprocessConfig::default()),
                anisotropy: a.anisotropy.apply(AnisotropyConfig::default()),
            };
            let out = run_analyze(&cfg)?;
            for p in out.written {
                println!("{}", p.display());
            }
        }
        Command::DoseStudy(a) => {
            let cfg = DoseStudyConfig { out: a.out, seed: a.seed, doses: a.doses.unwrap_or_else(default_doses) };
            println!("dose,true_w,estimated_w");
            for r in run_dose_study(&cfg)? {
                println!("{},{:.4},{:.4}", r.dose, r.true_w, r.estimated_w);
            }
        }
        Command::TruncationReport(a) => {
            let (_, text) = run_truncation_report(&a.out)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // messages already embed their causes
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
