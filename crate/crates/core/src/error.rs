use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: [u8; 4], found: [u8; 4] },

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("phase '{0}' has no spectral content on the energy axis")]
    NoLinesInRange(String),

    #[error("matrix is all zeros")]
    AllZeroMatrix,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("channel count mismatch: {test} vs {reference}")]
    ChannelMismatch { test: usize, reference: usize },

    #[error("need at least {need} components, got {got}")]
    TooFewComponents { need: usize, got: usize },

    #[error("score vector has zero variance")]
    ZeroVariance,

    #[error("no noise domain found within the first {max_scan} couples")]
    NoNoiseDomain { max_scan: usize },

    #[error("k = {k} out of range 0..={r}")]
    KOutOfRange { k: usize, r: usize },

    #[error("energy window [{lo}, {hi}) keV contains no channel")]
    EmptyWindow { lo: f64, hi: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "input sparsity {fill:.4} (fraction nonzero) is below 0.5 and no filtering was applied; \
         refusing anisotropy selection (use --force to override)"
    )]
    SparseUnfiltered { fill: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }
}
