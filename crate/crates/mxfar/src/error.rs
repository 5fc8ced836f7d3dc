//! Error types shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid reference specification: {0}")]
    InvalidReference(String),

    #[error("reference signal has zero range; cannot segment its support")]
    DegenerateReference,

    #[error("no usable design rows at u0 = {u0}")]
    EmptyDesign { u0: f64 },

    #[error("all kernel weights vanish at u0 = {u0}")]
    EmptyNeighborhood { u0: f64 },

    #[error(
        "effective sample too small at u0 = {u0}: group {group} has {got} in-bandwidth rows, need {needed}"
    )]
    InsufficientData {
        u0: f64,
        group: usize,
        got: usize,
        needed: usize,
    },

    #[error("singular or ill-conditioned local design at u0 = {u0}")]
    SingularDesign { u0: f64 },

    #[error("Henderson system singular at u0 = {u0}: {block}")]
    SingularSystem { u0: f64, block: String },

    #[error("variance components undefined: need at least 2 subjects, panel has {0}")]
    VarianceUndefined(usize),

    #[error("fit failed: {gaps} of {total} grid points unusable (more than 20% gaps)")]
    FitFailure { gaps: usize, total: usize },

    #[error("no fitted coefficients for grid segment {segment}")]
    GridGap { segment: usize },

    #[error("time index {t} outside the usable range {lo}..{hi} for prediction")]
    PredictionRange { t: usize, lo: usize, hi: usize },

    #[error("subseries scheme infeasible: need T > r*Q, got T = {t}, r = {r}, Q = {q}")]
    Subseries { t: usize, r: usize, q: usize },

    #[error("model selection failed: no candidate produced a finite APE")]
    SelectionFailed,

    #[error("bootstrap unusable: {dropped} of {total} replicates failed (more than 25%)")]
    TooManyReplicateFailures { dropped: usize, total: usize },

    #[error("generated series exploded at subject {subject}, t = {t} (|value| > {bound})")]
    Unbounded {
        subject: usize,
        t: usize,
        bound: f64,
    },

    #[error("unstable generator: companion spectral radius {rho:.4} >= 1")]
    UnstableGenerator { rho: f64 },

    #[error("reference value {u} outside the tabulated range [{lo}, {hi}]")]
    Extrapolation { u: f64, lo: f64, hi: f64 },

    #[error("invalid generator specification: {0}")]
    InvalidGenerator(String),

    #[error("panel validation failed:\n{0}")]
    PanelValidation(String),

    #[error("no analysis windows: panel length {t} is shorter than window length {window}")]
    NoWindows { t: usize, window: usize },

    #[error("{0}")]
    Cli(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
