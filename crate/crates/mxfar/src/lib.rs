//! Mixed-effects functional-coefficient autoregression (MX-FAR) for panels
//! of multivariate time series.
//!
//! The toolkit fits autoregressive models whose coefficients are smooth
//! functions of a past-valued reference signal, shared across subjects
//! through group fixed effects with per-subject random effects. On top of
//! the estimator it provides accumulated-prediction-error model selection,
//! a residual-bootstrap nonlinearity test, and functional partial directed
//! coherence networks derived from the fitted coefficient functions.

mod logging;

pub mod cli;
pub mod core;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod rng;
pub mod selection;
pub mod simulator;
pub mod spectral;

pub use crate::core::{
    build_grid, extract_reference, kernel_value, scaled_kernel_weight, Grid, KernelKind,
    ModelConfig, Panel, ReferenceSpec,
};
pub use crate::error::{Error, Result};
pub use crate::estimator::{
    fit_mxfar, fit_mxfar_channel, predict_one_step, residuals, CoefficientGrid, LocalFit,
    Predictor, VarianceComponents,
};
pub use crate::inference::null::fit_null_mevar;
pub use crate::inference::{
    coefficient_bands, nonlinearity_test, CoefficientBand, NonlinearityTestResult,
};
pub use crate::selection::{ape_for_candidate, select_model, ApeReport, Candidate};
pub use crate::simulator::{simulate, GeneratorKind, GeneratorSpec, TrueModel};
pub use crate::spectral::network::{network_summary, NetworkSummary};
pub use crate::spectral::significance::{edge_significance, EdgeSignificance};
pub use crate::spectral::{bar_f, fpdc, mean_fpdc, subject_fpdc, FpdcSurface};
