//! Local-linear estimation of functional coefficients: single-subject WLS
//! and the penalized mixed-effects system solved per subject block.
//!
//! Column layout used everywhere: regressor `r = lag * k + channel`
//! (lag-major), intercept columns first, slope columns second.

pub mod design;
pub mod export;
pub mod fit;
pub mod henderson;
pub mod local_wls;
pub mod predict;
pub mod variance;

pub use design::{build_local_design, LocalDesign, SubjectDesign};
pub use fit::{fit_mxfar, fit_mxfar_channel, ChannelLocalFit, CoefficientGrid, LocalFit};
pub use henderson::{penalty_matrix, solve_henderson_block, HendersonSolution};
pub use local_wls::fit_far_local;
pub use predict::{predict_one_step, residuals, Predictor, ResidualPanel};
pub use variance::{estimate_variance_components, VarianceComponents};
