//! Shared domain types: panel container, kernels, reference signals, and the
//! discretized estimation grid.

pub mod config;
pub mod kernel;
pub mod panel;
pub mod reference;

pub use config::{build_grid, Grid, ModelConfig};
pub use kernel::{kernel_value, scaled_kernel_weight, KernelKind};
pub use panel::Panel;
pub use reference::{extract_reference, ReferenceSeries, ReferenceSpec};
