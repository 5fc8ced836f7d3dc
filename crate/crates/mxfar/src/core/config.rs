//! Model configuration and the discretized reference grid.

use serde::{Deserialize, Serialize};

use crate::core::kernel::KernelKind;
use crate::core::panel::Panel;
use crate::core::reference::{extract_reference, ReferenceSeries, ReferenceSpec};
use crate::error::{Error, Result};

pub const DEFAULT_GRID_SIZE: usize = 50;
pub const DEFAULT_PENALTY_SCALE: f64 = 1.0;
pub const DEFAULT_GRID_CLIP: (f64, f64) = (0.01, 0.99);

/// Everything needed to fit one MX-FAR model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Autoregressive order.
    pub p: usize,
    pub reference: ReferenceSpec,
    pub kernel: KernelKind,
    /// Kernel bandwidth, in reference-signal units.
    pub bandwidth: f64,
    /// Number of grid segments the reference support is split into.
    pub grid_size: usize,
    /// Single tuning parameter scaling all random-effect penalties.
    pub penalty_scale: f64,
    /// Pooled-quantile pair clipping the grid range.
    pub grid_clip: (f64, f64),
}

impl ModelConfig {
    pub fn new(p: usize, reference: ReferenceSpec, bandwidth: f64) -> Self {
        ModelConfig {
            p,
            reference,
            kernel: KernelKind::default(),
            bandwidth,
            grid_size: DEFAULT_GRID_SIZE,
            penalty_scale: DEFAULT_PENALTY_SCALE,
            grid_clip: DEFAULT_GRID_CLIP,
        }
    }

    pub fn validate(&self, panel: &Panel) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidConfig("lag order p must be positive".into()));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::InvalidBandwidth(self.bandwidth));
        }
        if self.grid_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "grid size must be at least 2, got {}",
                self.grid_size
            )));
        }
        if !(self.penalty_scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "penalty scale must be positive, got {}",
                self.penalty_scale
            )));
        }
        let (lo, hi) = self.grid_clip;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::InvalidConfig(format!(
                "grid clip quantiles must satisfy 0 <= low < high <= 1, got ({lo}, {hi})"
            )));
        }
        if panel.n_time() <= self.p {
            return Err(Error::InvalidConfig(format!(
                "panel length {} does not exceed lag order {}",
                panel.n_time(),
                self.p
            )));
        }
        // Checks channel/lag ranges as a side effect.
        extract_reference(panel, &self.reference)?;
        Ok(())
    }

    /// First 0-based time index with both all lags and the reference available.
    pub fn burn_in(&self) -> usize {
        self.p.max(self.reference.lag())
    }

    /// Config for a panel restricted to `[start, start+len)`, same tuning.
    pub(crate) fn rebased(&self, start: usize, len: usize) -> ModelConfig {
        ModelConfig {
            reference: self.reference.rebased(start, len),
            ..self.clone()
        }
    }
}

/// The discretized support of the reference signal: `M` equal-length
/// segments over the clipped pooled range, represented by their midpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub points: Vec<f64>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Segment containing `u`. Segments are left-closed/right-open except the
    /// last (closed); out-of-range values snap to the end segments.
    #[inline]
    pub fn segment_of(&self, u: f64) -> usize {
        let m = self.points.len();
        let width = (self.hi - self.lo) / m as f64;
        let idx = ((u - self.lo) / width).floor();
        if idx < 0.0 {
            0
        } else if idx >= m as f64 {
            m - 1
        } else {
            idx as usize
        }
    }
}

/// Linear-interpolation quantile of already-sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Build the estimation grid from the pooled reference values.
pub fn build_grid(panel: &Panel, config: &ModelConfig) -> Result<Grid> {
    let reference = extract_reference(panel, &config.reference)?;
    build_grid_from_reference(&reference, config)
}

pub(crate) fn build_grid_from_reference(
    reference: &ReferenceSeries,
    config: &ModelConfig,
) -> Result<Grid> {
    let mut pooled = reference.pooled();
    if pooled.is_empty() {
        return Err(Error::DegenerateReference);
    }
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = quantile_sorted(&pooled, config.grid_clip.0);
    let hi = quantile_sorted(&pooled, config.grid_clip.1);
    if !(hi > lo) {
        return Err(Error::DegenerateReference);
    }
    let m = config.grid_size;
    let width = (hi - lo) / m as f64;
    let points = (0..m).map(|i| lo + width * (i as f64 + 0.5)).collect();
    Ok(Grid { lo, hi, points })
}
