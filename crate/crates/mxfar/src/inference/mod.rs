//! Residual-bootstrap inference: the nonlinearity test against a
//! constant-coefficient mixed-effects VAR null, and pointwise bootstrap
//! confidence bands for the coefficient functions.

pub mod bootstrap;
pub mod null;

use rayon::prelude::*;

use crate::core::config::quantile_sorted;
use crate::core::panel::Panel;
use crate::core::ModelConfig;
use crate::error::{Error, Result};
use crate::estimator::fit::{fit_mxfar, CoefficientGrid};
use crate::estimator::predict::Predictor;
use crate::inference::bootstrap::{centered_pools, generate_null_panel, FittedGenerator};
use crate::inference::null::{fit_null_mevar, NullModel};
use crate::logging::{mx_debug, mx_warn};
use crate::rng::{substream, tag};

pub use null::NullModel as MixedEffectsVar;

/// Largest tolerated fraction of failed bootstrap replicates.
pub const MAX_REPLICATE_DROP: f64 = 0.25;

/// Outcome of the RSS-ratio nonlinearity test.
#[derive(Debug, Clone)]
pub struct NonlinearityTestResult {
    /// `RSS0 / RSS1 - 1`.
    pub l: f64,
    pub rss0: f64,
    pub rss1: f64,
    /// Effective replicate count after drops.
    pub b: usize,
    pub requested_b: usize,
    pub l_boot: Vec<f64>,
    /// Relative frequency of `L_boot >= L`.
    pub p_value: f64,
}

/// `L`, `RSS0`, `RSS1` for a fitted pair of models, both accumulated over
/// the common usable range `t >= max(p, d)` so the sums are comparable.
pub fn nonlinearity_statistic(
    panel: &Panel,
    grid: &CoefficientGrid,
    null: &NullModel,
) -> Result<(f64, f64, f64)> {
    let predictor = Predictor::new(grid, panel)?;
    let start = predictor.start();
    let rss1: f64 = predictor.residual_panel()?.sum_of_squares();
    let rss0: f64 = null
        .residual_panel(panel, start)
        .iter()
        .map(|m| m.norm_squared())
        .sum();
    Ok((rss0 / rss1 - 1.0, rss0, rss1))
}

/// Bootstrap nonlinearity test. Replicates are seeded from `(seed, b)`, so
/// results do not depend on evaluation order or thread count.
pub fn nonlinearity_test(
    panel: &Panel,
    config: &ModelConfig,
    boot_reps: usize,
    seed: u64,
) -> Result<NonlinearityTestResult> {
    if boot_reps == 0 {
        return Err(Error::InvalidConfig(
            "bootstrap replicate count must be positive".into(),
        ));
    }
    let grid = fit_mxfar(panel, config)?;
    let null = fit_null_mevar(panel, config.p, config.penalty_scale)?;
    let (l, rss0, rss1) = nonlinearity_statistic(panel, &grid, &null)?;

    // Pools come from the full-model residuals, centered within subject.
    let predictor = Predictor::new(&grid, panel)?;
    let pools = centered_pools(&predictor.residual_panel()?.by_subject);

    let replicates: Vec<Option<f64>> = (0..boot_reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, tag::NONLINEARITY, b as u64);
            let boot_panel = generate_null_panel(panel, &null, &pools, &mut rng).ok()?;
            let boot_grid = fit_mxfar(&boot_panel, config).ok()?;
            let boot_null = fit_null_mevar(&boot_panel, config.p, config.penalty_scale).ok()?;
            nonlinearity_statistic(&boot_panel, &boot_grid, &boot_null)
                .ok()
                .map(|(lb, _, _)| lb)
        })
        .collect();

    let l_boot: Vec<f64> = replicates.iter().copied().flatten().collect();
    let dropped = boot_reps - l_boot.len();
    if dropped > 0 {
        mx_warn!("{dropped} of {boot_reps} bootstrap replicates failed and were dropped");
    }
    if (dropped as f64) > MAX_REPLICATE_DROP * boot_reps as f64 {
        return Err(Error::TooManyReplicateFailures {
            dropped,
            total: boot_reps,
        });
    }
    let b = l_boot.len();
    let exceed = l_boot.iter().filter(|&&lb| lb >= l).count();
    Ok(NonlinearityTestResult {
        l,
        rss0,
        rss1,
        b,
        requested_b: boot_reps,
        l_boot,
        p_value: exceed as f64 / b as f64,
    })
}

/// Pointwise bootstrap bands for the group-mean coefficient functions.
#[derive(Debug, Clone)]
pub struct CoefficientBand {
    pub level: f64,
    /// Effective replicate count.
    pub b: usize,
    pub u0: Vec<f64>,
    pub n_channels: usize,
    pub n_groups: usize,
    pub kp: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl CoefficientBand {
    fn idx(&self, channel: usize, group: usize, regressor: usize, segment: usize) -> usize {
        ((channel * self.n_groups + group) * self.kp + regressor) * self.u0.len() + segment
    }

    pub fn lower(&self, channel: usize, group: usize, regressor: usize, segment: usize) -> f64 {
        self.lower[self.idx(channel, group, regressor, segment)]
    }

    pub fn upper(&self, channel: usize, group: usize, regressor: usize, segment: usize) -> f64 {
        self.upper[self.idx(channel, group, regressor, segment)]
    }
}

/// Collect refitted grids from the fitted-model residual bootstrap.
/// `zero_link = Some((target, source))` zeroes that directed link in the
/// generator, which is the null used by the fPDC edge threshold.
pub(crate) fn bootstrap_refits(
    panel: &Panel,
    config: &ModelConfig,
    grid: &CoefficientGrid,
    boot_reps: usize,
    seed: u64,
    stream_tag: u64,
    zero_link: Option<(usize, usize)>,
) -> Result<Vec<CoefficientGrid>> {
    let predictor = Predictor::new(grid, panel)?;
    let pools = centered_pools(&predictor.residual_panel()?.by_subject);
    let generator = FittedGenerator::new(grid, panel, zero_link);
    let replicates: Vec<Option<CoefficientGrid>> = (0..boot_reps)
        .into_par_iter()
        .map(|b| {
            let stream_index = match zero_link {
                // Edge-null streams must not collide across edges.
                Some((t, s)) => (b as u64) ^ ((t as u64 + 1) << 40) ^ ((s as u64 + 1) << 52),
                None => b as u64,
            };
            let mut rng = substream(seed, stream_tag, stream_index);
            let boot_panel = match generator.generate(panel, &pools, &mut rng) {
                Ok(p) => p,
                Err(e) => {
                    mx_debug!("bootstrap replicate {b}: generation failed: {e}");
                    return None;
                }
            };
            match fit_mxfar(&boot_panel, config) {
                Ok(g) => Some(g),
                Err(e) => {
                    mx_debug!("bootstrap replicate {b}: refit failed: {e}");
                    None
                }
            }
        })
        .collect();
    let grids: Vec<CoefficientGrid> = replicates.into_iter().flatten().collect();
    let dropped = boot_reps - grids.len();
    if dropped > 0 {
        mx_warn!("{dropped} of {boot_reps} bootstrap refits failed and were dropped");
    }
    if (dropped as f64) > MAX_REPLICATE_DROP * boot_reps as f64 {
        return Err(Error::TooManyReplicateFailures {
            dropped,
            total: boot_reps,
        });
    }
    Ok(grids)
}

/// Pointwise `(1 +/- level)/2` bootstrap quantile bands for the group-mean
/// coefficients of the fitted model.
pub fn coefficient_bands(
    panel: &Panel,
    config: &ModelConfig,
    boot_reps: usize,
    level: f64,
    seed: u64,
) -> Result<CoefficientBand> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "band level must lie in (0, 1), got {level}"
        )));
    }
    if boot_reps == 0 {
        return Err(Error::InvalidConfig(
            "bootstrap replicate count must be positive".into(),
        ));
    }
    let grid = fit_mxfar(panel, config)?;
    let refits = bootstrap_refits(panel, config, &grid, boot_reps, seed, tag::BANDS, None)?;
    band_from_refits(&grid, &refits, level, panel.n_channels(), panel.n_groups())
}

fn band_from_refits(
    grid: &CoefficientGrid,
    refits: &[CoefficientGrid],
    level: f64,
    k: usize,
    n_groups: usize,
) -> Result<CoefficientBand> {
    let kp = k * grid.config.p;
    let m = grid.grid.len();
    let size = k * n_groups * kp * m;
    let mut lower = vec![f64::NAN; size];
    let mut upper = vec![f64::NAN; size];
    let lo_q = (1.0 - level) / 2.0;
    let hi_q = (1.0 + level) / 2.0;
    for j in 0..k {
        for g in 0..n_groups {
            for r in 0..kp {
                for s in 0..m {
                    let mut values: Vec<f64> = refits
                        .iter()
                        .filter_map(|rf| rf.fits[s].as_ref().map(|f| f.alpha[g][(j, r)]))
                        .collect();
                    if values.is_empty() {
                        continue;
                    }
                    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let idx = ((j * n_groups + g) * kp + r) * m + s;
                    lower[idx] = quantile_sorted(&values, lo_q);
                    upper[idx] = quantile_sorted(&values, hi_q);
                }
            }
        }
    }
    Ok(CoefficientBand {
        level,
        b: refits.len(),
        u0: grid.grid.points.clone(),
        n_channels: k,
        n_groups,
        kp,
        lower,
        upper,
    })
}
