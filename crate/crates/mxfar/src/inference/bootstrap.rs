//! Residual-bootstrap panel regeneration shared by the nonlinearity test,
//! the coefficient bands, and the fPDC edge-significance thresholds.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::core::panel::Panel;
use crate::core::reference::ReferenceSpec;
use crate::error::{Error, Result};
use crate::estimator::fit::CoefficientGrid;
use crate::inference::null::NullModel;

/// Centered within-subject residual pools. Residual vectors are resampled
/// whole (one column per draw), preserving any contemporaneous structure.
pub(crate) fn centered_pools(residuals: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    residuals
        .iter()
        .map(|r| {
            let mut c = r.clone();
            for j in 0..c.nrows() {
                let mean = c.row(j).sum() / c.ncols() as f64;
                for t in 0..c.ncols() {
                    c[(j, t)] -= mean;
                }
            }
            for j in 0..c.nrows() {
                let mean = c.row(j).sum() / c.ncols() as f64;
                assert!(
                    mean.abs() <= 1e-12,
                    "centered residual pool retains mean {mean}"
                );
            }
            c
        })
        .collect()
}

/// Resample a panel under the fitted constant-coefficient null model,
/// recursively propagating lagged regressors from time `p` on.
pub(crate) fn generate_null_panel(
    panel: &Panel,
    null: &NullModel,
    pools: &[DMatrix<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<Panel> {
    let k = panel.n_channels();
    let t_len = panel.n_time();
    let p = null.p;
    let mut series = Vec::with_capacity(panel.n_subjects());
    for n in 0..panel.n_subjects() {
        let coeff = null.subject_coefficients(panel.group_of(n), n);
        let pool = &pools[n];
        let mut y = vec![vec![0.0f64; t_len]; k];
        for (j, chan) in y.iter_mut().enumerate() {
            for t in 0..p {
                chan[t] = panel.value(n, j, t);
            }
        }
        for t in p..t_len {
            let draw = rng.random_range(0..pool.ncols());
            for j in 0..k {
                let mut acc = 0.0;
                for lag in 0..p {
                    for g in 0..k {
                        acc += coeff[(j, lag * k + g)] * y[g][t - lag - 1];
                    }
                }
                y[j][t] = acc + pool[(j, draw)];
            }
        }
        series.push(y);
    }
    Panel::from_series(
        series,
        panel.group_labels().to_vec(),
        panel.subject_ids().to_vec(),
    )
}

/// Companion spectral radius ceiling for the regeneration tables.
const GENERATOR_RADIUS_CAP: f64 = 1.1;

/// Per-(segment, subject) coefficient tables of a fitted grid, optionally
/// with one directed link `(source -> target)` zeroed out across all lags.
///
/// Sparse edge segments can carry wildly unstable per-subject estimates;
/// because out-of-range reference values snap to the end segments, an
/// explosive table there is an absorbing state for regenerated paths. For
/// generation only, a subject's table whose companion spectral radius
/// reaches `GENERATOR_RADIUS_CAP` is replaced by that subject's nearest
/// stable segment table. The fitted estimates themselves are never touched.
pub(crate) struct FittedGenerator {
    /// `[segment][subject]`, `None` at grid gaps.
    coeff: Vec<Option<Vec<DMatrix<f64>>>>,
    p: usize,
    k: usize,
    reference: ReferenceSpec,
    grid_lo: f64,
    grid_hi: f64,
    segments: usize,
}

impl FittedGenerator {
    pub fn new(grid: &CoefficientGrid, panel: &Panel, zero_link: Option<(usize, usize)>) -> Self {
        let k = panel.n_channels();
        let p = grid.config.p;
        let n_subjects = panel.n_subjects();
        let mut coeff: Vec<Option<Vec<DMatrix<f64>>>> = grid
            .fits
            .iter()
            .map(|fit| {
                fit.as_ref().map(|f| {
                    (0..n_subjects)
                        .map(|n| {
                            let mut c = f.subject_coefficients(panel.group_of(n), n);
                            if let Some((target, source)) = zero_link {
                                for lag in 0..p {
                                    c[(target, lag * k + source)] = 0.0;
                                }
                            }
                            c
                        })
                        .collect()
                })
            })
            .collect();

        let radius = |c: &DMatrix<f64>| {
            let mats: Vec<Vec<Vec<f64>>> = (0..p)
                .map(|lag| {
                    (0..k)
                        .map(|j| (0..k).map(|g| c[(j, lag * k + g)]).collect())
                        .collect()
                })
                .collect();
            crate::simulator::companion_spectral_radius(&mats)
        };
        let segments = coeff.len();
        for n in 0..n_subjects {
            let stable: Vec<bool> = (0..segments)
                .map(|s| {
                    coeff[s]
                        .as_ref()
                        .map(|per| radius(&per[n]) < GENERATOR_RADIUS_CAP)
                        .unwrap_or(false)
                })
                .collect();
            if stable.iter().all(|&b| b) || !stable.iter().any(|&b| b) {
                continue;
            }
            for s in 0..segments {
                if coeff[s].is_none() || stable[s] {
                    continue;
                }
                let donor = (0..segments)
                    .filter(|&d| stable[d])
                    .min_by_key(|&d| d.abs_diff(s))
                    .unwrap();
                let replacement = coeff[donor].as_ref().unwrap()[n].clone();
                coeff[s].as_mut().unwrap()[n] = replacement;
            }
        }

        FittedGenerator {
            coeff,
            p,
            k,
            reference: grid.config.reference.clone(),
            grid_lo: grid.grid.lo,
            grid_hi: grid.grid.hi,
            segments,
        }
    }

    #[inline]
    fn segment_of(&self, u: f64) -> usize {
        let width = (self.grid_hi - self.grid_lo) / self.segments as f64;
        let idx = ((u - self.grid_lo) / width).floor();
        if idx < 0.0 {
            0
        } else if idx >= self.segments as f64 {
            self.segments - 1
        } else {
            idx as usize
        }
    }

    /// Regenerate a panel from the fitted subject coefficients, resampling
    /// centered residuals within subject. The reference propagates through
    /// the regenerated series when channel-sourced.
    pub fn generate(
        &self,
        panel: &Panel,
        pools: &[DMatrix<f64>],
        rng: &mut ChaCha8Rng,
    ) -> Result<Panel> {
        let k = self.k;
        let t_len = panel.n_time();
        let start = match &self.reference {
            ReferenceSpec::Channel { lag, .. } => self.p.max(*lag),
            ReferenceSpec::Exogenous { .. } => self.p,
        };
        let mut series = Vec::with_capacity(panel.n_subjects());
        for n in 0..panel.n_subjects() {
            let pool = &pools[n];
            let mut y = vec![vec![0.0f64; t_len]; k];
            for (j, chan) in y.iter_mut().enumerate() {
                for t in 0..start {
                    chan[t] = panel.value(n, j, t);
                }
            }
            for t in start..t_len {
                let u = match &self.reference {
                    ReferenceSpec::Channel { channel, lag } => y[*channel][t - lag],
                    ReferenceSpec::Exogenous { series } => series[n][t],
                };
                let segment = self.segment_of(u);
                let per_subject = self.coeff[segment]
                    .as_ref()
                    .ok_or(Error::GridGap { segment })?;
                let coeff = &per_subject[n];
                let draw = rng.random_range(0..pool.ncols());
                for j in 0..k {
                    let mut acc = 0.0;
                    for lag in 0..self.p {
                        for g in 0..k {
                            acc += coeff[(j, lag * k + g)] * y[g][t - lag - 1];
                        }
                    }
                    let v = acc + pool[(j, draw)];
                    if !v.is_finite() || v.abs() > crate::simulator::BOUND {
                        return Err(Error::Unbounded {
                            subject: n,
                            t,
                            bound: crate::simulator::BOUND,
                        });
                    }
                    y[j][t] = v;
                }
            }
            series.push(y);
        }
        Panel::from_series(
            series,
            panel.group_labels().to_vec(),
            panel.subject_ids().to_vec(),
        )
    }
}
