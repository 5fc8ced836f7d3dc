//! Variance components via pilot per-subject fits.
//!
//! At a thinned subset of grid points each subject is fitted independently;
//! the across-subject spread of those independent estimates, pooled within
//! groups and averaged over pilot points, estimates the random-effect
//! variances. Because the per-subject estimates carry their own sampling
//! noise, the mean squared standard error of the pilot fits is subtracted
//! from the raw spread (a moment-matching correction); without it the
//! components only measure estimation noise whenever the true
//! between-subject spread is small. Entries are floored at
//! `VARIANCE_FLOOR` so the penalty never degenerates to zero.

use nalgebra::DVector;

use crate::core::panel::Panel;
use crate::core::reference::ReferenceSeries;
use crate::core::{Grid, ModelConfig};
use crate::error::{Error, Result};
use crate::estimator::design::build_local_design;
use crate::estimator::local_wls::wls_for_subject_with_se;

pub const VARIANCE_FLOOR: f64 = 1e-8;
/// Every `PILOT_STRIDE`-th grid point is a pilot point.
pub const PILOT_STRIDE: usize = 5;

/// Random-effect variances for every channel; `sigma2_alpha[j][r]` is the
/// intercept variance for channel `j`, regressor `r`, `sigma2_beta` the
/// slope analogue.
#[derive(Debug, Clone)]
pub struct VarianceComponents {
    pub sigma2_alpha: Vec<DVector<f64>>,
    pub sigma2_beta: Vec<DVector<f64>>,
}

/// Pooled within-group sample variance per coordinate.
///
/// With a single group this is the plain across-subject sample variance.
/// With several, subject estimates are centered on their own group mean so
/// the fixed group separation does not contaminate the random-effect scale.
fn pooled_variance(estimates: &[(usize, DVector<f64>)], kp: usize) -> Option<DVector<f64>> {
    let groups: Vec<usize> = {
        let mut g: Vec<usize> = estimates.iter().map(|(g, _)| *g).collect();
        g.sort_unstable();
        g.dedup();
        g
    };
    let mut ss = DVector::<f64>::zeros(kp);
    let mut dof = 0usize;
    for g in groups {
        let members: Vec<&DVector<f64>> = estimates
            .iter()
            .filter(|(gg, _)| *gg == g)
            .map(|(_, v)| v)
            .collect();
        if members.len() < 2 {
            continue;
        }
        let mut mean = DVector::<f64>::zeros(kp);
        for m in &members {
            mean += *m;
        }
        mean /= members.len() as f64;
        for m in &members {
            let d = *m - &mean;
            ss += d.component_mul(&d);
        }
        dof += members.len() - 1;
    }
    if dof == 0 {
        return None;
    }
    Some(ss / dof as f64)
}

/// Estimate `(sigma2_alpha, sigma2_beta)` for one channel.
pub fn estimate_variance_components(
    panel: &Panel,
    config: &ModelConfig,
    reference: &ReferenceSeries,
    grid: &Grid,
    channel: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if panel.n_subjects() < 2 {
        return Err(Error::VarianceUndefined(panel.n_subjects()));
    }
    let kp = panel.n_channels() * config.p;
    let mut acc_alpha = DVector::<f64>::zeros(kp);
    let mut acc_beta = DVector::<f64>::zeros(kp);
    let mut total_mass = 0.0;
    let mut last_err: Option<Error> = None;

    // Pilot points stay inside the central 80% of the grid: at the support
    // edges the per-subject fits are too ragged for the noise correction to
    // hold. Tiny grids fall back to the full range.
    let m_grid = grid.points.len();
    let (lo_idx, hi_idx) = if m_grid >= 10 {
        (m_grid / 10, m_grid - m_grid / 10)
    } else {
        (0, m_grid)
    };

    for (idx, &u0) in grid.points.iter().enumerate() {
        if idx % PILOT_STRIDE != 0 || idx < lo_idx || idx >= hi_idx {
            continue;
        }
        let design = match build_local_design(panel, config, reference, u0) {
            Ok(d) => d,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let mut alphas: Vec<(usize, DVector<f64>)> = Vec::new();
        let mut betas: Vec<(usize, DVector<f64>)> = Vec::new();
        let mut se2_alpha = DVector::<f64>::zeros(kp);
        let mut se2_beta = DVector::<f64>::zeros(kp);
        for sd in &design.subjects {
            match wls_for_subject_with_se(sd, design.m, design.kp, channel, u0) {
                Ok((a, b, se2)) => {
                    alphas.push((sd.group, a));
                    betas.push((sd.group, b));
                    for r in 0..kp {
                        se2_alpha[r] += se2[r];
                        se2_beta[r] += se2[kp + r];
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        if let (Some(va), Some(vb)) = (pooled_variance(&alphas, kp), pooled_variance(&betas, kp)) {
            // Strip the mean estimation variance out of the raw spread and
            // weight the point by its in-bandwidth kernel mass. The signed
            // corrections are pooled across pilot points and clamped once at
            // the end; clamping per point would rectify noise upward.
            let n_ok = alphas.len() as f64;
            let mass: f64 = design
                .subjects
                .iter()
                .map(|sd| sd.weights.iter().sum::<f64>())
                .sum();
            for r in 0..kp {
                acc_alpha[r] += mass * (va[r] - se2_alpha[r] / n_ok);
                acc_beta[r] += mass * (vb[r] - se2_beta[r] / n_ok);
            }
            total_mass += mass;
        }
    }

    if total_mass <= 0.0 {
        return Err(last_err.unwrap_or(Error::InsufficientData {
            u0: f64::NAN,
            group: 0,
            got: 0,
            needed: 2,
        }));
    }
    let mut sigma2_alpha = acc_alpha / total_mass;
    let mut sigma2_beta = acc_beta / total_mass;
    for v in sigma2_alpha.iter_mut().chain(sigma2_beta.iter_mut()) {
        if *v < VARIANCE_FLOOR {
            *v = VARIANCE_FLOOR;
        }
    }
    Ok((sigma2_alpha, sigma2_beta))
}
