//! Bootstrap significance of directed links.
//!
//! For each ordered channel pair the observed `|mean fPDC|` gets a bootstrap
//! confidence interval (refits of the fitted model) and a null threshold
//! from a link-null bootstrap: the panel is regenerated with that directed
//! link zeroed in the generator, refitted, and the `(1 - alpha)` quantile of
//! the resulting `|fPDC|` taken pointwise in `(omega, u0)`. A link is
//! significant at a reference level if its CI lower bound strictly exceeds
//! the threshold at some frequency.

use nalgebra::DMatrix;

use crate::core::config::quantile_sorted;
use crate::core::panel::Panel;
use crate::core::ModelConfig;
use crate::error::{Error, Result};
use crate::estimator::fit::{fit_mxfar, CoefficientGrid};
use crate::inference::bootstrap_refits;
use crate::logging::mx_warn;
use crate::rng::tag;
use crate::spectral::fpdc;

/// Per-edge significance output over `(group, target, source, omega, u0)`.
#[derive(Debug, Clone)]
pub struct EdgeSignificance {
    pub k: usize,
    pub n_groups: usize,
    pub omegas: Vec<f64>,
    pub u0: Vec<f64>,
    pub alpha_level: f64,
    /// Effective replicate count of the CI bootstrap.
    pub b: usize,
    pub modulus: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub threshold: Vec<f64>,
    /// `(group, target, source, u0)`-indexed flags.
    pub significant: Vec<bool>,
}

impl EdgeSignificance {
    #[inline]
    fn idx(&self, group: usize, target: usize, source: usize, w: usize, s: usize) -> usize {
        (((group * self.k + target) * self.k + source) * self.omegas.len() + w) * self.u0.len() + s
    }

    #[inline]
    fn flag_idx(&self, group: usize, target: usize, source: usize, s: usize) -> usize {
        ((group * self.k + target) * self.k + source) * self.u0.len() + s
    }

    pub fn modulus_at(
        &self,
        group: usize,
        target: usize,
        source: usize,
        w: usize,
        s: usize,
    ) -> f64 {
        self.modulus[self.idx(group, target, source, w, s)]
    }

    pub fn ci_at(
        &self,
        group: usize,
        target: usize,
        source: usize,
        w: usize,
        s: usize,
    ) -> (f64, f64) {
        let i = self.idx(group, target, source, w, s);
        (self.ci_lo[i], self.ci_hi[i])
    }

    pub fn threshold_at(
        &self,
        group: usize,
        target: usize,
        source: usize,
        w: usize,
        s: usize,
    ) -> f64 {
        self.threshold[self.idx(group, target, source, w, s)]
    }

    pub fn is_significant(&self, group: usize, target: usize, source: usize, s: usize) -> bool {
        self.significant[self.flag_idx(group, target, source, s)]
    }
}

/// `|fPDC|` of a coefficient grid's group means at the segments covering
/// the requested `u0` values; `None` where the segment is a gap.
fn group_moduli_at(
    grid: &CoefficientGrid,
    group: usize,
    omegas: &[f64],
    u0: &[f64],
) -> Vec<Option<DMatrix<f64>>> {
    // Outer: u0; inner matrix indexed (target, source) per omega flattened.
    u0.iter()
        .map(|&u| {
            let segment = grid.grid.segment_of(u);
            grid.fits[segment].as_ref().map(|fit| {
                let k = fit.alpha[group].nrows();
                let mut out = DMatrix::zeros(k * k, omegas.len());
                for (w, &omega) in omegas.iter().enumerate() {
                    let m = fpdc(&fit.alpha[group], grid.config.p, omega);
                    for j in 0..k {
                        for g in 0..k {
                            out[(j * k + g, w)] = m[(j, g)].norm();
                        }
                    }
                }
                out
            })
        })
        .collect()
}

/// Full edge-significance analysis of one panel.
pub fn edge_significance(
    panel: &Panel,
    config: &ModelConfig,
    boot_reps: usize,
    alpha_level: f64,
    omegas: &[f64],
    u0: &[f64],
    seed: u64,
) -> Result<EdgeSignificance> {
    if boot_reps == 0 {
        return Err(Error::InvalidConfig(
            "bootstrap replicate count must be positive".into(),
        ));
    }
    if !(0.0 < alpha_level && alpha_level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "significance level must lie in (0,1), got {alpha_level}"
        )));
    }
    if boot_reps == 1 {
        mx_warn!("bootstrap with a single replicate: bands and flags are unreliable");
    }
    let k = panel.n_channels();
    let n_groups = panel.n_groups();
    let n_w = omegas.len();
    let n_s = u0.len();
    let grid = fit_mxfar(panel, config)?;

    // Observed moduli.
    let mut modulus = vec![f64::NAN; n_groups * k * k * n_w * n_s];
    for g_idx in 0..n_groups {
        let observed = group_moduli_at(&grid, g_idx, omegas, u0);
        for (s, obs) in observed.iter().enumerate() {
            let obs = obs.as_ref().ok_or(Error::GridGap {
                segment: grid.grid.segment_of(u0[s]),
            })?;
            for j in 0..k {
                for g in 0..k {
                    for w in 0..n_w {
                        modulus[(((g_idx * k + j) * k + g) * n_w + w) * n_s + s] =
                            obs[(j * k + g, w)];
                    }
                }
            }
        }
    }

    // CI from refits of the fitted model.
    let refits = bootstrap_refits(panel, config, &grid, boot_reps, seed, tag::BANDS, None)?;
    let mut ci_lo = vec![f64::NAN; modulus.len()];
    let mut ci_hi = vec![f64::NAN; modulus.len()];
    let collect_moduli = |grids: &[CoefficientGrid], g_idx: usize| -> Vec<Vec<DMatrix<f64>>> {
        // Per replicate, per u0 (skipping replicate gaps).
        grids
            .iter()
            .map(|rf| {
                group_moduli_at(rf, g_idx, omegas, u0)
                    .into_iter()
                    .map(|o| o.unwrap_or_else(|| DMatrix::from_element(k * k, n_w, f64::NAN)))
                    .collect()
            })
            .collect()
    };
    for g_idx in 0..n_groups {
        let rep_moduli = collect_moduli(&refits, g_idx);
        for s in 0..n_s {
            for j in 0..k {
                for g in 0..k {
                    for w in 0..n_w {
                        let mut vals: Vec<f64> = rep_moduli
                            .iter()
                            .map(|per_u0| per_u0[s][(j * k + g, w)])
                            .filter(|v| v.is_finite())
                            .collect();
                        if vals.is_empty() {
                            continue;
                        }
                        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        let i = (((g_idx * k + j) * k + g) * n_w + w) * n_s + s;
                        ci_lo[i] = quantile_sorted(&vals, alpha_level / 2.0);
                        ci_hi[i] = quantile_sorted(&vals, 1.0 - alpha_level / 2.0);
                    }
                }
            }
        }
    }

    // Link-null thresholds, one bootstrap per ordered pair.
    let mut threshold = vec![f64::NAN; modulus.len()];
    for target in 0..k {
        for source in 0..k {
            let null_refits = bootstrap_refits(
                panel,
                config,
                &grid,
                boot_reps,
                seed,
                tag::EDGE_NULL,
                Some((target, source)),
            )?;
            for g_idx in 0..n_groups {
                let rep_moduli = collect_moduli(&null_refits, g_idx);
                for s in 0..n_s {
                    for w in 0..n_w {
                        let mut vals: Vec<f64> = rep_moduli
                            .iter()
                            .map(|per_u0| per_u0[s][(target * k + source, w)])
                            .filter(|v| v.is_finite())
                            .collect();
                        if vals.is_empty() {
                            continue;
                        }
                        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        let i = (((g_idx * k + target) * k + source) * n_w + w) * n_s + s;
                        threshold[i] = quantile_sorted(&vals, 1.0 - alpha_level);
                    }
                }
            }
        }
    }

    // A link is significant at u0 if the CI clears the threshold somewhere.
    let mut significant = vec![false; n_groups * k * k * n_s];
    for g_idx in 0..n_groups {
        for target in 0..k {
            for source in 0..k {
                for s in 0..n_s {
                    let mut hit = false;
                    for w in 0..n_w {
                        let i = (((g_idx * k + target) * k + source) * n_w + w) * n_s + s;
                        if ci_lo[i].is_finite()
                            && threshold[i].is_finite()
                            && ci_lo[i] > threshold[i]
                        {
                            hit = true;
                            break;
                        }
                    }
                    significant[((g_idx * k + target) * k + source) * n_s + s] = hit;
                }
            }
        }
    }

    Ok(EdgeSignificance {
        k,
        n_groups,
        omegas: omegas.to_vec(),
        u0: u0.to_vec(),
        alpha_level,
        b: refits.len(),
        modulus,
        ci_lo,
        ci_hi,
        threshold,
        significant,
    })
}
