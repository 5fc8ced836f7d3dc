//! Local design assembly.
//!
//! At a grid point `u0` the regressor row for subject `n`, time `t` is
//! `x_t = (Y_{g,t-l})` for `l = 1..p`, `g = 1..k` (lag-major), followed by
//! the same entries times `(U_t - u0)` for the local-linear basis. The
//! fixed-effect design places each subject's rows in its group's column
//! block; the random-effect design repeats the same rows per subject, so it
//! is never stored separately.

use nalgebra::{DMatrix, DVector};

use crate::core::kernel::{kernel_value, KernelKind};
use crate::core::panel::Panel;
use crate::core::reference::ReferenceSeries;
use crate::core::ModelConfig;
use crate::error::{Error, Result};

/// Rows, weights, and all-channel responses for one subject.
#[derive(Debug, Clone)]
pub struct SubjectDesign {
    pub subject: usize,
    pub group: usize,
    /// `r_n x m` regressor rows (zero-weight rows already dropped).
    pub rows: DMatrix<f64>,
    pub weights: DVector<f64>,
    /// `r_n x k`, responses for every channel.
    pub responses: DMatrix<f64>,
}

/// The stacked kernel-weighted design at one grid point, in block form.
#[derive(Debug, Clone)]
pub struct LocalDesign {
    pub u0: f64,
    /// Columns per coefficient block: `k*p` for the constant basis,
    /// `2*k*p` with local-linear slope columns.
    pub m: usize,
    pub kp: usize,
    pub n_groups: usize,
    pub subjects: Vec<SubjectDesign>,
    /// Largest kernel weight over all retained rows.
    pub max_weight: f64,
    /// Rows with positive weight, per group.
    pub nonzero_per_group: Vec<usize>,
}

impl LocalDesign {
    /// Enforce the effective-sample rule: every group needs at least `m`
    /// in-bandwidth rows to identify its coefficient block.
    pub fn check_effective_sample(&self) -> Result<()> {
        if self.max_weight <= 0.0 {
            return Err(Error::EmptyNeighborhood { u0: self.u0 });
        }
        for (g, &count) in self.nonzero_per_group.iter().enumerate() {
            if count < self.m {
                return Err(Error::InsufficientData {
                    u0: self.u0,
                    group: g,
                    got: count,
                    needed: self.m,
                });
            }
        }
        Ok(())
    }
}

/// Lag-major regressor index of `(lag l+1, channel g)`.
#[inline]
pub fn regressor_index(k: usize, lag: usize, channel: usize) -> usize {
    lag * k + channel
}

struct RowScheme<'a> {
    /// `Some` for the kernel-weighted local-linear basis, `None` for the
    /// uniform-weight intercept-only basis of the constant null model.
    local: Option<(&'a ReferenceSeries, KernelKind, f64, f64)>,
    p: usize,
}

fn subject_rows(
    panel: &Panel,
    scheme: &RowScheme<'_>,
    subject: usize,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, usize) {
    let k = panel.n_channels();
    let t_len = panel.n_time();
    let p = scheme.p;
    let kp = k * p;
    let m = if scheme.local.is_some() { 2 * kp } else { kp };
    let start = p.max(scheme.local.map_or(0, |(r, ..)| r.usable_from));
    let usable = t_len.saturating_sub(start);

    let mut rows = Vec::with_capacity(usable);
    for t in start..t_len {
        let w = match scheme.local {
            Some((reference, kernel, bandwidth, u0)) => {
                kernel_value(kernel, (reference.value(subject, t) - u0) / bandwidth) / bandwidth
            }
            None => 1.0,
        };
        if w <= 0.0 {
            continue;
        }
        rows.push((t, w));
    }
    let r_n = rows.len();
    let mut x = DMatrix::zeros(r_n, m);
    let mut weights = DVector::zeros(r_n);
    let mut responses = DMatrix::zeros(r_n, k);
    for (i, &(t, w)) in rows.iter().enumerate() {
        weights[i] = w;
        for lag in 0..p {
            for g in 0..k {
                x[(i, regressor_index(k, lag, g))] = panel.value(subject, g, t - lag - 1);
            }
        }
        if let Some((reference, _, _, u0)) = scheme.local {
            let du = reference.value(subject, t) - u0;
            for c in 0..kp {
                x[(i, kp + c)] = x[(i, c)] * du;
            }
        }
        for j in 0..k {
            responses[(i, j)] = panel.value(subject, j, t);
        }
    }
    (x, weights, responses, usable)
}

/// Assemble the kernel-weighted local-linear design at `u0`.
pub fn build_local_design(
    panel: &Panel,
    config: &ModelConfig,
    reference: &ReferenceSeries,
    u0: f64,
) -> Result<LocalDesign> {
    let scheme = RowScheme {
        local: Some((reference, config.kernel, config.bandwidth, u0)),
        p: config.p,
    };
    build_design_inner(panel, &scheme, u0)
}

/// Assemble the uniform-weight, intercept-only design used by the
/// constant-coefficient (VAR) null model.
pub fn build_const_design(panel: &Panel, p: usize) -> Result<LocalDesign> {
    build_design_inner(panel, &RowScheme { local: None, p }, 0.0)
}

fn build_design_inner(panel: &Panel, scheme: &RowScheme<'_>, u0: f64) -> Result<LocalDesign> {
    let k = panel.n_channels();
    let kp = k * scheme.p;
    let m = if scheme.local.is_some() { 2 * kp } else { kp };
    let mut subjects = Vec::with_capacity(panel.n_subjects());
    let mut max_weight: f64 = 0.0;
    let mut nonzero_per_group = vec![0usize; panel.n_groups()];
    let mut any_usable = 0usize;
    for n in 0..panel.n_subjects() {
        let (rows, weights, responses, usable) = subject_rows(panel, scheme, n);
        any_usable += usable;
        max_weight = max_weight.max(weights.iter().fold(0.0f64, |a, &w| a.max(w)));
        nonzero_per_group[panel.group_of(n)] += weights.len();
        subjects.push(SubjectDesign {
            subject: n,
            group: panel.group_of(n),
            rows,
            weights,
            responses,
        });
    }
    if any_usable == 0 {
        return Err(Error::EmptyDesign { u0 });
    }
    Ok(LocalDesign {
        u0,
        m,
        kp,
        n_groups: panel.n_groups(),
        subjects,
        max_weight,
        nonzero_per_group,
    })
}
