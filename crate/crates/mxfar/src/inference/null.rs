//! Constant-coefficient mixed-effects VAR: the null model of the
//! nonlinearity test.
//!
//! Same Henderson machinery as the full model, but with the intercept-only
//! basis, uniform weights, and penalties from the intercept variance
//! components alone.

use nalgebra::{DMatrix, DVector};

use crate::core::panel::Panel;
use crate::error::{Error, Result};
use crate::estimator::design::{build_const_design, LocalDesign};
use crate::estimator::henderson::{penalty_matrix, solve_henderson_block};
use crate::estimator::local_wls::guarded_solve;
use crate::estimator::variance::VARIANCE_FLOOR;

/// Fitted mixed-effects VAR: per-group mean coefficient matrices plus
/// per-subject deviations, each `k x kp`.
#[derive(Debug, Clone)]
pub struct NullModel {
    pub p: usize,
    pub group_mean: Vec<DMatrix<f64>>,
    pub subject_effect: Vec<DMatrix<f64>>,
    /// Mean squared residual per channel.
    pub sigma2_eps: Vec<f64>,
}

impl NullModel {
    /// `eta^(n) = group mean + subject effect`.
    pub fn subject_coefficients(&self, group: usize, subject: usize) -> DMatrix<f64> {
        &self.group_mean[group] + &self.subject_effect[subject]
    }

    /// One-step prediction from actual lagged observations.
    pub fn predict(
        &self,
        panel: &Panel,
        coeff: &DMatrix<f64>,
        subject: usize,
        t: usize,
    ) -> DVector<f64> {
        let k = panel.n_channels();
        let mut x = DVector::zeros(k * self.p);
        for lag in 0..self.p {
            for g in 0..k {
                x[lag * k + g] = panel.value(subject, g, t - lag - 1);
            }
        }
        coeff * x
    }

    /// Residuals `k x (T - start)` per subject, from time `start` on.
    pub fn residual_panel(&self, panel: &Panel, start: usize) -> Vec<DMatrix<f64>> {
        let k = panel.n_channels();
        let t_len = panel.n_time();
        (0..panel.n_subjects())
            .map(|n| {
                let coeff = self.subject_coefficients(panel.group_of(n), n);
                let mut r = DMatrix::zeros(k, t_len - start);
                for t in start..t_len {
                    let pred = self.predict(panel, &coeff, n, t);
                    for j in 0..k {
                        r[(j, t - start)] = panel.value(n, j, t) - pred[j];
                    }
                }
                r
            })
            .collect()
    }
}

/// Intercept variance components from independent per-subject VAR fits,
/// pooled within groups; the floor applies throughout and is the only
/// value available when `N = 1`.
fn null_variances(design: &LocalDesign, panel: &Panel, channel: usize) -> DVector<f64> {
    let m = design.m;
    if panel.n_subjects() < 2 {
        return DVector::from_element(m, VARIANCE_FLOOR);
    }
    let mut estimates: Vec<(usize, DVector<f64>)> = Vec::new();
    for sd in &design.subjects {
        let mut wrows = sd.rows.clone();
        for (i, mut row) in wrows.row_iter_mut().enumerate() {
            row *= sd.weights[i];
        }
        let s = sd.rows.transpose() * &wrows;
        let v = wrows.transpose() * sd.responses.column(channel);
        if let Ok(theta) = guarded_solve(&s, &v, design.u0) {
            estimates.push((sd.group, theta));
        }
    }
    let mut ss = DVector::<f64>::zeros(m);
    let mut dof = 0usize;
    let mut groups: Vec<usize> = estimates.iter().map(|(g, _)| *g).collect();
    groups.sort_unstable();
    groups.dedup();
    for g in groups {
        let members: Vec<&DVector<f64>> = estimates
            .iter()
            .filter(|(gg, _)| *gg == g)
            .map(|(_, v)| v)
            .collect();
        if members.len() < 2 {
            continue;
        }
        let mut mean = DVector::<f64>::zeros(m);
        for v in &members {
            mean += *v;
        }
        mean /= members.len() as f64;
        for v in &members {
            let d = *v - &mean;
            ss += d.component_mul(&d);
        }
        dof += members.len() - 1;
    }
    let mut out = if dof > 0 {
        ss / dof as f64
    } else {
        DVector::from_element(m, VARIANCE_FLOOR)
    };
    for v in out.iter_mut() {
        if *v < VARIANCE_FLOOR {
            *v = VARIANCE_FLOOR;
        }
    }
    out
}

/// Fit the mixed-effects VAR(p) null model.
pub fn fit_null_mevar(panel: &Panel, p: usize, penalty_scale: f64) -> Result<NullModel> {
    if p == 0 || panel.n_time() <= p {
        return Err(Error::InvalidConfig(format!(
            "VAR order {p} infeasible for panel length {}",
            panel.n_time()
        )));
    }
    let design = build_const_design(panel, p)?;
    design.check_effective_sample()?;
    let k = panel.n_channels();
    let kp = design.kp;
    let mut group_mean = vec![DMatrix::<f64>::zeros(k, kp); panel.n_groups()];
    let mut subject_effect = vec![DMatrix::<f64>::zeros(k, kp); panel.n_subjects()];
    let mut sigma2_eps = vec![0.0; k];
    for j in 0..k {
        let variances = null_variances(&design, panel, j);
        // Uniform weights make the realized max weight exactly 1.
        let penalty = penalty_matrix(&variances, None, penalty_scale, 1.0)?;
        let sol = solve_henderson_block(&design, j, &penalty)?;
        for g in 0..panel.n_groups() {
            group_mean[g]
                .row_mut(j)
                .copy_from(&sol.theta[g].transpose());
        }
        for n in 0..panel.n_subjects() {
            subject_effect[n]
                .row_mut(j)
                .copy_from(&sol.gamma[n].transpose());
        }
        let mut rss = 0.0;
        let mut count = 0usize;
        for (i, sd) in design.subjects.iter().enumerate() {
            let coeff = &sol.theta[sd.group] + &sol.gamma[i];
            let fitted = &sd.rows * &coeff;
            for r in 0..sd.rows.nrows() {
                let e = sd.responses[(r, j)] - fitted[r];
                rss += e * e;
                count += 1;
            }
        }
        sigma2_eps[j] = rss / count.max(1) as f64;
    }
    Ok(NullModel {
        p,
        group_mean,
        subject_effect,
        sigma2_eps,
    })
}
