//! Single-subject local-linear weighted least squares.
//!
//! This is the plain FAR estimator: no random effects, one subject. It also
//! serves as the pilot fit behind the variance-component estimates.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::core::panel::Panel;
use crate::core::reference::{extract_reference, ReferenceSeries};
use crate::core::ModelConfig;
use crate::error::{Error, Result};
use crate::estimator::design::build_local_design;
use crate::estimator::henderson::RIDGE_JITTER;

/// Cholesky with a pivot guard: pivots that the ridge jitter alone could
/// produce mean an unidentified direction, so the design is singular.
pub(crate) fn guarded_cholesky(s: &DMatrix<f64>, u0: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let m = s.nrows();
    let mut s_jit = s.clone();
    for i in 0..m {
        s_jit[(i, i)] += RIDGE_JITTER;
    }
    let chol = Cholesky::new(s_jit).ok_or(Error::SingularDesign { u0 })?;
    let l = chol.l_dirty();
    for i in 0..m {
        let pivot = l[(i, i)] * l[(i, i)];
        if pivot <= 10.0 * RIDGE_JITTER {
            return Err(Error::SingularDesign { u0 });
        }
    }
    Ok(chol)
}

/// Solve `S x = v` through the jittered factorization, then refine against
/// the unjittered system so the jitter does not bias small-weight designs.
pub(crate) fn guarded_solve(s: &DMatrix<f64>, v: &DVector<f64>, u0: f64) -> Result<DVector<f64>> {
    let chol = guarded_cholesky(s, u0)?;
    let mut x = chol.solve(v);
    let rhs_norm = v.norm();
    if rhs_norm == 0.0 {
        return Ok(x);
    }
    let mut res = v - s * &x;
    let mut res_norm = res.norm();
    for _ in 0..20 {
        if res_norm <= 1e-13 * rhs_norm {
            break;
        }
        let dx = chol.solve(&res);
        let next = &x + &dx;
        let next_res = v - s * &next;
        if next_res.norm() >= res_norm * 0.999 {
            break;
        }
        x = next;
        res = next_res;
        res_norm = res.norm();
    }
    Ok(x)
}

/// Local-linear WLS for one subject and channel at `u0`.
///
/// Returns `(alpha, beta)`, each of length `k*p`; `alpha[r]` is the
/// estimated coefficient function value at `u0` for regressor `r`.
pub fn fit_far_local(
    panel: &Panel,
    config: &ModelConfig,
    subject: usize,
    channel: usize,
    u0: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let reference = extract_reference(panel, &config.reference)?;
    fit_far_local_with_ref(panel, config, &reference, subject, channel, u0)
}

pub(crate) fn fit_far_local_with_ref(
    panel: &Panel,
    config: &ModelConfig,
    reference: &ReferenceSeries,
    subject: usize,
    channel: usize,
    u0: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let design = build_local_design(panel, config, reference, u0)?;
    wls_for_subject(&design.subjects[subject], design.m, design.kp, channel, u0)
}

/// Plain WLS on one subject's rows of an already-built design.
pub(crate) fn wls_for_subject(
    sd: &crate::estimator::design::SubjectDesign,
    m: usize,
    kp: usize,
    channel: usize,
    u0: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (alpha, beta, _) = wls_for_subject_with_se(sd, m, kp, channel, u0)?;
    Ok((alpha, beta))
}

/// WLS plus the sandwich standard errors of the estimates, used to strip
/// estimation noise out of the across-subject variance components.
pub(crate) fn wls_for_subject_with_se(
    sd: &crate::estimator::design::SubjectDesign,
    m: usize,
    kp: usize,
    channel: usize,
    u0: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    if sd.weights.len() < m {
        return Err(Error::InsufficientData {
            u0,
            group: sd.group,
            got: sd.weights.len(),
            needed: m,
        });
    }
    let mut wrows = sd.rows.clone();
    let mut w2rows = sd.rows.clone();
    for (i, (mut row, mut row2)) in wrows.row_iter_mut().zip(w2rows.row_iter_mut()).enumerate() {
        row *= sd.weights[i];
        row2 *= sd.weights[i] * sd.weights[i];
    }
    let s = sd.rows.transpose() * &wrows;
    let v = wrows.transpose() * sd.responses.column(channel);
    let theta = guarded_solve(&s, &v, u0)?;

    // Weighted mean squared residual of this subject's fit.
    let fitted = &sd.rows * &theta;
    let mut rss = 0.0;
    let mut wsum = 0.0;
    for i in 0..sd.rows.nrows() {
        let e = sd.responses[(i, channel)] - fitted[i];
        rss += sd.weights[i] * e * e;
        wsum += sd.weights[i];
    }
    let sigma2 = if wsum > 0.0 { rss / wsum } else { 0.0 };

    // Sandwich variance (X'WX)^-1 X'W^2X (X'WX)^-1 sigma^2, diagonal only.
    let chol = guarded_cholesky(&s, u0)?;
    let k2 = sd.rows.transpose() * &w2rows;
    let a = chol.solve(&k2);
    let sandwich = chol.solve(&a.transpose()).transpose();
    let se2 = DVector::from_iterator(m, (0..m).map(|i| sandwich[(i, i)] * sigma2));

    let alpha = DVector::from_iterator(kp, (0..kp).map(|i| theta[i]));
    let beta = DVector::from_iterator(kp, (0..kp).map(|i| theta[kp + i]));
    Ok((alpha, beta, se2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::reference::ReferenceSpec;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn matches_normal_equations_oracle_on_hand_sized_system() {
        // k=1, p=1, T=4, wide bandwidth so all weights are equal.
        let y = vec![1.0, 2.0, 1.5, 3.0];
        let panel = Panel::from_series(vec![vec![y.clone()]], vec![0], vec!["a".into()]).unwrap();
        let cfg = ModelConfig::new(1, ReferenceSpec::channel(0, 1), 1e6);
        let (alpha, beta) = fit_far_local(&panel, &cfg, 0, 0, 1.5).unwrap();

        // Independent dense solve of the 2x2 normal equations.
        let mut xtx = [[0.0f64; 2]; 2];
        let mut xty = [0.0f64; 2];
        let w = crate::core::kernel::kernel_value(crate::core::KernelKind::Epanechnikov, 0.0) / 1e6;
        for t in 1..4 {
            let x0 = y[t - 1];
            let x1 = y[t - 1] * (y[t - 1] - 1.5);
            xtx[0][0] += w * x0 * x0;
            xtx[0][1] += w * x0 * x1;
            xtx[1][0] += w * x1 * x0;
            xtx[1][1] += w * x1 * x1;
            xty[0] += w * x0 * y[t];
            xty[1] += w * x1 * y[t];
        }
        let det = xtx[0][0] * xtx[1][1] - xtx[0][1] * xtx[1][0];
        let a = (xty[0] * xtx[1][1] - xty[1] * xtx[0][1]) / det;
        let b = (xtx[0][0] * xty[1] - xtx[1][0] * xty[0]) / det;
        assert_relative_eq!(alpha[0], a, epsilon = 1e-6);
        assert_relative_eq!(beta[0], b, epsilon = 1e-6);
    }

    #[test]
    fn recovers_constant_ar1_coefficient() {
        // AR(1) with phi = 0.5; with a huge bandwidth the local fit at any
        // u0 must agree with the plain least-squares AR(1) estimate.
        let mut rng = crate::rng::substream(42, 7, 0);
        let t_len = 2000;
        let mut y = vec![0.0f64; t_len];
        for t in 1..t_len {
            let e: f64 = rng.sample(StandardNormal);
            y[t] = 0.5 * y[t - 1] + e;
        }
        let panel = Panel::from_series(vec![vec![y.clone()]], vec![0], vec!["a".into()]).unwrap();
        let range =
            y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min);
        let cfg = ModelConfig::new(1, ReferenceSpec::channel(0, 1), 2.0 * range);
        let (alpha, _) = fit_far_local(&panel, &cfg, 0, 0, 0.0).unwrap();

        let (mut num, mut den) = (0.0, 0.0);
        for t in 1..t_len {
            num += y[t - 1] * y[t];
            den += y[t - 1] * y[t - 1];
        }
        let ols = num / den;
        assert!(
            (alpha[0] - ols).abs() < 0.05,
            "local fit {} vs OLS {}",
            alpha[0],
            ols
        );
    }

    #[test]
    fn zero_series_is_singular() {
        let panel =
            Panel::from_series(vec![vec![vec![0.0; 50]]], vec![0], vec!["a".into()]).unwrap();
        let cfg = ModelConfig::new(1, ReferenceSpec::channel(0, 1), 10.0);
        assert!(matches!(
            fit_far_local(&panel, &cfg, 0, 0, 0.0),
            Err(Error::SingularDesign { .. })
        ));
    }

    #[test]
    fn too_few_in_bandwidth_rows() {
        let mut rng = crate::rng::substream(1, 7, 0);
        let y: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let panel = Panel::from_series(vec![vec![y]], vec![0], vec!["a".into()]).unwrap();
        let cfg = ModelConfig::new(1, ReferenceSpec::channel(0, 1), 0.01);
        assert!(matches!(
            fit_far_local(&panel, &cfg, 0, 0, 50.0),
            Err(Error::InsufficientData { .. })
        ));
    }
}
