//! The MX-FAR fit: variance components once per channel, then one Henderson
//! solve per (channel, grid point).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::core::config::build_grid_from_reference;
use crate::core::panel::Panel;
use crate::core::reference::{extract_reference, ReferenceSeries};
use crate::core::{Grid, ModelConfig};
use crate::error::{Error, Result};
use crate::estimator::design::{build_local_design, LocalDesign};
use crate::estimator::henderson::{penalty_matrix, solve_henderson_block};
use crate::estimator::variance::{estimate_variance_components, VarianceComponents};
use crate::logging::mx_debug;

/// Maximum tolerated fraction of grid points that fail to fit.
pub const MAX_GAP_FRACTION: f64 = 0.2;

/// All coefficients estimated at one grid point.
///
/// `alpha[g]` / `beta[g]` are `k x kp` fixed-effect matrices for group `g`;
/// row `j` holds the intercepts/slopes of channel `j`'s coefficient
/// functions. `a[n]` / `b[n]` are the per-subject random-effect analogues.
/// The subject-specific coefficient is exactly `alpha[group(n)] + a[n]`.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub u0: f64,
    pub alpha: Vec<DMatrix<f64>>,
    pub beta: Vec<DMatrix<f64>>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    /// Kernel-weighted mean squared residual per channel.
    pub sigma2_eps: Vec<f64>,
}

impl LocalFit {
    /// `alpha[group(n)] + a[n]`, the coefficient matrix used for predictions.
    pub fn subject_coefficients(&self, group: usize, subject: usize) -> DMatrix<f64> {
        &self.alpha[group] + &self.a[subject]
    }
}

/// The fitted model: one `LocalFit` per grid segment (gaps allowed up to
/// `MAX_GAP_FRACTION`), plus the variance components behind the penalties.
#[derive(Debug, Clone)]
pub struct CoefficientGrid {
    pub config: ModelConfig,
    pub grid: Grid,
    pub fits: Vec<Option<LocalFit>>,
    pub variances: VarianceComponents,
}

impl CoefficientGrid {
    pub fn gaps(&self) -> usize {
        self.fits.iter().filter(|f| f.is_none()).count()
    }

    pub fn fit_at(&self, segment: usize) -> Result<&LocalFit> {
        self.fits
            .get(segment)
            .and_then(|f| f.as_ref())
            .ok_or(Error::GridGap { segment })
    }

    /// Fit covering the reference value `u` (end segments absorb
    /// out-of-range values).
    pub fn fit_for_value(&self, u: f64) -> Result<&LocalFit> {
        self.fit_at(self.grid.segment_of(u))
    }
}

/// Coefficients for a single channel at one grid point.
#[derive(Debug, Clone)]
pub struct ChannelLocalFit {
    /// Per group, length `kp`.
    pub alpha: Vec<DVector<f64>>,
    pub beta: Vec<DVector<f64>>,
    /// Per subject, length `kp`.
    pub a: Vec<DVector<f64>>,
    pub b: Vec<DVector<f64>>,
    pub sigma2_eps: f64,
}

/// Solve one channel of an assembled design.
fn solve_channel(
    design: &LocalDesign,
    channel: usize,
    sigma2_alpha: &DVector<f64>,
    sigma2_beta: &DVector<f64>,
    lambda: f64,
) -> Result<ChannelLocalFit> {
    design.check_effective_sample()?;
    let penalty = penalty_matrix(sigma2_alpha, Some(sigma2_beta), lambda, design.max_weight)?;
    let sol = solve_henderson_block(design, channel, &penalty)?;
    let kp = design.kp;

    // Weighted mean squared residual.
    let mut rss = 0.0;
    let mut wsum = 0.0;
    for (i, sd) in design.subjects.iter().enumerate() {
        let coeff = &sol.theta[sd.group] + &sol.gamma[i];
        let fitted = &sd.rows * &coeff;
        for r in 0..sd.rows.nrows() {
            let resid = sd.responses[(r, channel)] - fitted[r];
            rss += sd.weights[r] * resid * resid;
            wsum += sd.weights[r];
        }
    }

    let split = |v: &DVector<f64>| {
        (
            DVector::from_iterator(kp, (0..kp).map(|i| v[i])),
            DVector::from_iterator(kp, (0..kp).map(|i| v[kp + i])),
        )
    };
    let (alpha, beta) = sol.theta.iter().map(split).unzip();
    let (a, b) = sol.gamma.iter().map(split).unzip();
    Ok(ChannelLocalFit {
        alpha,
        beta,
        a,
        b,
        sigma2_eps: if wsum > 0.0 { rss / wsum } else { 0.0 },
    })
}

/// Fit one channel at one grid point with caller-supplied variance
/// components for that channel.
pub fn fit_mxfar_channel(
    panel: &Panel,
    config: &ModelConfig,
    channel: usize,
    u0: f64,
    sigma2_alpha: &DVector<f64>,
    sigma2_beta: &DVector<f64>,
) -> Result<ChannelLocalFit> {
    let reference = extract_reference(panel, &config.reference)?;
    let design = build_local_design(panel, config, &reference, u0)?;
    solve_channel(
        &design,
        channel,
        sigma2_alpha,
        sigma2_beta,
        config.penalty_scale,
    )
}

fn fit_point(
    panel: &Panel,
    config: &ModelConfig,
    reference: &ReferenceSeries,
    variances: &VarianceComponents,
    u0: f64,
) -> Result<LocalFit> {
    let k = panel.n_channels();
    let kp = k * config.p;
    let design = build_local_design(panel, config, reference, u0)?;
    let mut alpha = vec![DMatrix::<f64>::zeros(k, kp); panel.n_groups()];
    let mut beta = vec![DMatrix::<f64>::zeros(k, kp); panel.n_groups()];
    let mut a = vec![DMatrix::<f64>::zeros(k, kp); panel.n_subjects()];
    let mut b = vec![DMatrix::<f64>::zeros(k, kp); panel.n_subjects()];
    let mut sigma2_eps = vec![0.0; k];
    for j in 0..k {
        let ch = solve_channel(
            &design,
            j,
            &variances.sigma2_alpha[j],
            &variances.sigma2_beta[j],
            config.penalty_scale,
        )?;
        for g in 0..panel.n_groups() {
            alpha[g].row_mut(j).copy_from(&ch.alpha[g].transpose());
            beta[g].row_mut(j).copy_from(&ch.beta[g].transpose());
        }
        for n in 0..panel.n_subjects() {
            a[n].row_mut(j).copy_from(&ch.a[n].transpose());
            b[n].row_mut(j).copy_from(&ch.b[n].transpose());
        }
        sigma2_eps[j] = ch.sigma2_eps;
    }
    Ok(LocalFit {
        u0,
        alpha,
        beta,
        a,
        b,
        sigma2_eps,
    })
}

/// Fit the full MX-FAR model over the discretized reference support.
pub fn fit_mxfar(panel: &Panel, config: &ModelConfig) -> Result<CoefficientGrid> {
    config.validate(panel)?;
    let reference = extract_reference(panel, &config.reference)?;
    fit_mxfar_with_ref(panel, config, &reference)
}

fn fit_mxfar_with_ref(
    panel: &Panel,
    config: &ModelConfig,
    reference: &ReferenceSeries,
) -> Result<CoefficientGrid> {
    let grid = build_grid_from_reference(reference, config)?;
    let k = panel.n_channels();

    let per_channel: Vec<Result<(DVector<f64>, DVector<f64>)>> = (0..k)
        .into_par_iter()
        .map(|j| estimate_variance_components(panel, config, reference, &grid, j))
        .collect();
    let mut sigma2_alpha = Vec::with_capacity(k);
    let mut sigma2_beta = Vec::with_capacity(k);
    for r in per_channel {
        let (a, b) = r?;
        sigma2_alpha.push(a);
        sigma2_beta.push(b);
    }
    let variances = VarianceComponents {
        sigma2_alpha,
        sigma2_beta,
    };

    let fits: Vec<Option<LocalFit>> = grid
        .points
        .par_iter()
        .map(
            |&u0| match fit_point(panel, config, reference, &variances, u0) {
                Ok(f) => Some(f),
                Err(e) => {
                    mx_debug!("grid point u0 = {u0} skipped: {e}");
                    None
                }
            },
        )
        .collect();

    let gaps = fits.iter().filter(|f| f.is_none()).count();
    if (gaps as f64) > MAX_GAP_FRACTION * grid.len() as f64 {
        return Err(Error::FitFailure {
            gaps,
            total: grid.len(),
        });
    }
    Ok(CoefficientGrid {
        config: config.clone(),
        grid,
        fits,
        variances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::reference::ReferenceSpec;
    use crate::estimator::local_wls::fit_far_local;
    use crate::simulator::{simulate, GeneratorSpec};
    use nalgebra::DVector;

    #[test]
    fn single_subject_huge_penalty_matches_plain_wls() {
        let (panel, _) = simulate(&GeneratorSpec::expar(1, 400, 5)).unwrap();
        let cfg = ModelConfig::new(1, ReferenceSpec::channel(1, 2), 0.8);
        let u0 = 0.2;
        // Penalty entries of 1e12 pin the random effects at zero, so the
        // fixed effect must reproduce the single-subject local fit.
        let huge = DVector::from_element(2, 1e12);
        let ch = fit_mxfar_channel(&panel, &cfg, 0, u0, &huge, &huge).unwrap();
        let (alpha, beta) = fit_far_local(&panel, &cfg, 0, 0, u0).unwrap();
        for r in 0..2 {
            assert!(
                (ch.alpha[0][r] - alpha[r]).abs() < 1e-6,
                "alpha[{r}]: {} vs {}",
                ch.alpha[0][r],
                alpha[r]
            );
            assert!((ch.beta[0][r] - beta[r]).abs() < 1e-6);
            assert!(ch.a[0][r].abs() < 1e-6);
        }
    }

    #[test]
    fn two_subject_fit_matches_dense_penalized_solve() {
        // The channel fit must agree with the naive joint minimizer of the
        // penalized weighted least squares objective.
        use crate::core::reference::extract_reference;
        use crate::estimator::design::build_local_design;
        use crate::estimator::henderson::penalty_matrix;
        use nalgebra::DMatrix;

        let (panel, _) = simulate(&GeneratorSpec::expar(2, 120, 11)).unwrap();
        let cfg = ModelConfig::new(1, ReferenceSpec::channel(1, 2), 1.0);
        let u0 = 0.0;
        let s2a = DVector::from_element(2, 0.05);
        let s2b = DVector::from_element(2, 0.02);
        let ch = fit_mxfar_channel(&panel, &cfg, 1, u0, &s2a, &s2b).unwrap();

        let reference = extract_reference(&panel, &cfg.reference).unwrap();
        let design = build_local_design(&panel, &cfg, &reference, u0).unwrap();
        let penalty = penalty_matrix(&s2a, Some(&s2b), 1.0, design.max_weight).unwrap();
        let m = design.m;
        let n = design.subjects.len();
        let dim = m + n * m;
        let mut big = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for (i, sd) in design.subjects.iter().enumerate() {
            let mut wrows = sd.rows.clone();
            for (r, mut row) in wrows.row_iter_mut().enumerate() {
                row *= sd.weights[r];
            }
            let s = sd.rows.transpose() * &wrows;
            let v = wrows.transpose() * sd.responses.column(1);
            let zb = m + i * m;
            for a in 0..m {
                for b in 0..m {
                    big[(a, b)] += s[(a, b)];
                    big[(a, zb + b)] += s[(a, b)];
                    big[(zb + a, b)] += s[(a, b)];
                    big[(zb + a, zb + b)] += s[(a, b)];
                }
                rhs[a] += v[a];
                rhs[zb + a] += v[a];
            }
            for a in 0..m {
                big[(zb + a, zb + a)] += penalty[a];
            }
        }
        let sol = big.lu().solve(&rhs).unwrap();
        for r in 0..2 {
            assert!((ch.alpha[0][r] - sol[r]).abs() < 1e-7);
            assert!((ch.beta[0][r] - sol[2 + r]).abs() < 1e-7);
            for subj in 0..2 {
                assert!((ch.a[subj][r] - sol[m + subj * m + r]).abs() < 1e-7);
                assert!((ch.b[subj][r] - sol[m + subj * m + 2 + r]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn tiny_grid_has_expected_shape() {
        let (panel, _) = simulate(&GeneratorSpec::expar(3, 300, 2)).unwrap();
        let cfg = ModelConfig {
            grid_size: 2,
            ..ModelConfig::new(1, ReferenceSpec::channel(1, 2), 1.5)
        };
        let grid = fit_mxfar(&panel, &cfg).unwrap();
        assert_eq!(grid.grid.len(), 2);
        assert_eq!(grid.fits.len(), 2);
        let fit = grid.fits[0].as_ref().unwrap();
        assert_eq!(fit.alpha.len(), 1);
        assert_eq!(fit.alpha[0].nrows(), 2);
        assert_eq!(fit.alpha[0].ncols(), 2);
        assert_eq!(fit.a.len(), 3);
        assert_eq!(fit.sigma2_eps.len(), 2);
        // Subject coefficients reconstruct bit-exactly.
        for n in 0..3 {
            let direct = &fit.alpha[0] + &fit.a[n];
            let via = fit.subject_coefficients(0, n);
            assert_eq!(direct, via);
        }
    }
}
