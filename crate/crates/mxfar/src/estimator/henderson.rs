//! Penalized mixed-model solver.
//!
//! The joint system couples group fixed effects `theta` with per-subject
//! random effects `gamma`:
//!
//! ```text
//! | X'WX   X'WZ        | |theta|   |X'WY|
//! | Z'WX   Z'WZ + Ginv | |gamma| = |Z'WY|
//! ```
//!
//! Because the random-effect design is block diagonal over subjects and each
//! subject's fixed-effect columns live in a single group block, the system
//! never has to be materialized: absorbing each subject's `m x m` block via
//! its own Cholesky factor reduces the fixed part to one `m x m` solve per
//! group. The absorbed solution is polished by iterative refinement against
//! the unjittered system until the relative residual is below 1e-8.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::estimator::design::LocalDesign;

/// Absolute ridge added to every normal-matrix diagonal before factorization.
pub const RIDGE_JITTER: f64 = 1e-8;
/// Relative residual the solver must reach on the unjittered system.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Refinement polishes well past the required tolerance while progress lasts,
/// so the block solution agrees with a direct joint solve to ~1e-12.
const REFINE_TARGET: f64 = 1e-13;
const MAX_REFINE: usize = 60;

/// Diagonal random-effect penalty, ordered like the design columns: the
/// `k*p` intercept entries first, then (for the local-linear basis) the
/// `k*p` slope entries.
///
/// Entry for regressor `l` is `lambda * sigma2 / max_weight`, the variance
/// scaled by the tuning parameter and the largest realized kernel weight.
pub fn penalty_matrix(
    sigma2_alpha: &DVector<f64>,
    sigma2_beta: Option<&DVector<f64>>,
    lambda: f64,
    max_weight: f64,
) -> Result<DVector<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "penalty scale must be positive, got {lambda}"
        )));
    }
    if !(max_weight > 0.0) {
        return Err(Error::EmptyNeighborhood { u0: f64::NAN });
    }
    let kp = sigma2_alpha.len();
    let m = if sigma2_beta.is_some() { 2 * kp } else { kp };
    let mut diag = DVector::zeros(m);
    for i in 0..kp {
        diag[i] = lambda * sigma2_alpha[i] / max_weight;
    }
    if let Some(beta) = sigma2_beta {
        for i in 0..kp {
            diag[kp + i] = lambda * beta[i] / max_weight;
        }
    }
    Ok(diag)
}

/// Solution of the mixed-model system for one channel.
#[derive(Debug, Clone)]
pub struct HendersonSolution {
    /// Fixed effects, one length-`m` vector per group.
    pub theta: Vec<DVector<f64>>,
    /// Random-effect predictions, one length-`m` vector per subject.
    pub gamma: Vec<DVector<f64>>,
    /// Final relative residual of the unjittered system.
    pub rel_residual: f64,
}

struct SubjectBlocks {
    group: usize,
    /// `X'WX` restricted to this subject.
    s: DMatrix<f64>,
    /// `X'WY_j` restricted to this subject.
    v: DVector<f64>,
    /// Cholesky of `s + penalty + jitter`.
    chol: Cholesky<f64, Dyn>,
    /// Unjittered `s + penalty`, for residual evaluation.
    d: DMatrix<f64>,
}

/// Solve the Henderson system for channel `channel` of the given design.
pub fn solve_henderson_block(
    design: &LocalDesign,
    channel: usize,
    penalty: &DVector<f64>,
) -> Result<HendersonSolution> {
    let m = design.m;
    assert_eq!(penalty.len(), m, "penalty length must match design columns");
    let n_groups = design.n_groups;

    let mut blocks = Vec::with_capacity(design.subjects.len());
    for sd in &design.subjects {
        let wrows = {
            let mut w = sd.rows.clone();
            for (i, mut row) in w.row_iter_mut().enumerate() {
                row *= sd.weights[i];
            }
            w
        };
        let s = sd.rows.transpose() * &wrows;
        let v = wrows.transpose() * sd.responses.column(channel);
        let mut d = s.clone();
        for i in 0..m {
            d[(i, i)] += penalty[i];
        }
        let mut d_jit = d.clone();
        for i in 0..m {
            d_jit[(i, i)] += RIDGE_JITTER;
        }
        let chol = Cholesky::new(d_jit).ok_or_else(|| Error::SingularSystem {
            u0: design.u0,
            block: format!("random-effect block of subject {}", sd.subject),
        })?;
        blocks.push(SubjectBlocks {
            group: sd.group,
            s,
            v,
            chol,
            d,
        });
    }

    // Absorb the subject blocks into per-group fixed-effect systems.
    let mut f_group = vec![DMatrix::<f64>::zeros(m, m); n_groups];
    let mut rhs_group = vec![DVector::<f64>::zeros(m); n_groups];
    let mut c_group = vec![DVector::<f64>::zeros(m); n_groups];
    for b in &blocks {
        let dinv_s = b.chol.solve(&b.s);
        let dinv_v = b.chol.solve(&b.v);
        f_group[b.group] += &b.s - &b.s * dinv_s;
        rhs_group[b.group] += &b.v - &b.s * dinv_v;
        c_group[b.group] += &b.v;
    }
    let mut f_chol = Vec::with_capacity(n_groups);
    for (g, f) in f_group.iter().enumerate() {
        let mut f_jit = f.clone();
        for i in 0..m {
            f_jit[(i, i)] += RIDGE_JITTER;
        }
        let chol = Cholesky::new(f_jit).ok_or_else(|| Error::SingularSystem {
            u0: design.u0,
            block: format!("absorbed fixed block of group {g}"),
        })?;
        f_chol.push(chol);
    }

    let mut theta: Vec<DVector<f64>> = (0..n_groups)
        .map(|g| f_chol[g].solve(&rhs_group[g]))
        .collect();
    let mut gamma: Vec<DVector<f64>> = blocks
        .iter()
        .map(|b| b.chol.solve(&(&b.v - &b.s * &theta[b.group])))
        .collect();

    // Residual of the *unjittered* system, refined with the jittered factors.
    let rhs_norm2: f64 = c_group.iter().map(|c| c.norm_squared()).sum::<f64>()
        + blocks.iter().map(|b| b.v.norm_squared()).sum::<f64>();
    let rhs_norm = rhs_norm2.sqrt();

    let residuals = |theta: &[DVector<f64>], gamma: &[DVector<f64>]| {
        let mut r1: Vec<DVector<f64>> = c_group.clone();
        let mut r2: Vec<DVector<f64>> = Vec::with_capacity(blocks.len());
        for (i, b) in blocks.iter().enumerate() {
            r1[b.group] -= &b.s * &theta[b.group] + &b.s * &gamma[i];
            r2.push(&b.v - &b.s * &theta[b.group] - &b.d * &gamma[i]);
        }
        let norm2: f64 = r1.iter().map(|r| r.norm_squared()).sum::<f64>()
            + r2.iter().map(|r| r.norm_squared()).sum::<f64>();
        (r1, r2, norm2.sqrt())
    };

    let (mut r1, mut r2, mut res_norm) = residuals(&theta, &gamma);
    let mut iter = 0;
    while res_norm > REFINE_TARGET * rhs_norm && rhs_norm > 0.0 && iter < MAX_REFINE {
        // Apply the jittered inverse to the residual via the same absorption.
        let u_blocks: Vec<DVector<f64>> = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| b.chol.solve(&r2[i]))
            .collect();
        let mut rhs_g: Vec<DVector<f64>> = r1.clone();
        for (i, b) in blocks.iter().enumerate() {
            rhs_g[b.group] -= &b.s * &u_blocks[i];
        }
        let dtheta: Vec<DVector<f64>> = (0..n_groups).map(|g| f_chol[g].solve(&rhs_g[g])).collect();
        for (i, b) in blocks.iter().enumerate() {
            let dgamma = &u_blocks[i] - b.chol.solve(&(&b.s * &dtheta[b.group]));
            gamma[i] += dgamma;
        }
        for g in 0..n_groups {
            theta[g] += &dtheta[g];
        }
        let next = residuals(&theta, &gamma);
        if next.2 >= res_norm * 0.999 {
            // Stalled; keep whichever iterate is better and stop refining.
            if next.2 < res_norm {
                r1 = next.0;
                r2 = next.1;
                res_norm = next.2;
            }
            break;
        }
        r1 = next.0;
        r2 = next.1;
        res_norm = next.2;
        iter += 1;
    }
    let _ = (r1, r2);

    let rel = if rhs_norm > 0.0 {
        res_norm / rhs_norm
    } else {
        0.0
    };
    if rel > RESIDUAL_TOL {
        return Err(Error::SingularSystem {
            u0: design.u0,
            block: format!("refinement stalled at relative residual {rel:.3e}"),
        });
    }
    Ok(HendersonSolution {
        theta,
        gamma,
        rel_residual: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::design::SubjectDesign;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    /// Assemble and LU-solve the full joint system, no jitter. Independent of
    /// the block-absorption path.
    pub(crate) fn naive_dense_solve(
        design: &LocalDesign,
        channel: usize,
        penalty: &DVector<f64>,
    ) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let m = design.m;
        let n = design.subjects.len();
        let g_cols = design.n_groups * m;
        let dim = g_cols + n * m;
        let mut big = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for (i, sd) in design.subjects.iter().enumerate() {
            let mut wrows = sd.rows.clone();
            for (r, mut row) in wrows.row_iter_mut().enumerate() {
                row *= sd.weights[r];
            }
            let s = sd.rows.transpose() * &wrows;
            let v = wrows.transpose() * sd.responses.column(channel);
            let gb = sd.group * m;
            let zb = g_cols + i * m;
            for a in 0..m {
                for b in 0..m {
                    big[(gb + a, gb + b)] += s[(a, b)];
                    big[(gb + a, zb + b)] += s[(a, b)];
                    big[(zb + a, gb + b)] += s[(a, b)];
                    big[(zb + a, zb + b)] += s[(a, b)];
                }
                rhs[gb + a] += v[a];
                rhs[zb + a] += v[a];
            }
            for a in 0..m {
                big[(zb + a, zb + a)] += penalty[a];
            }
        }
        let sol = big.lu().solve(&rhs).expect("dense joint system solvable");
        let theta = (0..design.n_groups)
            .map(|g| DVector::from_iterator(m, (0..m).map(|a| sol[g * m + a])))
            .collect();
        let gamma = (0..n)
            .map(|i| DVector::from_iterator(m, (0..m).map(|a| sol[g_cols + i * m + a])))
            .collect();
        (theta, gamma)
    }

    fn random_design(
        seed: u64,
        n_subjects: usize,
        n_groups: usize,
        m: usize,
        rows_per_subject: usize,
    ) -> LocalDesign {
        use rand::Rng;
        let mut rng = crate::rng::substream(seed, 99, 0);
        let subjects: Vec<SubjectDesign> = (0..n_subjects)
            .map(|n| {
                let rows =
                    DMatrix::from_fn(rows_per_subject, m, |_, _| rng.random_range(-1.0..1.0));
                let weights =
                    DVector::from_fn(rows_per_subject, |_, _| rng.random_range(0.05..1.5));
                let responses =
                    DMatrix::from_fn(rows_per_subject, 1, |_, _| rng.random_range(-2.0..2.0));
                SubjectDesign {
                    subject: n,
                    group: n % n_groups,
                    rows,
                    weights,
                    responses,
                }
            })
            .collect();
        LocalDesign {
            u0: 0.0,
            m,
            kp: m / 2,
            n_groups,
            subjects,
            max_weight: 1.5,
            nonzero_per_group: vec![rows_per_subject * n_subjects; n_groups],
        }
    }

    #[test]
    fn penalty_matrix_formula() {
        let s2a = DVector::from_vec(vec![0.04]);
        let s2b = DVector::from_vec(vec![0.09]);
        let p = penalty_matrix(&s2a, Some(&s2b), 1.0, 1.5).unwrap();
        assert_relative_eq!(p[0], 0.0266666666666666, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.06, epsilon = 1e-12);
        // Zero variance gives a zero entry; callers floor variances upstream.
        let p = penalty_matrix(&DVector::zeros(1), None, 2.0, 0.5).unwrap();
        assert_eq!(p[0], 0.0);
        assert!(penalty_matrix(&s2a, None, 0.0, 1.0).is_err());
        assert!(penalty_matrix(&s2a, None, 1.0, 0.0).is_err());
    }

    #[test]
    fn block_solution_matches_dense_joint_solve() {
        for seed in 0..5u64 {
            let design = random_design(seed, 4, 2, 4, 30);
            let penalty = DVector::from_element(4, 0.3 + seed as f64 * 0.1);
            let sol = solve_henderson_block(&design, 0, &penalty).unwrap();
            let (theta_o, gamma_o) = naive_dense_solve(&design, 0, &penalty);
            for g in 0..2 {
                for a in 0..4 {
                    assert_relative_eq!(sol.theta[g][a], theta_o[g][a], epsilon = 1e-8);
                }
            }
            for n in 0..4 {
                for a in 0..4 {
                    assert_relative_eq!(sol.gamma[n][a], gamma_o[n][a], epsilon = 1e-8);
                }
            }
            assert!(sol.rel_residual <= RESIDUAL_TOL);
        }
    }

    #[test]
    fn huge_penalty_forces_random_effects_to_zero() {
        let design = random_design(11, 5, 1, 4, 40);
        let penalty = DVector::from_element(4, 1e12);
        let sol = solve_henderson_block(&design, 0, &penalty).unwrap();
        for g in &sol.gamma {
            assert!(g.amax() < 1e-4, "gamma should vanish, got {}", g.amax());
        }
        // theta equals the pooled weighted least-squares solution.
        let mut s = DMatrix::<f64>::zeros(4, 4);
        let mut v = DVector::<f64>::zeros(4);
        for sd in &design.subjects {
            let mut wrows = sd.rows.clone();
            for (r, mut row) in wrows.row_iter_mut().enumerate() {
                row *= sd.weights[r];
            }
            s += sd.rows.transpose() * &wrows;
            v += wrows.transpose() * sd.responses.column(0);
        }
        let pooled = s.lu().solve(&v).unwrap();
        for a in 0..4 {
            assert_relative_eq!(sol.theta[0][a], pooled[a], epsilon = 1e-4);
        }
    }

    #[test]
    fn identity_design_returns_responses() {
        // X = I, W = I, random effects pinned at zero by an enormous penalty.
        let m = 3;
        let rows = DMatrix::<f64>::identity(m, m);
        let responses = DMatrix::from_column_slice(m, 1, &[1.5, -0.25, 4.0]);
        let design = LocalDesign {
            u0: 0.0,
            m,
            kp: m,
            n_groups: 1,
            subjects: vec![SubjectDesign {
                subject: 0,
                group: 0,
                rows,
                weights: DVector::from_element(m, 1.0),
                responses: responses.clone(),
            }],
            max_weight: 1.0,
            nonzero_per_group: vec![m],
        };
        let penalty = DVector::from_element(m, 1e12);
        let sol = solve_henderson_block(&design, 0, &penalty).unwrap();
        for a in 0..m {
            assert_relative_eq!(sol.theta[0][a], responses[(a, 0)], epsilon = 1e-9);
        }
    }
}
