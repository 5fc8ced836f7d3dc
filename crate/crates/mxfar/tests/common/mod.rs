//! Shared helpers for the integration suites.

use mxfar::estimator::design::LocalDesign;
use nalgebra::{DMatrix, DVector};

/// Assemble and solve the full joint Henderson system with a dense LU
/// factorization, no jitter, no absorption. This is the independent oracle
/// the block solver is checked against.
pub fn dense_henderson_oracle(
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
    let sol = big.lu().solve(&rhs).expect("oracle system solvable");
    let theta = (0..design.n_groups)
        .map(|g| DVector::from_iterator(m, (0..m).map(|a| sol[g * m + a])))
        .collect();
    let gamma = (0..n)
        .map(|i| DVector::from_iterator(m, (0..m).map(|a| sol[g_cols + i * m + a])))
        .collect();
    (theta, gamma)
}

/// Max absolute difference between two coefficient vectors.
pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
