//! Functional partial directed coherence.
//!
//! Fitted coefficient functions are Fourier-transformed at each grid point
//! and column-normalized, yielding a directed, frequency-resolved dependence
//! measure conditional on the reference level.

pub mod network;
pub mod significance;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::estimator::fit::CoefficientGrid;

/// `n` equispaced frequencies strictly inside `(0, 0.5)` cycles/sample.
pub fn default_omega_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| 0.5 * i as f64 / (n + 1) as f64).collect()
}

/// Fourier transform of the coefficient functions at one grid point:
/// entry `(j, g)` is `delta_{jg} - sum_l f_{j,g:l}(u0) e^{-i 2 pi omega l}`.
///
/// `coeffs` is the `k x kp` lag-major coefficient matrix at `u0`.
pub fn bar_f(coeffs: &DMatrix<f64>, p: usize, omega: f64) -> DMatrix<Complex64> {
    let k = coeffs.nrows();
    let mut out = DMatrix::from_element(k, k, Complex64::new(0.0, 0.0));
    for j in 0..k {
        for g in 0..k {
            let mut acc = Complex64::new(if j == g { 1.0 } else { 0.0 }, 0.0);
            for lag in 0..p {
                let phase = -2.0 * std::f64::consts::PI * omega * (lag + 1) as f64;
                acc -= coeffs[(j, lag * k + g)] * Complex64::new(phase.cos(), phase.sin());
            }
            out[(j, g)] = acc;
        }
    }
    out
}

/// Column-normalized transform: entry `(j, g)` measures directed flow from
/// channel `g` to channel `j` at frequency `omega`. The squared moduli of
/// each column sum to one.
pub fn fpdc(coeffs: &DMatrix<f64>, p: usize, omega: f64) -> DMatrix<Complex64> {
    let mut f = bar_f(coeffs, p, omega);
    let k = f.nrows();
    for g in 0..k {
        let norm: f64 = (0..k).map(|j| f[(j, g)].norm_sqr()).sum::<f64>().sqrt();
        for j in 0..k {
            f[(j, g)] /= norm;
        }
    }
    f
}

/// `|fPDC|` surfaces over `(target, source, omega, u0)`.
#[derive(Debug, Clone)]
pub struct FpdcSurface {
    pub k: usize,
    pub omegas: Vec<f64>,
    pub u0: Vec<f64>,
    /// `false` where the underlying grid point is a gap.
    pub valid: Vec<bool>,
    values: Vec<Complex64>,
}

impl FpdcSurface {
    fn idx(&self, target: usize, source: usize, w: usize, s: usize) -> usize {
        ((target * self.k + source) * self.omegas.len() + w) * self.u0.len() + s
    }

    pub fn value(&self, target: usize, source: usize, w: usize, s: usize) -> Complex64 {
        self.values[self.idx(target, source, w, s)]
    }

    pub fn modulus(&self, target: usize, source: usize, w: usize, s: usize) -> f64 {
        self.value(target, source, w, s).norm()
    }

    /// Check the defining identities: moduli in `[0,1]` and unit column
    /// sums of squared moduli, at every valid point.
    pub fn validate(&self) -> Result<()> {
        for (s, ok) in self.valid.iter().enumerate() {
            if !ok {
                continue;
            }
            for w in 0..self.omegas.len() {
                for g in 0..self.k {
                    let mut col = 0.0;
                    for j in 0..self.k {
                        let m = self.modulus(j, g, w, s);
                        if !(0.0..=1.0 + 1e-12).contains(&m) {
                            return Err(Error::InvalidConfig(format!(
                                "fPDC modulus {m} outside [0,1] at (j={j}, g={g})"
                            )));
                        }
                        col += m * m;
                    }
                    if (col - 1.0).abs() > 1e-10 {
                        return Err(Error::InvalidConfig(format!(
                            "fPDC column {g} squared-modulus sum {col} != 1"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn surface_from_coeffs(
    coeffs_per_point: &[Option<DMatrix<f64>>],
    u0: &[f64],
    p: usize,
    k: usize,
    omegas: &[f64],
) -> FpdcSurface {
    let n_w = omegas.len();
    let n_s = u0.len();
    let mut values = vec![Complex64::new(f64::NAN, 0.0); k * k * n_w * n_s];
    let valid: Vec<bool> = coeffs_per_point.iter().map(|c| c.is_some()).collect();
    for (s, coeffs) in coeffs_per_point.iter().enumerate() {
        let Some(coeffs) = coeffs else { continue };
        for (w, &omega) in omegas.iter().enumerate() {
            let m = fpdc(coeffs, p, omega);
            for j in 0..k {
                for g in 0..k {
                    values[((j * k + g) * n_w + w) * n_s + s] = m[(j, g)];
                }
            }
        }
    }
    FpdcSurface {
        k,
        omegas: omegas.to_vec(),
        u0: u0.to_vec(),
        valid,
        values,
    }
}

/// Mean fPDC of a group: the transform of the group-mean coefficient
/// functions (not the average of subject-level surfaces).
pub fn mean_fpdc(grid: &CoefficientGrid, group: usize, omegas: &[f64]) -> Result<FpdcSurface> {
    let coeffs: Vec<Option<DMatrix<f64>>> = grid
        .fits
        .iter()
        .map(|f| f.as_ref().map(|f| f.alpha[group].clone()))
        .collect();
    let k = coeffs
        .iter()
        .flatten()
        .next()
        .map(|c| c.nrows())
        .ok_or(Error::GridGap { segment: 0 })?;
    let surface = surface_from_coeffs(&coeffs, &grid.grid.points, grid.config.p, k, omegas);
    surface.validate()?;
    Ok(surface)
}

/// Subject-level fPDC surface from `alpha[group(n)] + a[n]`.
pub fn subject_fpdc(
    grid: &CoefficientGrid,
    group: usize,
    subject: usize,
    omegas: &[f64],
) -> Result<FpdcSurface> {
    let coeffs: Vec<Option<DMatrix<f64>>> = grid
        .fits
        .iter()
        .map(|f| f.as_ref().map(|f| f.subject_coefficients(group, subject)))
        .collect();
    let k = coeffs
        .iter()
        .flatten()
        .next()
        .map(|c| c.nrows())
        .ok_or(Error::GridGap { segment: 0 })?;
    let surface = surface_from_coeffs(&coeffs, &grid.grid.points, grid.config.p, k, omegas);
    surface.validate()?;
    Ok(surface)
}

/// Textbook PDC of a constant-coefficient VAR, for direct comparisons.
pub fn var_pdc(coeffs: &[Vec<Vec<f64>>], omega: f64) -> DMatrix<Complex64> {
    let p = coeffs.len();
    let k = coeffs[0].len();
    let mut flat = DMatrix::zeros(k, k * p);
    for (lag, a) in coeffs.iter().enumerate() {
        for j in 0..k {
            for g in 0..k {
                flat[(j, lag * k + g)] = a[j][g];
            }
        }
    }
    fpdc(&flat, p, omega)
}

/// Helper for tests and diagnostics: the columnwise denormalization of a
/// computed fPDC matrix must reproduce the raw transform.
pub fn denormalize_check(coeffs: &DMatrix<f64>, p: usize, omega: f64) -> f64 {
    let raw = bar_f(coeffs, p, omega);
    let normed = fpdc(coeffs, p, omega);
    let k = raw.nrows();
    let mut worst: f64 = 0.0;
    for g in 0..k {
        let scale: f64 = (0..k).map(|j| raw[(j, g)].norm_sqr()).sum::<f64>().sqrt();
        for j in 0..k {
            worst = worst.max((normed[(j, g)] * scale - raw[(j, g)]).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_coefficients_give_identity() {
        let coeffs = DMatrix::zeros(3, 3);
        for omega in [0.1, 0.25, 0.4] {
            let f = bar_f(&coeffs, 1, omega);
            for j in 0..3 {
                for g in 0..3 {
                    let expect = if j == g { 1.0 } else { 0.0 };
                    assert_relative_eq!(f[(j, g)].re, expect);
                    assert_relative_eq!(f[(j, g)].im, 0.0);
                }
            }
        }
    }

    #[test]
    fn scalar_cases() {
        // k=1, p=1, f=0.5 at omega -> 0: 1 - 0.5 = 0.5.
        let coeffs = DMatrix::from_element(1, 1, 0.5);
        let f = bar_f(&coeffs, 1, 1e-12);
        assert_relative_eq!(f[(0, 0)].re, 0.5, epsilon = 1e-9);
        // omega = 0.25: 1 - 0.5 e^{-i pi/2} = 1 + 0.5 i.
        let f = bar_f(&coeffs, 1, 0.25);
        assert_relative_eq!(f[(0, 0)].re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(f[(0, 0)].im, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_coefficients_have_zero_cross_flow() {
        let mut coeffs = DMatrix::zeros(2, 2);
        coeffs[(0, 0)] = 0.4;
        coeffs[(1, 1)] = -0.3;
        for omega in default_omega_grid(8) {
            let m = fpdc(&coeffs, 1, omega);
            assert_eq!(m[(0, 1)].norm(), 0.0);
            assert_eq!(m[(1, 0)].norm(), 0.0);
            assert_relative_eq!(m[(0, 0)].norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn conjugate_symmetry_in_omega() {
        let coeffs = DMatrix::from_row_slice(2, 4, &[0.3, -0.2, 0.1, 0.4, 0.0, 0.25, -0.15, 0.2]);
        for omega in [0.05, 0.2, 0.45] {
            let plus = bar_f(&coeffs, 2, omega);
            let minus = bar_f(&coeffs, 2, -omega);
            for j in 0..2 {
                for g in 0..2 {
                    assert_relative_eq!(plus[(j, g)].re, minus[(j, g)].re, epsilon = 1e-12);
                    assert_relative_eq!(plus[(j, g)].im, -minus[(j, g)].im, epsilon = 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn columns_normalize_and_denormalize(
            vals in proptest::collection::vec(-0.9f64..0.9, 8),
            omega in 0.01f64..0.49,
        ) {
            let coeffs = DMatrix::from_row_slice(2, 4, &vals);
            let m = fpdc(&coeffs, 2, omega);
            for g in 0..2 {
                let col: f64 = (0..2).map(|j| m[(j, g)].norm_sqr()).sum();
                prop_assert!((col - 1.0).abs() < 1e-10);
                for j in 0..2 {
                    prop_assert!(m[(j, g)].norm() <= 1.0 + 1e-12);
                }
            }
            prop_assert!(denormalize_check(&coeffs, 2, omega) < 1e-12);
        }
    }
}
