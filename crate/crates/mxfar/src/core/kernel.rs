//! Kernel functions for local-linear weighting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothing kernel used to weight observations by reference-signal distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// `K(u) = 0.75 (1 - u^2)` on `[-1, 1]`, zero outside. Compact support
    /// keeps local designs small; the default.
    #[default]
    Epanechnikov,
    /// Standard normal density.
    Gaussian,
}

/// Evaluate the kernel at `u`.
pub fn kernel_value(kind: KernelKind, u: f64) -> f64 {
    match kind {
        KernelKind::Epanechnikov => {
            if u.abs() <= 1.0 {
                0.75 * (1.0 - u * u)
            } else {
                0.0
            }
        }
        KernelKind::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
    }
}

/// Bandwidth-scaled weight `K_h(u - u0) = h^{-1} K((u - u0)/h)`.
pub fn scaled_kernel_weight(kind: KernelKind, u: f64, u0: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidBandwidth(h));
    }
    Ok(kernel_value(kind, (u - u0) / h) / h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn epanechnikov_values() {
        assert_eq!(kernel_value(KernelKind::Epanechnikov, 0.0), 0.75);
        assert_eq!(kernel_value(KernelKind::Epanechnikov, 1.0), 0.0);
        assert_eq!(kernel_value(KernelKind::Epanechnikov, -1.5), 0.0);
    }

    #[test]
    fn gaussian_values() {
        assert_relative_eq!(
            kernel_value(KernelKind::Gaussian, 0.0),
            0.3989422804014327,
            epsilon = 1e-12
        );
    }

    #[test]
    fn scaled_weight_values() {
        let w = scaled_kernel_weight(KernelKind::Epanechnikov, 2.0, 2.0, 0.5).unwrap();
        assert_relative_eq!(w, 1.5, epsilon = 1e-12);
        let w = scaled_kernel_weight(KernelKind::Epanechnikov, 2.7, 2.0, 0.7).unwrap();
        assert_eq!(w, 0.0);
        let w = scaled_kernel_weight(KernelKind::Gaussian, 1.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(w, 0.24197072451914337, epsilon = 1e-12);
    }

    #[test]
    fn nonpositive_bandwidth_rejected() {
        assert!(scaled_kernel_weight(KernelKind::Gaussian, 0.0, 0.0, 0.0).is_err());
        assert!(scaled_kernel_weight(KernelKind::Gaussian, 0.0, 0.0, -1.0).is_err());
    }

    /// Simpson-rule quadrature, enough for the unit-mass check.
    fn integrate(kind: KernelKind, lo: f64, hi: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let step = (hi - lo) / n as f64;
        let mut acc = kernel_value(kind, lo) + kernel_value(kind, hi);
        for i in 1..n {
            let x = lo + step * i as f64;
            acc += kernel_value(kind, x) * if i % 2 == 0 { 2.0 } else { 4.0 };
        }
        acc * step / 3.0
    }

    #[test]
    fn kernels_integrate_to_one() {
        assert_relative_eq!(
            integrate(KernelKind::Epanechnikov, -1.0, 1.0, 10_000),
            1.0,
            epsilon = 1e-6
        );
        assert_relative_eq!(
            integrate(KernelKind::Gaussian, -10.0, 10.0, 10_000),
            1.0,
            epsilon = 1e-6
        );
    }

    proptest! {
        #[test]
        fn kernel_symmetric(u in -5.0f64..5.0) {
            for kind in [KernelKind::Epanechnikov, KernelKind::Gaussian] {
                prop_assert_eq!(kernel_value(kind, u), kernel_value(kind, -u));
            }
        }

        #[test]
        fn scaled_weight_nonnegative(u in -5.0f64..5.0, u0 in -5.0f64..5.0, h in 0.01f64..10.0) {
            for kind in [KernelKind::Epanechnikov, KernelKind::Gaussian] {
                let w = scaled_kernel_weight(kind, u, u0, h).unwrap();
                prop_assert!(w >= 0.0);
                let at_center = scaled_kernel_weight(kind, u0, u0, h).unwrap();
                prop_assert_eq!(at_center, kernel_value(kind, 0.0) / h);
            }
        }
    }
}
