//! One-step prediction and residuals from a fitted grid.
//!
//! An observed reference value is mapped to its grid segment and the
//! representative coefficients of that segment are used; values outside the
//! grid range use the nearest end segment.

use nalgebra::{DMatrix, DVector};

use crate::core::panel::Panel;
use crate::core::reference::{extract_reference, ReferenceSeries};
use crate::error::{Error, Result};
use crate::estimator::fit::CoefficientGrid;

/// Precomputed per-(segment, subject) coefficient tables for fast repeated
/// prediction over a panel.
pub struct Predictor<'a> {
    grid: &'a CoefficientGrid,
    panel: &'a Panel,
    reference: ReferenceSeries,
    /// `coeff[segment][subject]`, `None` at grid gaps.
    coeff: Vec<Option<Vec<DMatrix<f64>>>>,
    start: usize,
}

impl<'a> Predictor<'a> {
    pub fn new(grid: &'a CoefficientGrid, panel: &'a Panel) -> Result<Self> {
        let reference = extract_reference(panel, &grid.config.reference)?;
        Self::with_reference(grid, panel, reference)
    }

    /// Variant taking a pre-extracted reference; used when the grid was
    /// fitted on a truncated panel but predictions run on the full one.
    pub fn with_reference(
        grid: &'a CoefficientGrid,
        panel: &'a Panel,
        reference: ReferenceSeries,
    ) -> Result<Self> {
        let coeff = grid
            .fits
            .iter()
            .map(|fit| {
                fit.as_ref().map(|f| {
                    (0..panel.n_subjects())
                        .map(|n| f.subject_coefficients(panel.group_of(n), n))
                        .collect()
                })
            })
            .collect();
        Ok(Predictor {
            grid,
            panel,
            reference,
            coeff,
            start: grid.config.burn_in(),
        })
    }

    /// First 0-based time index with a defined prediction.
    pub fn start(&self) -> usize {
        self.start
    }

    /// Predict the `k`-vector at time `t` for `subject` from actual lagged
    /// observations.
    pub fn one_step(&self, subject: usize, t: usize) -> Result<DVector<f64>> {
        if t < self.start || t >= self.panel.n_time() {
            return Err(Error::PredictionRange {
                t,
                lo: self.start,
                hi: self.panel.n_time(),
            });
        }
        let segment = self.grid.grid.segment_of(self.reference.value(subject, t));
        let per_subject = self.coeff[segment]
            .as_ref()
            .ok_or(Error::GridGap { segment })?;
        let coeff = &per_subject[subject];
        let k = self.panel.n_channels();
        let p = self.grid.config.p;
        let mut x = DVector::zeros(k * p);
        for lag in 0..p {
            for g in 0..k {
                x[lag * k + g] = self.panel.value(subject, g, t - lag - 1);
            }
        }
        Ok(coeff * x)
    }

    /// Residual matrices `k x (T - start)`, one per subject.
    pub fn residual_panel(&self) -> Result<ResidualPanel> {
        let k = self.panel.n_channels();
        let t_len = self.panel.n_time();
        let mut by_subject = Vec::with_capacity(self.panel.n_subjects());
        for n in 0..self.panel.n_subjects() {
            let mut r = DMatrix::zeros(k, t_len - self.start);
            for t in self.start..t_len {
                let pred = self.one_step(n, t)?;
                for j in 0..k {
                    r[(j, t - self.start)] = self.panel.value(n, j, t) - pred[j];
                }
            }
            by_subject.push(r);
        }
        Ok(ResidualPanel {
            start: self.start,
            by_subject,
        })
    }
}

/// Residuals for every subject over the usable time range.
#[derive(Debug, Clone)]
pub struct ResidualPanel {
    /// 0-based first predicted index; residual column `c` is time `start + c`.
    pub start: usize,
    pub by_subject: Vec<DMatrix<f64>>,
}

impl ResidualPanel {
    pub fn sum_of_squares(&self) -> f64 {
        self.by_subject.iter().map(|m| m.norm_squared()).sum()
    }
}

/// One-step prediction at `(subject, t)`; convenience wrapper that extracts
/// the reference on each call.
pub fn predict_one_step(
    grid: &CoefficientGrid,
    panel: &Panel,
    subject: usize,
    t: usize,
) -> Result<DVector<f64>> {
    Predictor::new(grid, panel)?.one_step(subject, t)
}

/// Residuals of the fitted model over the whole panel.
pub fn residuals(grid: &CoefficientGrid, panel: &Panel) -> Result<ResidualPanel> {
    Predictor::new(grid, panel)?.residual_panel()
}
