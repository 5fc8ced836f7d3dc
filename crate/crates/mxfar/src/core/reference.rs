//! Reference-signal specification and extraction.
//!
//! The reference signal drives the coefficient functions. It is either a
//! lagged channel of the panel itself (`U_t = Y_{j*,t-d}`) or an exogenous
//! per-subject series supplied by the caller. Channel-sourced references must
//! lag by at least one step so coefficients depend on past values only.

use serde::{Deserialize, Serialize};

use crate::core::panel::Panel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReferenceSpec {
    /// `U_t = Y_{channel, t - lag}`; `channel` is 0-based, `lag >= 1`.
    Channel { channel: usize, lag: usize },
    /// Externally supplied series, one per subject, each of panel length.
    Exogenous { series: Vec<Vec<f64>> },
}

impl ReferenceSpec {
    pub fn channel(channel: usize, lag: usize) -> Self {
        ReferenceSpec::Channel { channel, lag }
    }

    /// Lag below which reference values are unusable.
    pub fn lag(&self) -> usize {
        match self {
            ReferenceSpec::Channel { lag, .. } => *lag,
            ReferenceSpec::Exogenous { .. } => 0,
        }
    }

    /// The same spec adapted to a panel truncated/windowed to `[start, start+len)`.
    pub(crate) fn rebased(&self, start: usize, len: usize) -> ReferenceSpec {
        match self {
            ReferenceSpec::Channel { .. } => self.clone(),
            ReferenceSpec::Exogenous { series } => ReferenceSpec::Exogenous {
                series: series
                    .iter()
                    .map(|s| s[start..(start + len).min(s.len())].to_vec())
                    .collect(),
            },
        }
    }
}

/// Extracted reference values, one series per subject.
///
/// Entries before `usable_from` are placeholders and must never enter a
/// weighted sum; downstream design assembly starts at
/// `max(p, usable_from)`.
#[derive(Debug, Clone)]
pub struct ReferenceSeries {
    pub values: Vec<Vec<f64>>,
    pub usable_from: usize,
}

impl ReferenceSeries {
    #[inline]
    pub fn value(&self, subject: usize, t: usize) -> f64 {
        debug_assert!(t >= self.usable_from);
        self.values[subject][t]
    }

    /// All usable values pooled across subjects.
    pub fn pooled(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.values {
            out.extend_from_slice(&s[self.usable_from..]);
        }
        out
    }
}

pub fn extract_reference(panel: &Panel, spec: &ReferenceSpec) -> Result<ReferenceSeries> {
    let t_len = panel.n_time();
    match spec {
        ReferenceSpec::Channel { channel, lag } => {
            if *channel >= panel.n_channels() {
                return Err(Error::InvalidReference(format!(
                    "reference channel index {channel} out of range (panel has {} channels)",
                    panel.n_channels()
                )));
            }
            if *lag == 0 {
                return Err(Error::InvalidReference(
                    "channel-sourced reference must lag by at least 1".into(),
                ));
            }
            if *lag >= t_len {
                return Err(Error::InvalidReference(format!(
                    "reference lag {lag} leaves no usable points (T = {t_len})"
                )));
            }
            let values = (0..panel.n_subjects())
                .map(|n| {
                    let src = panel.channel(n, *channel);
                    let mut u = vec![0.0; t_len];
                    for t in *lag..t_len {
                        u[t] = src[t - lag];
                    }
                    u
                })
                .collect();
            Ok(ReferenceSeries {
                values,
                usable_from: *lag,
            })
        }
        ReferenceSpec::Exogenous { series } => {
            if series.len() != panel.n_subjects() {
                return Err(Error::InvalidReference(format!(
                    "exogenous reference has {} series, panel has {} subjects",
                    series.len(),
                    panel.n_subjects()
                )));
            }
            for (n, s) in series.iter().enumerate() {
                if s.len() != t_len {
                    return Err(Error::InvalidReference(format!(
                        "exogenous series for subject {n} has length {}, expected {t_len}",
                        s.len()
                    )));
                }
                if let Some(bad) = s.iter().position(|v| !v.is_finite()) {
                    return Err(Error::InvalidReference(format!(
                        "exogenous series for subject {n} has non-finite value at t {bad}"
                    )));
                }
            }
            Ok(ReferenceSeries {
                values: series.clone(),
                usable_from: 0,
            })
        }
    }
}
