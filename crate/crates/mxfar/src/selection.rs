//! Accumulated-prediction-error model selection.
//!
//! A candidate `(h, p, reference)` is scored by refitting on `Q` truncated
//! subseries and accumulating squared one-step forecast errors over the `r`
//! points following each subseries; the bandwidth is rescaled as
//! `h * (T / T_q)^{1/5}` so shorter subseries smooth a little more.

use rayon::prelude::*;

use crate::core::panel::Panel;
use crate::core::reference::{extract_reference, ReferenceSpec};
use crate::core::ModelConfig;
use crate::error::{Error, Result};
use crate::estimator::fit::fit_mxfar;
use crate::estimator::predict::Predictor;
use crate::logging::mx_warn;

/// One point of the selection sweep.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub bandwidth: f64,
    pub p: usize,
    pub reference: ReferenceSpec,
}

/// Outcome of a selection sweep. `ape[i]` is infinite for candidates whose
/// refits failed; `best` always indexes a finite entry.
#[derive(Debug, Clone)]
pub struct ApeReport {
    pub candidates: Vec<Candidate>,
    pub ape: Vec<f64>,
    pub per_subseries: Vec<Vec<f64>>,
    pub best: usize,
    pub r: usize,
    pub q: usize,
}

/// The default evaluation-horizon length `r = floor(0.1 T)`.
pub fn default_horizon(n_time: usize) -> usize {
    (n_time / 10).max(1)
}

pub const DEFAULT_SUBSERIES: usize = 4;

/// Accumulated prediction error of one candidate: total and per-subseries.
pub fn ape_for_candidate(
    panel: &Panel,
    base: &ModelConfig,
    candidate: &Candidate,
    r: usize,
    q: usize,
) -> Result<(f64, Vec<f64>)> {
    let t_len = panel.n_time();
    if r == 0 || q == 0 || t_len <= r * q {
        return Err(Error::Subseries { t: t_len, r, q });
    }
    // Reference over the full panel, for forecasting past each truncation.
    let full_reference = extract_reference(panel, &candidate.reference)?;

    let mut per_subseries = Vec::with_capacity(q);
    for qi in 1..=q {
        let t_q = t_len - r * qi;
        let truncated = panel.truncated(t_q)?;
        let config = ModelConfig {
            p: candidate.p,
            reference: candidate.reference.rebased(0, t_q),
            bandwidth: candidate.bandwidth * (t_len as f64 / t_q as f64).powf(0.2),
            ..base.clone()
        };
        let grid = fit_mxfar(&truncated, &config)?;
        let predictor = Predictor::with_reference(&grid, panel, full_reference.clone())?;
        let mut sse = 0.0;
        for n in 0..panel.n_subjects() {
            for t in t_q..t_q + r {
                let pred = predictor.one_step(n, t)?;
                for j in 0..panel.n_channels() {
                    let e = panel.value(n, j, t) - pred[j];
                    sse += e * e;
                }
            }
        }
        per_subseries.push(sse);
    }
    Ok((per_subseries.iter().sum(), per_subseries))
}

/// Evaluate every candidate and pick the minimizer. Ties break toward
/// smaller `p`, then smaller `h`, then earlier candidate order.
pub fn select_model(
    panel: &Panel,
    base: &ModelConfig,
    candidates: Vec<Candidate>,
    r: usize,
    q: usize,
) -> Result<ApeReport> {
    if candidates.is_empty() {
        return Err(Error::SelectionFailed);
    }
    let evals: Vec<(f64, Vec<f64>)> = candidates
        .par_iter()
        .map(|cand| match ape_for_candidate(panel, base, cand, r, q) {
            Ok(v) => v,
            Err(e) => {
                mx_warn!("candidate (h={}, p={}) failed: {e}", cand.bandwidth, cand.p);
                (f64::INFINITY, vec![f64::INFINITY; q])
            }
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, (ape, _)) in evals.iter().enumerate() {
        if !ape.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some(j) => {
                let key_i = (*ape, candidates[i].p, candidates[i].bandwidth);
                let key_j = (evals[j].0, candidates[j].p, candidates[j].bandwidth);
                match key_i.0.total_cmp(&key_j.0) {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Greater => false,
                    std::cmp::Ordering::Equal => match key_i.1.cmp(&key_j.1) {
                        std::cmp::Ordering::Less => true,
                        std::cmp::Ordering::Greater => false,
                        std::cmp::Ordering::Equal => key_i.2.total_cmp(&key_j.2).is_lt(),
                    },
                }
            }
        };
        if better {
            best = Some(i);
        }
    }
    let best = best.ok_or(Error::SelectionFailed)?;
    let (ape, per_subseries) = evals.into_iter().unzip();
    Ok(ApeReport {
        candidates,
        ape,
        per_subseries,
        best,
        r,
        q,
    })
}

/// The Cartesian candidate set `h_grid x p_grid x references`, in that
/// nesting order.
pub fn cartesian_candidates(
    h_grid: &[f64],
    p_grid: &[usize],
    references: &[ReferenceSpec],
) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(h_grid.len() * p_grid.len() * references.len());
    for &h in h_grid {
        for &p in p_grid {
            for reference in references {
                out.push(Candidate {
                    bandwidth: h,
                    p,
                    reference: reference.clone(),
                });
            }
        }
    }
    out
}
