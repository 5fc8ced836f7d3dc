//! Network summaries across analysis windows.
//!
//! The panel is cut into non-overlapping time windows; each window gets its
//! own edge-significance analysis at the small/large reference regimes, and
//! the summary reports, per directed edge, the proportion of windows in
//! which it is significant.

use std::io::Write;
use std::path::Path;

use crate::core::config::quantile_sorted;
use crate::core::panel::Panel;
use crate::core::reference::extract_reference;
use crate::core::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::{substream, tag};
use crate::spectral::significance::{edge_significance, EdgeSignificance};

/// Pooled-quantile levels defining the "small" and "large" amplitude
/// regimes of the reference signal.
pub const REGIME_QUANTILES: (f64, f64) = (0.2, 0.8);

/// Proportion of windows with a significant directed link, per
/// `(group, regime, source, target)`. Self-edges are kept in the data but
/// left out of graph renderings.
#[derive(Debug, Clone)]
pub struct NetworkSummary {
    pub k: usize,
    pub n_groups: usize,
    pub regimes: Vec<String>,
    pub regime_u0: Vec<f64>,
    pub windows: usize,
    proportions: Vec<f64>,
}

impl NetworkSummary {
    #[inline]
    fn idx(&self, group: usize, regime: usize, source: usize, target: usize) -> usize {
        ((group * self.regimes.len() + regime) * self.k + source) * self.k + target
    }

    pub fn proportion(&self, group: usize, regime: usize, source: usize, target: usize) -> f64 {
        self.proportions[self.idx(group, regime, source, target)]
    }
}

/// Aggregate per-window edge flags into proportions.
pub fn network_summary(windows: &[EdgeSignificance]) -> Result<NetworkSummary> {
    let first = windows
        .first()
        .ok_or(Error::NoWindows { t: 0, window: 0 })?;
    let k = first.k;
    let n_groups = first.n_groups;
    let n_regimes = first.u0.len();
    let mut counts = vec![0usize; n_groups * n_regimes * k * k];
    for win in windows {
        for group in 0..n_groups {
            for target in 0..k {
                for source in 0..k {
                    for s in 0..n_regimes {
                        if win.is_significant(group, target, source, s) {
                            counts[((group * n_regimes + s) * k + source) * k + target] += 1;
                        }
                    }
                }
            }
        }
    }
    let w = windows.len() as f64;
    Ok(NetworkSummary {
        k,
        n_groups,
        regimes: (0..n_regimes)
            .map(|i| match i {
                0 => "small".into(),
                1 => "large".into(),
                other => format!("regime{other}"),
            })
            .collect(),
        regime_u0: first.u0.clone(),
        windows: windows.len(),
        proportions: counts.iter().map(|&c| c as f64 / w).collect(),
    })
}

/// The small/large regime representatives from the pooled reference values.
pub fn regime_u0_values(panel: &Panel, config: &ModelConfig) -> Result<Vec<f64>> {
    let reference = extract_reference(panel, &config.reference)?;
    let mut pooled = reference.pooled();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(vec![
        quantile_sorted(&pooled, REGIME_QUANTILES.0),
        quantile_sorted(&pooled, REGIME_QUANTILES.1),
    ])
}

/// Per-window edge analyses over non-overlapping windows of `window_len`.
pub fn windowed_edge_significance(
    panel: &Panel,
    config: &ModelConfig,
    boot_reps: usize,
    alpha_level: f64,
    omegas: &[f64],
    window_len: usize,
    seed: u64,
) -> Result<Vec<EdgeSignificance>> {
    let n_windows = panel.n_time() / window_len.max(1);
    if window_len == 0 || n_windows == 0 {
        return Err(Error::NoWindows {
            t: panel.n_time(),
            window: window_len,
        });
    }
    // Regimes come from the full panel so all windows share them.
    let regimes = regime_u0_values(panel, config)?;
    let mut out = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        let window = panel.time_window(w * window_len, window_len)?;
        let window_config = config.rebased(w * window_len, window_len);
        // Distinct stream per window, derived deterministically.
        let mut salt = substream(seed, tag::EDGE_NULL, w as u64);
        let window_seed = rand::RngCore::next_u64(&mut salt);
        out.push(edge_significance(
            &window,
            &window_config,
            boot_reps,
            alpha_level,
            omegas,
            &regimes,
            window_seed,
        )?);
    }
    Ok(out)
}

/// DOT rendering: one cluster per (group, regime); edge darkness scales
/// with the significance proportion. Self-edges are omitted.
pub fn write_dot(summary: &NetworkSummary, channel_names: &[String], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(out, "digraph mxfar_network {{").map_err(io_err)?;
    writeln!(out, "  rankdir=LR;").map_err(io_err)?;
    for group in 0..summary.n_groups {
        for (regime, regime_name) in summary.regimes.iter().enumerate() {
            writeln!(out, "  subgraph cluster_g{group}_{regime_name} {{").map_err(io_err)?;
            writeln!(
                out,
                "    label=\"group {group}, {regime_name} amplitude (u0 = {:.4})\";",
                summary.regime_u0[regime]
            )
            .map_err(io_err)?;
            for ch in 0..summary.k {
                writeln!(
                    out,
                    "    g{group}_{regime_name}_{ch} [label=\"{}\"];",
                    channel_names[ch]
                )
                .map_err(io_err)?;
            }
            for source in 0..summary.k {
                for target in 0..summary.k {
                    if source == target {
                        continue;
                    }
                    let prop = summary.proportion(group, regime, source, target);
                    if prop <= 0.0 {
                        continue;
                    }
                    let shade = (255.0 - 225.0 * prop) as u8;
                    writeln!(
                        out,
                        "    g{group}_{regime_name}_{source} -> g{group}_{regime_name}_{target} \
                         [label=\"{prop:.2}\", penwidth={:.2}, color=\"#{shade:02x}{shade:02x}{shade:02x}\"];",
                        0.5 + 3.0 * prop
                    )
                    .map_err(io_err)?;
                }
            }
            writeln!(out, "  }}").map_err(io_err)?;
        }
    }
    writeln!(out, "}}").map_err(io_err)?;
    Ok(())
}
