//! Fitted-model exports: coefficient CSVs plus a JSON sidecar with the
//! noise and variance-component estimates.

use std::io::Write;
use std::path::Path;

use serde_json::json;

use crate::core::panel::Panel;
use crate::error::{Error, Result};
use crate::estimator::fit::CoefficientGrid;

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(std::io::BufWriter::new(file))
}

/// `coefficients.csv`: one row per (channel, group, source channel, lag, u0).
/// Channel columns are 1-based to match the `ch_*` panel headers.
pub fn write_coefficients_csv(grid: &CoefficientGrid, panel: &Panel, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let k = panel.n_channels();
    let p = grid.config.p;
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(out, "channel,group,target_lag_channel,lag,u0,alpha,beta").map_err(io_err)?;
    for fit in grid.fits.iter().flatten() {
        for j in 0..k {
            for g_idx in 0..fit.alpha.len() {
                for lag in 0..p {
                    for src in 0..k {
                        let r = lag * k + src;
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{}",
                            j + 1,
                            g_idx,
                            src + 1,
                            lag + 1,
                            fit.u0,
                            fit.alpha[g_idx][(j, r)],
                            fit.beta[g_idx][(j, r)]
                        )
                        .map_err(io_err)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// `subject_effects.csv`: per-subject random intercepts and slopes.
pub fn write_subject_effects_csv(grid: &CoefficientGrid, panel: &Panel, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let k = panel.n_channels();
    let p = grid.config.p;
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    writeln!(out, "channel,subject_id,target_lag_channel,lag,u0,a,b").map_err(io_err)?;
    for fit in grid.fits.iter().flatten() {
        for j in 0..k {
            for n in 0..panel.n_subjects() {
                for lag in 0..p {
                    for src in 0..k {
                        let r = lag * k + src;
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{}",
                            j + 1,
                            panel.subject_ids()[n],
                            src + 1,
                            lag + 1,
                            fit.u0,
                            fit.a[n][(j, r)],
                            fit.b[n][(j, r)]
                        )
                        .map_err(io_err)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// `model.json`: configuration, grid, gaps, per-channel and pooled noise
/// variances, and the variance components behind the penalties.
pub fn write_model_json(grid: &CoefficientGrid, panel: &Panel, path: &Path) -> Result<()> {
    let k = panel.n_channels();
    let m = grid.grid.len();
    // sigma2_eps per (channel, grid point), plus grid means per channel and a
    // pooled scalar; the per-channel/pooled ambiguity is resolved by
    // exporting both.
    let per_point: Vec<Vec<Option<f64>>> = (0..k)
        .map(|j| {
            grid.fits
                .iter()
                .map(|f| f.as_ref().map(|f| f.sigma2_eps[j]))
                .collect()
        })
        .collect();
    let channel_mean: Vec<f64> = per_point
        .iter()
        .map(|col| {
            let vals: Vec<f64> = col.iter().flatten().copied().collect();
            vals.iter().sum::<f64>() / vals.len().max(1) as f64
        })
        .collect();
    let pooled = channel_mean.iter().sum::<f64>() / k as f64;
    let gaps: Vec<usize> = (0..m).filter(|&i| grid.fits[i].is_none()).collect();
    let value = json!({
        "config": &grid.config,
        "grid": { "lo": grid.grid.lo, "hi": grid.grid.hi, "points": &grid.grid.points },
        "gaps": gaps,
        "sigma2_eps": {
            "per_channel_grid": per_point,
            "per_channel_mean": channel_mean,
            "pooled": pooled,
        },
        "variance_components": {
            "sigma2_alpha": grid.variances.sigma2_alpha.iter()
                .map(|v| v.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
            "sigma2_beta": grid.variances.sigma2_beta.iter()
                .map(|v| v.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
        },
        "n_subjects": panel.n_subjects(),
        "n_channels": k,
        "n_groups": panel.n_groups(),
    });
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &value)?;
    out.write_all(b"\n")
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
