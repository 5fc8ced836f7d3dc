//! Estimator behavior against independent oracles and generators.

mod common;

use mxfar::core::{build_grid, extract_reference};
use mxfar::estimator::fit::fit_mxfar;
use mxfar::estimator::local_wls::fit_far_local;
use mxfar::estimator::predict::{residuals, Predictor};
use mxfar::estimator::variance::estimate_variance_components;
use mxfar::inference::null::fit_null_mevar;
use mxfar::simulator::{simulate, GeneratorSpec};
use mxfar::{ModelConfig, ReferenceSpec};
use rayon::prelude::*;

fn expar_config(h: f64) -> ModelConfig {
    ModelConfig::new(1, ReferenceSpec::channel(1, 2), h)
}

#[test]
fn expar_mean_curve_peaks_at_grid_center() {
    // The fitted cross coefficient must reach ~0.6 at u0 = 0 and decay
    // symmetrically away from it.
    let (panel, _) = simulate(&GeneratorSpec::expar(10, 500, 42)).unwrap();
    let grid = fit_mxfar(&panel, &expar_config(0.45)).unwrap();
    let center = grid.grid.segment_of(0.0);
    let peak = grid.fits[center].as_ref().unwrap().alpha[0][(0, 1)];
    assert!(
        (peak - 0.6).abs() < 0.1,
        "peak {peak} should be near 0.6 at u0 = {}",
        grid.grid.points[center]
    );
    // Decay: the coefficient at |u0| ~ 2 is well below the peak.
    let left = grid.grid.segment_of(-2.0);
    let right = grid.grid.segment_of(2.0);
    for s in [left, right] {
        let v = grid.fits[s].as_ref().unwrap().alpha[0][(0, 1)];
        assert!(v < peak - 0.2, "tail value {v} vs peak {peak}");
    }
    // Rough symmetry between the two tails.
    let lv = grid.fits[left].as_ref().unwrap().alpha[0][(0, 1)];
    let rv = grid.fits[right].as_ref().unwrap().alpha[0][(0, 1)];
    assert!((lv - rv).abs() < 0.15, "tails {lv} vs {rv}");
}

#[test]
fn constant_var_data_gives_flat_curves() {
    // Constant-coefficient VAR data: the fitted alpha must stay nearly flat
    // across the grid.
    let coeffs = vec![vec![vec![0.5, 0.2], vec![-0.1, 0.3]]];
    let spec = GeneratorSpec::linear_var(4, coeffs.clone(), 2000, 8);
    let (panel, _) = simulate(&spec).unwrap();
    let cfg = ModelConfig {
        grid_size: 20,
        ..ModelConfig::new(1, ReferenceSpec::channel(1, 2), 1.0)
    };
    let grid = fit_mxfar(&panel, &cfg).unwrap();
    let m = grid.grid.len();
    for j in 0..2 {
        for g in 0..2 {
            let vals: Vec<f64> = (m / 10..m - m / 10)
                .filter_map(|s| grid.fits[s].as_ref().map(|f| f.alpha[0][(j, g)]))
                .collect();
            let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
            let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
            assert!(
                hi - lo < 0.1,
                "coefficient ({j},{g}) range {:.4} too wide",
                hi - lo
            );
            // And close to the generator value.
            let mid = vals[vals.len() / 2];
            assert!((mid - coeffs[0][j][g]).abs() < 0.08);
        }
    }
}

#[test]
fn group_specific_fits_recover_opposite_signs() {
    // Two groups with sign-opposite generators: group alphas must mirror
    // where the true coefficient is large.
    let (panel, truth) = simulate(&GeneratorSpec::sigmoid_two_group(10, 500, 21403)).unwrap();
    let grid = fit_mxfar(&panel, &expar_config(0.5)).unwrap();
    let mut checked = 0;
    for (s, fit) in grid.fits.iter().enumerate() {
        let Some(fit) = fit else { continue };
        let u0 = grid.grid.points[s];
        let tru = truth.population_coeff(0, 0, 0, 0, u0).unwrap();
        if tru.abs() > 0.3 {
            let g1 = fit.alpha[0][(0, 0)];
            let g2 = fit.alpha[1][(0, 0)];
            assert!(
                g1 > 0.0 && g2 < 0.0,
                "expected opposite signs at u0 = {u0}: {g1} vs {g2}"
            );
            checked += 1;
        }
    }
    assert!(checked > 5, "too few qualifying grid points ({checked})");
}

#[test]
fn expar_one_step_prediction_beats_constant_var_baseline() {
    // Held-out one-step prediction: the functional-coefficient fit must beat
    // a constant-coefficient mixed VAR on average over subjects.
    let (panel, _) = simulate(&GeneratorSpec::expar(10, 500, 77)).unwrap();
    let fit_len = 400;
    let train = panel.truncated(fit_len).unwrap();
    let cfg = expar_config(0.45);
    let grid = fit_mxfar(&train, &cfg).unwrap();
    let null = fit_null_mevar(&train, 1, 1.0).unwrap();

    let predictor = Predictor::new(&grid, &panel).unwrap();
    let mut mse_mx = 0.0;
    let mut mse_var = 0.0;
    let mut count = 0.0;
    for n in 0..panel.n_subjects() {
        let eta = null.subject_coefficients(panel.group_of(n), n);
        for t in fit_len..panel.n_time() {
            let pred = predictor.one_step(n, t).unwrap();
            let var_pred = null.predict(&panel, &eta, n, t);
            for j in 0..panel.n_channels() {
                mse_mx += (panel.value(n, j, t) - pred[j]).powi(2);
                mse_var += (panel.value(n, j, t) - var_pred[j]).powi(2);
                count += 1.0;
            }
        }
    }
    mse_mx /= count;
    mse_var /= count;
    assert!(
        mse_mx < mse_var,
        "MX-FAR held-out MSE {mse_mx:.4} should beat VAR baseline {mse_var:.4}"
    );
}

#[test]
fn residual_variance_tracks_generator_noise() {
    let (panel, _) = simulate(&GeneratorSpec::expar(6, 2000, 77)).unwrap();
    let grid = fit_mxfar(&panel, &expar_config(0.4)).unwrap();
    let res = residuals(&grid, &panel).unwrap();
    let mut total = 0.0;
    let mut count = 0usize;
    for r in &res.by_subject {
        total += r.norm_squared();
        count += r.len();
    }
    let var = total / count as f64;
    assert!(
        (var - 1.0).abs() < 0.15,
        "residual variance {var} vs generator noise variance 1.0"
    );
}

#[test]
fn variance_components_calibrated_against_generator() {
    // Recovered sigma for the random-effect-bearing regressor stays within
    // a factor of 3 of the induced across-subject coefficient spread,
    // averaged over 20 Monte-Carlo replicates.
    let pairs: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|rep| {
            let (panel, truth) = simulate(&GeneratorSpec::expar(10, 500, 500 + rep)).unwrap();
            let cfg = expar_config(0.5);
            let reference = extract_reference(&panel, &cfg.reference).unwrap();
            let grid = build_grid(&panel, &cfg).unwrap();
            let (s2a, _) =
                estimate_variance_components(&panel, &cfg, &reference, &grid, 0).unwrap();
            let m = grid.points.len();
            let mut spread = 0.0;
            let mut count = 0;
            for (i, &u0) in grid.points.iter().enumerate() {
                if i % 5 != 0 || i < m / 10 || i >= m - m / 10 {
                    continue;
                }
                let vals: Vec<f64> = (0..panel.n_subjects())
                    .map(|n| truth.coeff(n, 0, 1, 0, u0).unwrap())
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var =
                    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
                spread += var.sqrt();
                count += 1;
            }
            (s2a[1].sqrt(), spread / count as f64)
        })
        .collect();
    let avg_ratio = pairs.iter().map(|(e, t)| e / t).sum::<f64>() / pairs.len() as f64;
    assert!(
        (1.0 / 3.0..=3.0).contains(&avg_ratio),
        "sigma calibration ratio {avg_ratio:.2} outside [1/3, 3]"
    );
}

#[test]
fn block_solver_satisfies_henderson_residual_everywhere() {
    // The residual invariant holds at every solved grid point of a real
    // fit. (Solution equality with the dense oracle is asserted on random
    // instances elsewhere: at floor-level penalties the theta/gamma split
    // is only identified up to the residual tolerance, so two exact solvers
    // can split differently while both satisfy the system.)
    use mxfar::estimator::design::build_local_design;
    use mxfar::estimator::henderson::{penalty_matrix, solve_henderson_block};

    let (panel, _) = simulate(&GeneratorSpec::expar(5, 300, 19)).unwrap();
    let cfg = expar_config(0.6);
    let reference = extract_reference(&panel, &cfg.reference).unwrap();
    let grid = build_grid(&panel, &cfg).unwrap();
    let (s2a, s2b) = estimate_variance_components(&panel, &cfg, &reference, &grid, 0).unwrap();
    let mut solved = 0;
    for &u0 in grid.points.iter().step_by(3) {
        let design = build_local_design(&panel, &cfg, &reference, u0).unwrap();
        if design.check_effective_sample().is_err() {
            continue;
        }
        let penalty = penalty_matrix(&s2a, Some(&s2b), 1.0, design.max_weight).unwrap();
        let sol = solve_henderson_block(&design, 0, &penalty).unwrap();
        assert!(
            sol.rel_residual <= 1e-8,
            "relative residual {} at u0 = {u0}",
            sol.rel_residual
        );
        solved += 1;
    }
    assert!(solved >= 10, "only {solved} grid points exercised");
}

#[test]
fn single_subject_far_fit_has_no_group_structure() {
    // N=1: fit_far_local is the reference implementation for the whole
    // single-subject path.
    let (panel, _) = simulate(&GeneratorSpec::expar(1, 600, 91)).unwrap();
    let cfg = expar_config(0.6);
    let (alpha, _beta) = fit_far_local(&panel, &cfg, 0, 0, 0.0).unwrap();
    assert!((alpha[1] - 0.6).abs() < 0.15, "peak estimate {}", alpha[1]);
}
