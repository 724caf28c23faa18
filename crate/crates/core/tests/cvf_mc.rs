//! Monte Carlo checks of the composed local time identity: the local time
//! of V(t, X_t) at zero equals the branch-weighted sum of one-sided curve
//! local times of X along the zero set of V.

use slt_core::change_of_variable::{
    coquet_ouknine_rhs, cvf_lhs_value, cvf_rhs, localized_window_value, rhs_value, tabulate, verify,
};
use slt_core::level_curves::extract_branches;
use slt_core::stats;
use slt_core::{
    CvfSettings, Ensemble, PathGrid, Rect, SdeModel, Surface, Thresholds, TraceOptions,
};

/// E[L^0_1] of the process B_t^2 - t, by quadrature of the expected
/// occupation density.
const COMPOSED_MEAN: f64 = 0.967_882_898_076_573_4;

/// 4 E[L^1_1] for Brownian motion; L^a_1 has the law of (|N(0,1)| - |a|)^+.
const COQUET_MEAN: f64 = 0.666_523_764_701_490_4;

#[test]
fn square_minus_time_identity_holds_on_brownian_paths() {
    let v = Surface::parse("x^2 - t").unwrap();
    let model = SdeModel::brownian();
    let ens = Ensemble::new(&model, PathGrid::new(1.0, 1 << 14), 500, 0xC0FF_EE01);
    let mut settings = CvfSettings::new(Rect::new(0.0, 1.0, -2.5, 2.5));
    settings.eps = Some(0.02);
    settings.tolerance = 0.15;
    let report = verify(&ens, &v, 0.0, 1.0, &settings).unwrap();

    assert_eq!(report.branch_count, 2, "expected the two square root branches");
    assert!(report.pass, "gap {:.4} above tolerance", report.gap);
    assert!(report.correlation > 0.5, "pathwise correlation {:.3}", report.correlation);
    for (side, mean) in [("lhs", report.mean_lhs), ("rhs", report.mean_rhs)] {
        let rel = (mean / COMPOSED_MEAN - 1.0).abs();
        assert!(rel < 0.12, "{side} mean {mean:.4} is {rel:.3} away from the quadrature value");
    }
}

#[test]
fn branch_sum_matches_the_localized_window_estimator() {
    let v = Surface::parse("x^2 - t").unwrap();
    let rect = Rect::new(0.0, 1.0, -2.5, 2.5);
    let branches =
        extract_branches(&v, &rect, 9, 257, &Thresholds::default(), &TraceOptions::default());
    let grid = PathGrid::new(1.0, 1 << 14);
    let tables = tabulate(&branches, &v, &grid);

    let model = SdeModel::brownian();
    let ens = Ensemble::new(&model, grid, 300, 0xC0FF_EE02);
    let eps = 0.02;
    let pairs = ens
        .map(|p| {
            (rhs_value(&tables, p, 1.0, eps), localized_window_value(p, &v, &branches, 1.0, eps))
        })
        .unwrap();
    let branch_mean = stats::mean(&pairs.iter().map(|&(b, _)| b).collect::<Vec<_>>());
    let window_mean = stats::mean(&pairs.iter().map(|&(_, w)| w).collect::<Vec<_>>());
    let rel = (branch_mean - window_mean).abs() / branch_mean.max(window_mean);
    assert!(
        rel < 0.15,
        "branch sum {branch_mean:.4} vs localized window {window_mean:.4} (rel {rel:.3})"
    );
}

#[test]
fn degenerate_parabola_right_side_vanishes_and_left_side_scales_with_the_window() {
    // V = x^2 touches zero with dV/dx = 0, so the zero set holds no valid
    // branch and the branch sum is empty. The composed process still
    // accumulates occupation mass like sqrt(eps) because x^2 lingers near
    // zero quadratically.
    let v = Surface::parse("x^2").unwrap();
    let rect = Rect::new(0.0, 1.0, -2.5, 2.5);
    let branches =
        extract_branches(&v, &rect, 9, 257, &Thresholds::default(), &TraceOptions::default());
    assert!(branches.branches.is_empty(), "a tangential zero set must yield no branches");

    let model = SdeModel::brownian();
    let ens = Ensemble::new(&model, PathGrid::new(1.0, 1 << 16), 400, 0xC0FF_EE03);
    let triples = ens
        .map(|p| {
            (
                cvf_rhs(p, &branches, &v, 1.0, 0.01),
                cvf_lhs_value(p, &v, 0.0, 0.01, 1.0),
                cvf_lhs_value(p, &v, 0.0, 0.005, 1.0),
            )
        })
        .unwrap();
    assert!(triples.iter().all(|&(r, _, _)| r == 0.0), "empty branch set must sum to zero");

    let wide = stats::mean(&triples.iter().map(|&(_, w, _)| w).collect::<Vec<_>>());
    let narrow = stats::mean(&triples.iter().map(|&(_, _, n)| n).collect::<Vec<_>>());
    assert!((0.12..0.28).contains(&wide), "lhs mean {wide:.4} at eps = 0.01 off the sqrt law");
    let ratio = narrow / wide;
    assert!(
        (0.60..0.82).contains(&ratio),
        "halving eps scaled the lhs by {ratio:.3}, expected about 1/sqrt(2)"
    );
}

#[test]
fn coquet_ouknine_sum_matches_the_direct_composition() {
    let phi = Surface::parse("x^2 - 1").unwrap();
    // Roots of phi with the derivative of phi evaluated there.
    let roots = [(1.0, 2.0), (-1.0, -2.0)];
    let model = SdeModel::brownian();
    let ens = Ensemble::new(&model, PathGrid::new(1.0, 1 << 14), 600, 0xC0FF_EE04);
    let pairs = ens
        .map(|p| (coquet_ouknine_rhs(p, &roots, 1.0, 0.02), cvf_lhs_value(p, &phi, 0.0, 0.02, 1.0)))
        .unwrap();
    let sum: Vec<f64> = pairs.iter().map(|&(s, _)| s).collect();
    let direct: Vec<f64> = pairs.iter().map(|&(_, d)| d).collect();

    let mean_sum = stats::mean(&sum);
    let mean_direct = stats::mean(&direct);
    let rel = (mean_sum - mean_direct).abs() / mean_direct;
    assert!(rel < 0.10, "weighted root sum {mean_sum:.4} vs composition {mean_direct:.4}");
    let err = (mean_sum - COQUET_MEAN).abs();
    assert!(
        err < 3.0 * stats::standard_error(&sum) + 0.02,
        "root sum mean off the reflection value by {err:.4}"
    );
}

#[test]
fn undersized_rectangle_reports_low_coverage() {
    let v = Surface::parse("x^2 - t").unwrap();
    let model = SdeModel::brownian();
    let ens = Ensemble::new(&model, PathGrid::new(1.0, 1 << 10), 60, 0xC0FF_EE05);
    let mut settings = CvfSettings::new(Rect::new(0.0, 1.0, -0.4, 0.4));
    settings.eps = Some(0.02);
    let report = verify(&ens, &v, 0.0, 1.0, &settings).unwrap();
    assert!(
        report.low_coverage_paths > 0,
        "paths wander past |x| = 0.4 almost surely, which must be flagged"
    );
}
