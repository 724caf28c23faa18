//! Monte Carlo checks of the level and curve local time estimators.
//!
//! The oracle is the reflection identity for Brownian motion: L^a_1 has the
//! law of (|N(0,1)| - |a|)^+, so at a = 0 the mean is sqrt(2/pi) and the
//! standard deviation is sqrt(1 - 2/pi). Sample standard errors keep every
//! bound honest at the reduced path counts used here.

use slt_core::local_time::{occupation_value, one_sided_curve_local_time, tanaka_local_time};
use slt_core::sde::quadratic_variation;
use slt_core::stats;
use slt_core::{DvxSign, Ensemble, GridCurve, LevelSpec, PathGrid, SdeModel, Side};

/// E|N(0,1)| = sqrt(2/pi).
const MEAN_ABS_NORMAL: f64 = 0.797_884_560_802_865_4;

fn spec(level: f64, eps: f64, side: Side) -> LevelSpec {
    LevelSpec::new(level, eps, side).unwrap()
}

#[test]
fn occupation_and_tanaka_means_match_the_reflection_law() {
    let model = SdeModel::brownian();
    let ens = Ensemble::new(&model, PathGrid::new(1.0, 1 << 14), 2000, 0x5EED_0001);
    let right = spec(0.0, 0.02, Side::Right);
    let pairs = ens
        .map(|p| {
            (occupation_value(p, &right, 1.0), tanaka_local_time(p, 0.0).process.final_value())
        })
        .unwrap();
    let occ: Vec<f64> = pairs.iter().map(|&(o, _)| o).collect();
    let tan: Vec<f64> = pairs.iter().map(|&(_, t)| t).collect();

    // The Tanaka estimator is unbiased at every grid resolution; the
    // occupation estimator carries an O(eps) window bias.
    let tan_err = (stats::mean(&tan) - MEAN_ABS_NORMAL).abs();
    assert!(tan_err < 3.0 * stats::standard_error(&tan), "tanaka mean off by {tan_err:.4}");
    let occ_err = (stats::mean(&occ) - MEAN_ABS_NORMAL).abs();
    assert!(
        occ_err < 3.0 * stats::standard_error(&occ) + 0.05,
        "occupation mean off by {occ_err:.4}"
    );
}

#[test]
fn left_and_right_windows_agree_at_level_zero() {
    let model = SdeModel::brownian();
    let ens = Ensemble::new(&model, PathGrid::new(1.0, 1 << 14), 1500, 0x5EED_0002);
    let right = spec(0.0, 0.02, Side::Right);
    let left = spec(0.0, 0.02, Side::Left);
    let pairs =
        ens.map(|p| (occupation_value(p, &right, 1.0), occupation_value(p, &left, 1.0))).unwrap();
    let gap = stats::mean(&pairs.iter().map(|&(r, l)| r - l).collect::<Vec<_>>()).abs();
    // L^0 = L^{0-} a.s. for Brownian motion, and the first-order window
    // biases cancel by symmetry.
    assert!(gap < 0.02, "left/right window means differ by {gap:.4}");
}

#[test]
fn cross_estimator_gap_shrinks_as_the_grid_refines() {
    let model = SdeModel::brownian();
    let sym = spec(0.0, 0.02, Side::Symmetric);
    let mean_abs_gap = |n: usize, seed: u64| {
        let ens = Ensemble::new(&model, PathGrid::new(1.0, n), 250, seed);
        let gaps = ens
            .map(|p| {
                let t = tanaka_local_time(p, 0.0).process.final_value();
                (t - occupation_value(p, &sym, 1.0)).abs()
            })
            .unwrap();
        stats::mean(&gaps)
    };
    let coarse = mean_abs_gap(1 << 14, 0x5EED_0003);
    let fine = mean_abs_gap(1 << 16, 0x5EED_0003);
    assert!(fine < coarse, "per-path gap grew under refinement: {coarse:.4} -> {fine:.4}");
    assert!(fine < 0.08, "per-path gap {fine:.4} too large at n = 2^16");
}

#[test]
fn window_refinement_keeps_the_mean_stable() {
    let model = SdeModel::brownian();
    let ens = Ensemble::new(&model, PathGrid::new(1.0, 1 << 16), 500, 0x5EED_0004);
    let wide = spec(0.0, 0.04, Side::Symmetric);
    let narrow = spec(0.0, 0.02, Side::Symmetric);
    let diffs =
        ens.map(|p| occupation_value(p, &wide, 1.0) - occupation_value(p, &narrow, 1.0)).unwrap();
    let drift = stats::mean(&diffs).abs();
    assert!(drift < 0.02, "halving the window moved the mean by {drift:.4}");
}

#[test]
fn one_sided_curve_estimators_match_the_reflection_law() {
    let model = SdeModel::brownian();
    let grid = PathGrid::new(1.0, 1 << 14);
    let ens = Ensemble::new(&model, grid, 1500, 0x5EED_0005);
    let curve = GridCurve::constant(PathGrid::new(1.0, 1 << 14), 0.0, 1.0, 0.0);
    // Both one-sided estimators target the same L^0 for a driftless path.
    for sign in [DvxSign::Plus, DvxSign::Minus] {
        let vals =
            ens.map(|p| one_sided_curve_local_time(p, &curve, sign, 0.02).final_value()).unwrap();
        let err = (stats::mean(&vals) - MEAN_ABS_NORMAL).abs();
        assert!(
            err < 3.0 * stats::standard_error(&vals) + 0.03,
            "one-sided ({sign:?}) mean off by {err:.4}"
        );
    }
}

#[test]
fn model_and_realized_quadratic_variation_agree_for_gbm() {
    let model = SdeModel::gbm(0.0, 0.2, 1.0);
    let ens = Ensemble::new(&model, PathGrid::new(1.0, 1 << 14), 200, 0x5EED_0006);
    let rels = ens
        .map(|p| {
            let realized: f64 = p.increments.iter().map(|dx| dx * dx).sum();
            let modeled = quadratic_variation(p, 1.0).unwrap();
            (realized - modeled).abs() / modeled
        })
        .unwrap();
    let mean_rel = stats::mean(&rels);
    assert!(mean_rel < 0.05, "realized vs model QV differ by {mean_rel:.4} on average");
}
