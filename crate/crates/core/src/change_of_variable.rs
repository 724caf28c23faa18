//! Both sides of the level-curve change of variable identity
//!
//! ```text
//! L^z_t(V(., X)) = sum_k  int_(0,t]  |dV/dx(s, Phi_k(s))|  dLam^{Phi_k,+}_s
//! ```
//!
//! where the `Phi_k` are the regular branches of `{V = z}` and `Lam^{+}` is
//! the one-sided occupation measure along a branch. The left side composes
//! the path through `V` and estimates an ordinary level local time; the
//! right side tabulates each branch on the path grid and accumulates the
//! weighted one-sided window sums. `verify` runs both over an ensemble and
//! reports mean agreement plus per-path correlation.

use crate::expr::Surface;
use crate::level_curves::{extract_branches, BranchSet, Rect, Thresholds, TraceOptions};
use crate::local_time::{
    occupation_local_time, occupation_value, snap_tolerance, DvxSign, LevelSpec, LocalTimeProcess,
    Side,
};
use crate::sde::{Ensemble, PathGrid, SdePath, SimError};
use crate::stats;
use std::io::{self, Write};

/// Composed value and Ito quadratic-variation weight of `Y = V(t, X)` at
/// one step. Shared by every left-side estimator so they agree bitwise.
#[inline]
fn composed_step(v: &Surface, t: f64, x: f64, q: f64) -> (f64, f64) {
    let y = v.value(t, x);
    let d = v.dx(t, x);
    (y, d * d * q)
}

/// The path of `Y_i = V(t_i, X_i)` with quadratic-variation increments
/// `(dV/dx)^2 q_i` from the Ito composition rule.
pub fn ito_composition(path: &SdePath, v: &Surface) -> SdePath {
    let n = path.grid.n();
    let mut values = Vec::with_capacity(n + 1);
    let mut qv = Vec::with_capacity(n);
    for i in 0..=n {
        let t = path.grid.time(i);
        let (y, w) = composed_step(v, t, path.values[i], if i < n { path.qv[i] } else { 0.0 });
        values.push(y);
        if i < n {
            qv.push(w);
        }
    }
    let increments = (0..n).map(|i| values[i + 1] - values[i]).collect();
    SdePath { grid: path.grid, seed: path.seed, values, increments, qv, drift: vec![0.0; n] }
}

/// Left side: right-window occupation estimator of `L^z(V(., X))`.
pub fn cvf_lhs(path: &SdePath, v: &Surface, z: f64, eps: f64) -> LocalTimeProcess {
    let spec = LevelSpec::new(z, eps, Side::Right).expect("positive finite window width");
    occupation_local_time(&ito_composition(path, v), &spec)
}

/// Single-time left side without materializing the composed path.
/// Accumulates in step order, so it agrees bitwise with
/// [`cvf_lhs`]`.value_at(t)`.
pub fn cvf_lhs_value(path: &SdePath, v: &Surface, z: f64, eps: f64, t: f64) -> f64 {
    let spec = LevelSpec::new(z, eps, Side::Right).expect("positive finite window width");
    let inv_eps = 1.0 / eps;
    let k = path.grid.steps_before(t);
    let mut acc = 0.0;
    for i in 0..k {
        let (y, w) = composed_step(v, path.grid.time(i), path.values[i], path.qv[i]);
        if spec.contains(y) {
            acc += w * inv_eps;
        }
    }
    acc
}

struct Segment {
    /// Path-grid index of the first tabulated node.
    start_step: usize,
    sign: DvxSign,
    /// Branch position at each covered node.
    phi: Vec<f64>,
    /// `|dV/dx|` along the branch at each covered node.
    weight: Vec<f64>,
}

/// Branches resampled onto a path grid with their weights, so the per-path
/// right side is a plain windowed sum with no surface evaluations.
pub struct BranchTables {
    segments: Vec<Segment>,
}

impl BranchTables {
    pub fn branch_count(&self) -> usize {
        self.segments.len()
    }
}

/// Resamples every branch onto the grid nodes inside its time interval and
/// evaluates the `|dV/dx|` weight at the branch point (deterministic and
/// shared across paths; on the estimator's support it differs from the
/// weight at the path point by O(eps)).
pub fn tabulate(branches: &BranchSet, v: &Surface, grid: &PathGrid) -> BranchTables {
    let dt = grid.dt();
    let mut segments = Vec::new();
    for b in &branches.branches {
        let t_a = b.t_a();
        let t_b = b.t_b();
        let lo = ((t_a - snap_tolerance(t_a)) / dt).ceil().max(0.0) as usize;
        let hi = (((t_b + snap_tolerance(t_b)) / dt).floor() as usize).min(grid.n());
        if lo > hi {
            continue;
        }
        let mut phi = Vec::with_capacity(hi - lo + 1);
        let mut weight = Vec::with_capacity(hi - lo + 1);
        for i in lo..=hi {
            let t = grid.time(i);
            let p = b.sample_at(t).expect("node inside the branch interval");
            phi.push(p);
            weight.push(v.dx(t, p).abs());
        }
        segments.push(Segment { start_step: lo, sign: b.dvx_sign, phi, weight });
    }
    BranchTables { segments }
}

/// Right side at time `t` from precomputed tables: for each branch, the
/// one-sided window sum `sum_i 1{X_i - Phi(t_i) in win} w_i q_i / eps` over
/// steps strictly before `t`, windows `[0, eps)` for increasing branches
/// and `(-eps, 0]` for decreasing ones. Matches
/// [`crate::local_time::one_sided_curve_local_time`] bitwise when the
/// weight is identically one.
pub fn rhs_value(tables: &BranchTables, path: &SdePath, t: f64, eps: f64) -> f64 {
    let inv_eps = 1.0 / eps;
    let cut = path.grid.steps_before(t);
    let mut total = 0.0;
    for seg in &tables.segments {
        let mut acc = 0.0;
        // The last covered node has no step increment inside the interval.
        for j in 0..seg.phi.len().saturating_sub(1) {
            let i = seg.start_step + j;
            if i >= cut {
                break;
            }
            let d = path.values[i] - seg.phi[j];
            let hit = match seg.sign {
                DvxSign::Plus => (0.0..eps).contains(&d),
                DvxSign::Minus => -eps < d && d <= 0.0,
            };
            if hit {
                acc += seg.weight[j] * (path.qv[i] * inv_eps);
            }
        }
        total += acc;
    }
    total
}

/// Right side of the identity against a branch set (empty set gives 0).
pub fn cvf_rhs(path: &SdePath, branches: &BranchSet, v: &Surface, t: f64, eps: f64) -> f64 {
    rhs_value(&tabulate(branches, v, &path.grid), path, t, eps)
}

/// Homogeneous change of variable `L^0(phi(X)) = sum (phi')^+ L^x + (phi')^- L^{x-}`
/// over the simple roots of `phi`, passed as `(x, phi'(x))` pairs:
/// increasing roots use the right-window estimator of `L^x`, decreasing
/// roots the left-window estimator of `L^{x-}`.
pub fn coquet_ouknine_rhs(path: &SdePath, roots: &[(f64, f64)], t: f64, eps: f64) -> f64 {
    let mut total = 0.0;
    for &(x, dphi) in roots {
        assert!(dphi != 0.0 && dphi.is_finite(), "roots must be simple: phi'({x}) = {dphi}");
        let side = if dphi > 0.0 { Side::Right } else { Side::Left };
        let spec = LevelSpec::new(x, eps, side).expect("positive finite window width");
        total += dphi.abs() * occupation_value(path, &spec, t);
    }
    total
}

/// Localized window estimator: counts a step when `0 <= V(t_i, X_i) < eps`
/// and `X_i` lies within `y_k` of branch `k`, with weight
/// `(dV/dx(t_i, X_i))^2 q_i` evaluated at the path point. The localization
/// radius is half the minimal branch separation at each time, floored at
/// `10 eps`.
pub fn localized_window_value(
    path: &SdePath,
    v: &Surface,
    branches: &BranchSet,
    t: f64,
    eps: f64,
) -> f64 {
    let inv_eps = 1.0 / eps;
    let cut = path.grid.steps_before(t);
    let mut total = 0.0;
    for (k, b) in branches.branches.iter().enumerate() {
        let mut acc = 0.0;
        for i in 0..cut {
            let ti = path.grid.time(i);
            let Some(phi) = b.sample_at(ti) else { continue };
            let radius = (0.5 * branches.min_gap_at(k, ti)).max(10.0 * eps);
            if (path.values[i] - phi).abs() >= radius {
                continue;
            }
            let (y, w) = composed_step(v, ti, path.values[i], path.qv[i]);
            if (0.0..eps).contains(&y) {
                acc += w * inv_eps;
            }
        }
        total += acc;
    }
    total
}

/// Settings for [`verify`].
#[derive(Debug, Clone)]
pub struct CvfSettings {
    /// Rectangle for branch extraction; should cover the bulk of the paths.
    pub rect: Rect,
    /// Window width; `None` uses 2% of the ensemble standard deviation at
    /// the horizon.
    pub eps: Option<f64>,
    pub n_seed_times: usize,
    pub nx: usize,
    pub thresholds: Thresholds,
    pub trace: TraceOptions,
    /// Relative gap below which the means are considered in agreement.
    pub tolerance: f64,
}

impl CvfSettings {
    pub fn new(rect: Rect) -> CvfSettings {
        CvfSettings {
            rect,
            eps: None,
            n_seed_times: 9,
            nx: 257,
            thresholds: Thresholds::default(),
            trace: TraceOptions::default(),
            tolerance: 0.05,
        }
    }
}

/// Ensemble comparison of the two sides at one `(z, t)` pair.
#[derive(Debug, Clone)]
pub struct CvfReport {
    /// Per-path left-side values at the horizon, in path order.
    pub lhs: Vec<f64>,
    /// Per-path right-side values, same order.
    pub rhs: Vec<f64>,
    pub mean_lhs: f64,
    pub mean_rhs: f64,
    pub se_lhs: f64,
    pub se_rhs: f64,
    /// `|mean_lhs - mean_rhs| / max(mean_lhs, mean_rhs, 1e-12)`.
    pub gap: f64,
    /// Per-path correlation between the sides; the identity is pathwise,
    /// so matching means alone would not validate it.
    pub correlation: f64,
    pub pass: bool,
    pub z: f64,
    pub horizon: f64,
    pub eps: f64,
    pub tolerance: f64,
    pub branch_count: usize,
    /// Paths spending more than 1% of their steps outside the rectangle.
    pub low_coverage_paths: usize,
}

impl CvfReport {
    /// Flat key-value text report.
    pub fn write_report<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "npaths = {}", self.lhs.len())?;
        writeln!(w, "z = {}", self.z)?;
        writeln!(w, "horizon = {}", self.horizon)?;
        writeln!(w, "eps = {}", self.eps)?;
        writeln!(w, "branches = {}", self.branch_count)?;
        writeln!(w, "mean_lhs = {}", self.mean_lhs)?;
        writeln!(w, "se_lhs = {}", self.se_lhs)?;
        writeln!(w, "mean_rhs = {}", self.mean_rhs)?;
        writeln!(w, "se_rhs = {}", self.se_rhs)?;
        writeln!(w, "gap = {}", self.gap)?;
        writeln!(w, "correlation = {}", self.correlation)?;
        writeln!(w, "tolerance = {}", self.tolerance)?;
        writeln!(w, "low_coverage_paths = {}", self.low_coverage_paths)?;
        writeln!(w, "pass = {}", self.pass)
    }

    /// CSV of per-path pairs, columns `path_index,lhs,rhs`.
    pub fn write_pairs_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "path_index,lhs,rhs")?;
        for (i, (l, r)) in self.lhs.iter().zip(&self.rhs).enumerate() {
            writeln!(w, "{i},{l},{r}")?;
        }
        Ok(())
    }
}

/// Runs both sides of the identity at level `z` and horizon `t` over an
/// ensemble. The level is absorbed by shifting the surface, so branches are
/// extracted for `V - z` and the left side estimates `L^0` of the shifted
/// composition.
pub fn verify(
    ensemble: &Ensemble,
    v: &Surface,
    z: f64,
    t: f64,
    settings: &CvfSettings,
) -> Result<CvfReport, SimError> {
    assert!(
        t > 0.0 && t <= ensemble.grid.t_max() * (1.0 + 1e-12),
        "horizon {t} outside the simulation span (0, {}]",
        ensemble.grid.t_max()
    );
    let vz = v.shifted(z);
    let eps = match settings.eps {
        Some(e) => e,
        None => 0.02 * ensemble.sd_at_horizon()?,
    };
    assert!(eps > 0.0 && eps.is_finite(), "window width {eps} must be positive");
    let branches = extract_branches(
        &vz,
        &settings.rect,
        settings.n_seed_times,
        settings.nx,
        &settings.thresholds,
        &settings.trace,
    );
    let tables = tabulate(&branches, &vz, &ensemble.grid);
    let rect = settings.rect;

    let per_path = ensemble.map(|path| {
        let lhs = cvf_lhs_value(path, &vz, 0.0, eps, t);
        let rhs = rhs_value(&tables, path, t, eps);
        let cut = path.grid.steps_before(t);
        let outside = (0..cut)
            .filter(|&i| {
                let ti = path.grid.time(i);
                let xi = path.values[i];
                ti < rect.t_lo || ti > rect.t_hi || !rect.contains_x(xi)
            })
            .count();
        (lhs, rhs, outside > cut / 100)
    })?;

    let lhs: Vec<f64> = per_path.iter().map(|r| r.0).collect();
    let rhs: Vec<f64> = per_path.iter().map(|r| r.1).collect();
    let low_coverage_paths = per_path.iter().filter(|r| r.2).count();
    let mean_lhs = stats::mean(&lhs);
    let mean_rhs = stats::mean(&rhs);
    let gap = (mean_lhs - mean_rhs).abs() / mean_lhs.max(mean_rhs).max(1e-12);
    let correlation = stats::correlation(&lhs, &rhs);
    let pass = gap < settings.tolerance && correlation > 0.5;
    Ok(CvfReport {
        se_lhs: stats::standard_error(&lhs),
        se_rhs: stats::standard_error(&rhs),
        lhs,
        rhs,
        mean_lhs,
        mean_rhs,
        gap,
        correlation,
        pass,
        z,
        horizon: t,
        eps,
        tolerance: settings.tolerance,
        branch_count: branches.branches.len(),
        low_coverage_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_time::one_sided_curve_local_time;
    use crate::local_time::GridCurve;
    use crate::sde::{simulate, SdeModel};

    fn brownian_path(n: usize, seed: u64) -> SdePath {
        simulate(&SdeModel::brownian(), PathGrid::new(1.0, n), seed).unwrap()
    }

    #[test]
    fn identity_surface_reduces_to_level_estimator_bitwise() {
        let v = Surface::parse("x").unwrap();
        let eps = 0.03;
        let path = brownian_path(4096, 11);
        let lhs = cvf_lhs(&path, &v, 0.0, eps);
        let spec = LevelSpec::new(0.0, eps, Side::Right).unwrap();
        let direct = occupation_local_time(&path, &spec);
        assert_eq!(lhs.values(), direct.values());
        assert_eq!(lhs.final_value(), cvf_lhs_value(&path, &v, 0.0, eps, 1.0));

        let rect = Rect::new(0.0, 1.0, -3.0, 3.0);
        let set =
            extract_branches(&v, &rect, 5, 257, &Thresholds::default(), &TraceOptions::default());
        assert_eq!(set.branches.len(), 1);
        assert!(set.branches[0].values.iter().all(|&p| p == 0.0));
        let rhs = cvf_rhs(&path, &set, &v, 1.0, eps);
        assert_eq!(rhs, lhs.final_value());

        // Same number through the one-sided curve estimator directly.
        let curve = GridCurve::constant(path.grid, 0.0, 1.0, 0.0);
        let one_sided = one_sided_curve_local_time(&path, &curve, DvxSign::Plus, eps);
        assert_eq!(rhs, one_sided.value_at(1.0));
    }

    #[test]
    fn verify_passes_exactly_on_identity_surface() {
        let v = Surface::parse("x").unwrap();
        let model = SdeModel::brownian();
        let ensemble = Ensemble::new(&model, PathGrid::new(1.0, 2048), 16, 99);
        let mut settings = CvfSettings::new(Rect::new(0.0, 1.0, -4.0, 4.0));
        settings.eps = Some(0.05);
        let report = verify(&ensemble, &v, 0.0, 1.0, &settings).unwrap();
        assert!(report.pass);
        assert_eq!(report.gap, 0.0);
        assert!((report.correlation - 1.0).abs() < 1e-12);
        assert_eq!(report.branch_count, 1);
        for (l, r) in report.lhs.iter().zip(&report.rhs) {
            assert_eq!(l, r);
        }
    }

    #[test]
    fn shifted_level_matches_direct_window_on_composition() {
        let v = Surface::parse("x").unwrap();
        let path = brownian_path(2048, 5);
        let eps = 0.04;
        // L^z of X itself: window [z, z + eps).
        let at_level = cvf_lhs_value(&path, &v, 0.25, eps, 1.0);
        let spec = LevelSpec::new(0.25, eps, Side::Right).unwrap();
        assert_eq!(at_level, occupation_value(&path, &spec, 1.0));
    }

    #[test]
    fn degenerate_root_right_side_is_exactly_zero() {
        let v = Surface::parse("x^2").unwrap();
        let rect = Rect::new(0.0, 1.0, -1.0, 1.0);
        let set =
            extract_branches(&v, &rect, 5, 101, &Thresholds::default(), &TraceOptions::default());
        let path = brownian_path(2048, 21);
        assert_eq!(cvf_rhs(&path, &set, &v, 1.0, 0.02), 0.0);
    }

    #[test]
    fn right_side_is_nondecreasing_in_time() {
        let v = Surface::parse("x^2 - t").unwrap();
        let rect = Rect::new(0.01, 1.0, -3.0, 3.0);
        let set =
            extract_branches(&v, &rect, 9, 257, &Thresholds::default(), &TraceOptions::default());
        let path = brownian_path(4096, 7);
        let tables = tabulate(&set, &v, &path.grid);
        let mut prev = 0.0;
        for k in 1..=10 {
            let t = k as f64 / 10.0;
            let val = rhs_value(&tables, &path, t, 0.05);
            assert!(val >= prev, "rhs decreased: {val} < {prev} at t = {t}");
            prev = val;
        }
    }

    #[test]
    fn coquet_ouknine_identity_root_reduces_to_level_estimator() {
        let path = brownian_path(2048, 17);
        let eps = 0.05;
        let direct = occupation_value(&path, &LevelSpec::new(0.0, eps, Side::Right).unwrap(), 1.0);
        assert_eq!(coquet_ouknine_rhs(&path, &[(0.0, 1.0)], 1.0, eps), direct);
    }

    #[test]
    fn coquet_ouknine_scaling_matches_direct_estimator_of_scaled_path() {
        // phi(x) = c x: the formula gives c L^0(X); the direct estimator
        // composes the path through phi first.
        let c = 2.5;
        let phi = Surface::parse("2.5*x").unwrap();
        let model = SdeModel::brownian();
        let ensemble = Ensemble::new(&model, PathGrid::new(1.0, 4096), 200, 4242);
        let eps = 0.05;
        let sums = ensemble
            .map(|path| {
                let formula = coquet_ouknine_rhs(path, &[(0.0, c)], 1.0, eps);
                let direct = cvf_lhs_value(path, &phi, 0.0, eps, 1.0);
                (formula, direct)
            })
            .unwrap();
        let mean_formula = stats::mean(&sums.iter().map(|p| p.0).collect::<Vec<_>>());
        let mean_direct = stats::mean(&sums.iter().map(|p| p.1).collect::<Vec<_>>());
        let rel = (mean_formula - mean_direct).abs() / mean_direct;
        assert!(rel < 0.05, "relative gap {rel} (formula {mean_formula}, direct {mean_direct})");
    }

    #[test]
    fn report_serialization_is_line_oriented() {
        let v = Surface::parse("x").unwrap();
        let model = SdeModel::brownian();
        let ensemble = Ensemble::new(&model, PathGrid::new(1.0, 512), 4, 1);
        let mut settings = CvfSettings::new(Rect::new(0.0, 1.0, -4.0, 4.0));
        settings.eps = Some(0.1);
        let report = verify(&ensemble, &v, 0.0, 1.0, &settings).unwrap();
        let mut buf = Vec::new();
        report.write_report(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("npaths = 4"));
        assert!(text.contains("pass = true"));
        assert!(text.contains("gap = 0"));
        let mut csv = Vec::new();
        report.write_pairs_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.starts_with("path_index,lhs,rhs\n0,"));
        assert_eq!(csv.lines().count(), 5);
    }
}
