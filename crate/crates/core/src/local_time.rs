//! Local-time estimators for discretized diffusion paths: occupation-density
//! and Tanaka estimators at a fixed level, and occupation estimators along a
//! sampled curve, including the one-sided variant used by the
//! change-of-variable identity.
//!
//! All occupation estimators share one convention: the value at time `t` is
//! `(1/eps) * sum over steps with t_i < t` of `1{x_i in window} q_i`, where
//! `q_i` is the model-sigma quadratic-variation increment of the step. The
//! left-window variant estimates the left local time `L^{a-}`.

use crate::sde::{PathGrid, SdePath};
use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `[a, a + eps)`; estimates the (right-continuous) local time `L^a`.
    Right,
    /// `(a - eps, a]`; estimates the left local time `L^{a-}`.
    Left,
    /// `(a - eps/2, a + eps/2)`; also estimates `L^a`, with first-order bias
    /// cancellation between the two half-windows.
    Symmetric,
}

impl Side {
    pub fn name(&self) -> &'static str {
        match self {
            Side::Right => "right",
            Side::Left => "left",
            Side::Symmetric => "symmetric",
        }
    }
}

#[derive(Debug, Clone, Copy, thiserror::Error)]
#[error("window width must be positive and finite, got {eps}")]
pub struct InvalidWindow {
    pub eps: f64,
}

/// A level with a one- or two-sided window around it.
#[derive(Debug, Clone, Copy)]
pub struct LevelSpec {
    pub level: f64,
    pub eps: f64,
    pub side: Side,
}

impl LevelSpec {
    pub fn new(level: f64, eps: f64, side: Side) -> Result<LevelSpec, InvalidWindow> {
        if eps > 0.0 && eps.is_finite() && level.is_finite() {
            Ok(LevelSpec { level, eps, side })
        } else {
            Err(InvalidWindow { eps })
        }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        let d = x - self.level;
        match self.side {
            Side::Right => (0.0..self.eps).contains(&d),
            Side::Left => -self.eps < d && d <= 0.0,
            Side::Symmetric => d.abs() < 0.5 * self.eps,
        }
    }
}

/// Node-snapping tolerance shared by every "count steps with t_i < t" cut.
#[inline]
pub(crate) fn snap_tolerance(t: f64) -> f64 {
    1e-9 * t.abs().max(1.0)
}

/// A nondecreasing cumulative process sampled on grid nodes, starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTimeProcess {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl LocalTimeProcess {
    /// Builds the cumulative process from per-step increments;
    /// `times.len() == increments.len() + 1`.
    fn from_increments(times: Vec<f64>, increments: impl Iterator<Item = f64>) -> LocalTimeProcess {
        let mut values = Vec::with_capacity(times.len());
        let mut acc = 0.0;
        values.push(0.0);
        for inc in increments {
            debug_assert!(inc >= 0.0 && inc.is_finite(), "increment {inc}");
            acc += inc;
            values.push(acc);
        }
        assert_eq!(values.len(), times.len(), "one increment per step");
        LocalTimeProcess { times, values }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().expect("non-empty process")
    }

    /// Value at `t`: the cumulative sum over steps starting strictly before
    /// `t`, with the same node snapping as [`PathGrid::steps_before`].
    pub fn value_at(&self, t: f64) -> f64 {
        let cutoff = t - snap_tolerance(t);
        let k = self.times.partition_point(|&ti| ti < cutoff);
        self.values[k.min(self.values.len() - 1)]
    }

    /// CSV export, columns `t,local_time`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "t,local_time")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }
}

/// The discrete occupation-density estimator at a fixed level.
pub fn occupation_local_time(path: &SdePath, spec: &LevelSpec) -> LocalTimeProcess {
    let inv_eps = 1.0 / spec.eps;
    let n = path.grid.n();
    let increments =
        (0..n).map(|i| if spec.contains(path.values[i]) { path.qv[i] * inv_eps } else { 0.0 });
    LocalTimeProcess::from_increments(path.times().collect(), increments)
}

/// Single-time evaluation of [`occupation_local_time`] without building the
/// whole process; accumulates in the same order, so the two agree bitwise.
pub fn occupation_value(path: &SdePath, spec: &LevelSpec, t: f64) -> f64 {
    let inv_eps = 1.0 / spec.eps;
    let k = path.grid.steps_before(t);
    let mut acc = 0.0;
    for i in 0..k {
        if spec.contains(path.values[i]) {
            acc += path.qv[i] * inv_eps;
        }
    }
    acc
}

/// Sign convention used by the Tanaka estimator: `sgn(x) = 1` for `x > 0`
/// and `-1` for `x <= 0`, which pairs the estimator with the left local
/// time at the level itself.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// How much monotonicity clipping the Tanaka estimator applied.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClipReport {
    /// Steps where the raw estimator dipped below its running maximum.
    pub count: usize,
    /// Sum of the clipped amounts.
    pub total: f64,
    /// Largest single clipped amount.
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct TanakaEstimate {
    pub process: LocalTimeProcess,
    pub clip: ClipReport,
}

/// Discrete Tanaka estimator
/// `l_k = |x_k - a| - |x_0 - a| - sum_{i<k} sgn(x_i - a) dx_i`.
///
/// The raw sequence is nondecreasing up to floating-point rounding (each
/// increment is `2|x_{i+1} - a|` when the path crosses `a`, else zero), so
/// the clip that restores monotonicity is a rounding diagnostic, reported
/// and never silent.
pub fn tanaka_local_time(path: &SdePath, a: f64) -> TanakaEstimate {
    let n = path.grid.n();
    let mut values = Vec::with_capacity(n + 1);
    let mut clip = ClipReport::default();
    let base = (path.values[0] - a).abs();
    let mut stoch = 0.0;
    let mut running = 0.0;
    values.push(0.0);
    for k in 1..=n {
        stoch += sgn(path.values[k - 1] - a) * path.increments[k - 1];
        let raw = (path.values[k] - a).abs() - base - stoch;
        if raw < running {
            let amount = running - raw;
            clip.count += 1;
            clip.total += amount;
            clip.max = clip.max.max(amount);
        } else {
            running = raw;
        }
        values.push(running);
    }
    TanakaEstimate { process: LocalTimeProcess { times: path.times().collect(), values }, clip }
}

/// Single-time evaluation of the Tanaka estimator (clipped value at `t`).
pub fn tanaka_value(path: &SdePath, a: f64, t: f64) -> f64 {
    let k = path.grid.steps_before(t);
    let base = (path.values[0] - a).abs();
    let mut stoch = 0.0;
    let mut running = 0.0;
    for i in 1..=k {
        stoch += sgn(path.values[i - 1] - a) * path.increments[i - 1];
        let raw = (path.values[i] - a).abs() - base - stoch;
        if raw > running {
            running = raw;
        }
    }
    running
}

/// A real function sampled on a contiguous run of grid nodes
/// `start ..= start + values.len() - 1`.
#[derive(Debug, Clone)]
pub struct GridCurve {
    pub start: usize,
    pub values: Vec<f64>,
}

impl GridCurve {
    /// Samples `f` on the grid nodes inside `[t_lo, t_hi]` (boundaries
    /// snapped to nearby nodes). Panics when the window contains no node.
    pub fn from_fn(grid: PathGrid, t_lo: f64, t_hi: f64, f: impl Fn(f64) -> f64) -> GridCurve {
        let dt = grid.dt();
        let lo = ((t_lo - snap_tolerance(t_lo)) / dt).ceil().max(0.0) as usize;
        let hi_f = (t_hi + snap_tolerance(t_hi)) / dt;
        let hi = (hi_f.floor() as usize).min(grid.n());
        assert!(lo <= hi, "curve window [{t_lo}, {t_hi}] contains no grid node");
        let values = (lo..=hi).map(|i| f(grid.time(i))).collect();
        GridCurve { start: lo, values }
    }

    pub fn constant(grid: PathGrid, t_lo: f64, t_hi: f64, a: f64) -> GridCurve {
        GridCurve::from_fn(grid, t_lo, t_hi, |_| a)
    }

    /// Last covered node index.
    pub fn end(&self) -> usize {
        self.start + self.values.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DvxSign {
    Plus,
    Minus,
}

impl DvxSign {
    pub fn from_value(v: f64) -> Option<DvxSign> {
        if v > 0.0 {
            Some(DvxSign::Plus)
        } else if v < 0.0 {
            Some(DvxSign::Minus)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, thiserror::Error)]
#[error("base point t0 = {t0} lies outside the curve interval [{t_lo}, {t_hi}]")]
pub struct BasePointOutsideCurve {
    pub t0: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

/// Local time at a curve, signed relative to a base point: zero at the base
/// node, negative before it, per the convention `Lambda_t = -L^t_{t0}` for
/// `t <= t0`. Increments over subintervals never involve the base point, so
/// they are independent of it bit for bit.
#[derive(Debug, Clone)]
pub struct CurveLocalTime {
    times: Vec<f64>,
    /// Plain forward accumulation from the interval start.
    cumulative: Vec<f64>,
    base_index: usize,
}

impl CurveLocalTime {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn base_time(&self) -> f64 {
        self.times[self.base_index]
    }

    /// Signed values relative to the base point.
    pub fn signed_values(&self) -> Vec<f64> {
        let b = self.cumulative[self.base_index];
        self.cumulative.iter().map(|c| c - b).collect()
    }

    fn cut(&self, t: f64) -> usize {
        let cutoff = t - snap_tolerance(t);
        self.times.partition_point(|&ti| ti < cutoff).min(self.cumulative.len() - 1)
    }

    /// Increment of the curve local time over `[t1, t2]`, clamped to the
    /// curve interval. Base-point independent by construction.
    pub fn increment(&self, t1: f64, t2: f64) -> f64 {
        self.cumulative[self.cut(t2)] - self.cumulative[self.cut(t1)]
    }

    /// The nonnegative process anchored at the interval start.
    pub fn anchored(&self) -> LocalTimeProcess {
        LocalTimeProcess { times: self.times.clone(), values: self.cumulative.clone() }
    }
}

fn window_cumulative(
    path: &SdePath,
    curve: &GridCurve,
    contains: impl Fn(f64) -> bool,
    inv_eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let len = curve.values.len();
    let times: Vec<f64> = (0..len).map(|j| path.grid.time(curve.start + j)).collect();
    let mut cumulative = Vec::with_capacity(len);
    let mut acc = 0.0;
    cumulative.push(0.0);
    for j in 0..len.saturating_sub(1) {
        let i = curve.start + j;
        let d = path.values[i] - curve.values[j];
        if contains(d) {
            acc += path.qv[i] * inv_eps;
        }
        cumulative.push(acc);
    }
    (times, cumulative)
}

/// Occupation estimator along a sampled curve with a signed base point.
pub fn curve_local_time(
    path: &SdePath,
    curve: &GridCurve,
    eps: f64,
    side: Side,
    t0: f64,
) -> Result<CurveLocalTime, BasePointOutsideCurve> {
    let spec = LevelSpec::new(0.0, eps, side).expect("caller-validated window");
    let t_lo = path.grid.time(curve.start);
    let t_hi = path.grid.time(curve.end());
    if !(t_lo - snap_tolerance(t_lo)..=t_hi + snap_tolerance(t_hi)).contains(&t0) {
        return Err(BasePointOutsideCurve { t0, t_lo, t_hi });
    }
    let (times, cumulative) = window_cumulative(path, curve, |d| spec.contains(d), 1.0 / eps);
    let base_index = (((t0 - t_lo) / path.grid.dt()).round() as usize).min(cumulative.len() - 1);
    Ok(CurveLocalTime { times, cumulative, base_index })
}

/// One-sided curve local time: right window `[0, eps)` on `x - gamma` when
/// the branch has `dV/dx > 0`, left window `(-eps, 0]` when `dV/dx < 0`.
/// This realizes the one-sided occupation measure along the branch; the
/// exact-hit correction terms vanish almost surely for diffusion paths and
/// are deliberately not summed.
pub fn one_sided_curve_local_time(
    path: &SdePath,
    curve: &GridCurve,
    dvx_sign: DvxSign,
    eps: f64,
) -> LocalTimeProcess {
    let inv_eps = 1.0 / eps;
    let contains = move |d: f64| match dvx_sign {
        DvxSign::Plus => (0.0..eps).contains(&d),
        DvxSign::Minus => -eps < d && d <= 0.0,
    };
    let (times, cumulative) = window_cumulative(path, curve, contains, inv_eps);
    LocalTimeProcess { times, values: cumulative }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{simulate, SdeModel};

    fn hand_path(grid: PathGrid, values: Vec<f64>, qv_each: f64) -> SdePath {
        let n = grid.n();
        assert_eq!(values.len(), n + 1);
        let increments = (0..n).map(|i| values[i + 1] - values[i]).collect();
        SdePath { grid, seed: 0, increments, qv: vec![qv_each; n], drift: vec![0.0; n], values }
    }

    #[test]
    fn constant_path_away_from_level_has_zero_local_time() {
        let model = SdeModel::arithmetic_bm(0.0, 0.0, 5.0);
        let path = simulate(&model, PathGrid::new(1.0, 32), 3).unwrap();
        let spec = LevelSpec::new(0.0, 1.0, Side::Symmetric).unwrap();
        let process = occupation_local_time(&path, &spec);
        assert_eq!(process.final_value(), 0.0);
        assert_eq!(process.values()[0], 0.0);
    }

    #[test]
    fn window_sides_follow_documented_boundaries() {
        let grid = PathGrid::new(1.0, 6);
        let xs = vec![0.0, 0.019, 0.02, -0.019, -0.02, 1e-9, 0.0];
        let path = hand_path(grid, xs, 0.5);
        let total = |side: Side| {
            occupation_value(&path, &LevelSpec::new(0.0, 0.02, side).unwrap(), 1.0) * 0.02 / 0.5
        };
        // Right [0, 0.02): counts 0.0, 0.019, 1e-9.
        assert!((total(Side::Right) - 3.0).abs() < 1e-12);
        // Left (-0.02, 0]: counts 0.0, -0.019.
        assert!((total(Side::Left) - 2.0).abs() < 1e-12);
        // Symmetric (-0.01, 0.01): counts 0.0, 1e-9.
        assert!((total(Side::Symmetric) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_windows_are_rejected() {
        assert!(LevelSpec::new(0.0, 0.0, Side::Right).is_err());
        assert!(LevelSpec::new(0.0, -1.0, Side::Right).is_err());
        assert!(LevelSpec::new(0.0, f64::NAN, Side::Right).is_err());
        assert!(LevelSpec::new(f64::INFINITY, 0.1, Side::Right).is_err());
    }

    #[test]
    fn occupation_value_matches_process_bitwise() {
        let path = simulate(&SdeModel::brownian(), PathGrid::new(1.0, 1000), 17).unwrap();
        let spec = LevelSpec::new(0.0, 0.05, Side::Symmetric).unwrap();
        let process = occupation_local_time(&path, &spec);
        for t in [0.3, 0.5, 0.77, 1.0] {
            assert_eq!(process.value_at(t).to_bits(), occupation_value(&path, &spec, t).to_bits());
        }
    }

    #[test]
    fn tanaka_on_pure_drift_telescopes_to_zero() {
        let model = SdeModel::arithmetic_bm(1.0, 0.0, 0.0);
        let path = simulate(&model, PathGrid::new(1.0, 8), 3).unwrap();
        let estimate = tanaka_local_time(&path, 2.0);
        assert!(estimate.process.values().iter().all(|&v| v == 0.0));
        assert_eq!(estimate.clip.count, 0);
    }

    #[test]
    fn tanaka_raw_increments_are_nonnegative_so_clipping_is_rare() {
        let path = simulate(&SdeModel::brownian(), PathGrid::new(1.0, 4096), 11).unwrap();
        let estimate = tanaka_local_time(&path, 0.0);
        let v = estimate.process.values();
        assert!(v.windows(2).all(|w| w[1] >= w[0]));
        assert!(estimate.process.final_value() > 0.0);
        // Exact algebra: clips can only come from rounding.
        assert!(estimate.clip.total < 1e-9, "clip total {}", estimate.clip.total);
        assert_eq!(
            tanaka_value(&path, 0.0, 1.0).to_bits(),
            estimate.process.final_value().to_bits()
        );
    }

    #[test]
    fn sign_convention_is_negative_at_zero() {
        assert_eq!(sgn(0.0), -1.0);
        assert_eq!(sgn(1e-300), 1.0);
        assert_eq!(sgn(-1e-300), -1.0);
    }

    #[test]
    fn constant_curve_over_full_grid_equals_level_estimator() {
        let path = simulate(&SdeModel::brownian(), PathGrid::new(1.0, 512), 23).unwrap();
        let curve = GridCurve::constant(path.grid, 0.0, 1.0, 0.1);
        let from_curve = curve_local_time(&path, &curve, 0.05, Side::Symmetric, 0.0).unwrap();
        let spec = LevelSpec::new(0.1, 0.05, Side::Symmetric).unwrap();
        let from_level = occupation_local_time(&path, &spec);
        assert_eq!(from_curve.anchored().values(), from_level.values());
    }

    #[test]
    fn base_point_does_not_affect_increments() {
        let path = simulate(&SdeModel::brownian(), PathGrid::new(1.0, 1024), 29).unwrap();
        let curve = GridCurve::from_fn(path.grid, 0.0, 1.0, |t| t.sqrt());
        let a = curve_local_time(&path, &curve, 0.02, Side::Symmetric, 0.2).unwrap();
        let b = curve_local_time(&path, &curve, 0.02, Side::Symmetric, 0.5).unwrap();
        let inc_a = a.increment(0.3, 0.8);
        let inc_b = b.increment(0.3, 0.8);
        assert_eq!(inc_a.to_bits(), inc_b.to_bits());
        assert!(a.increment(0.1, 1.0) >= 0.0);
        assert!(a.increment(0.1, 1.0).is_finite());
        // Signed values vanish at the base node and differ by a constant.
        assert_eq!(a.signed_values()[205], 0.0);
        let sa = a.signed_values();
        let sb = b.signed_values();
        let shift = sb[0] - sa[0];
        assert!(sa.iter().zip(&sb).all(|(x, y)| ((y - x) - shift).abs() < 1e-12));
    }

    #[test]
    fn base_point_outside_curve_is_rejected() {
        let path = simulate(&SdeModel::brownian(), PathGrid::new(1.0, 64), 1).unwrap();
        let curve = GridCurve::constant(path.grid, 0.25, 0.75, 0.0);
        assert!(curve_local_time(&path, &curve, 0.02, Side::Symmetric, 0.1).is_err());
        assert!(curve_local_time(&path, &curve, 0.02, Side::Symmetric, 0.5).is_ok());
    }

    #[test]
    fn one_sided_estimator_ignores_paths_off_the_curve() {
        let model = SdeModel::arithmetic_bm(0.0, 0.0, 1.0);
        let path = simulate(&model, PathGrid::new(1.0, 32), 3).unwrap();
        let curve = GridCurve::constant(path.grid, 0.0, 1.0, 0.0);
        for sign in [DvxSign::Plus, DvxSign::Minus] {
            let process = one_sided_curve_local_time(&path, &curve, sign, 0.1);
            assert_eq!(process.final_value(), 0.0);
        }
    }

    #[test]
    fn one_sided_windows_are_half_open_on_the_correct_side() {
        let grid = PathGrid::new(1.0, 4);
        let path = hand_path(grid, vec![0.0, 0.05, -0.05, 0.1, 0.0], 0.25);
        let curve = GridCurve::constant(grid, 0.0, 1.0, 0.0);
        let plus = one_sided_curve_local_time(&path, &curve, DvxSign::Plus, 0.1);
        // Right window [0, 0.1): counts x = 0.0 and 0.05, not -0.05 or 0.1.
        assert!((plus.final_value() * 0.1 / 0.25 - 2.0).abs() < 1e-12);
        let minus = one_sided_curve_local_time(&path, &curve, DvxSign::Minus, 0.1);
        // Left window (-0.1, 0]: counts 0.0 and -0.05.
        assert!((minus.final_value() * 0.1 / 0.25 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dvx_sign_classifies_values() {
        assert_eq!(DvxSign::from_value(2.0), Some(DvxSign::Plus));
        assert_eq!(DvxSign::from_value(-0.5), Some(DvxSign::Minus));
        assert_eq!(DvxSign::from_value(0.0), None);
    }

    #[test]
    fn csv_export_round_trips_small_process() {
        let grid = PathGrid::new(1.0, 2);
        let path = hand_path(grid, vec![0.0, 0.0, 0.0], 0.5);
        let spec = LevelSpec::new(0.0, 0.5, Side::Symmetric).unwrap();
        let process = occupation_local_time(&path, &spec);
        let mut buf = Vec::new();
        process.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,local_time\n0,0\n0.5,1\n1,2\n");
    }
}
