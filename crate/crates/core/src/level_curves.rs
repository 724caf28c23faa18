//! Branch decomposition of the zero set `{(t, x) : V(t, x) = 0, dV/dx != 0}`
//! inside a working rectangle.
//!
//! Each connected branch is a graph `x = Phi(t)` solving the continuation
//! ODE `y'(t) = -(dV/dt) / (dV/dx)(t, y(t))`. Branches are discovered by
//! scanning for sign changes of `V(t, .)` at a handful of seed times,
//! refined by bisection, then grown forward and backward with classical RK4
//! plus a Newton projection back onto the level set after every step.
//!
//! All branches sample the same global fine grid `t_k = t_lo + k h`, so
//! overlapping branches can be compared node by node and results do not
//! depend on which seed discovered a branch first.

use crate::expr::Surface;
use crate::local_time::DvxSign;
use std::io::{self, Write};

/// Working rectangle `[t_lo, t_hi] x [x_lo, x_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub t_lo: f64,
    pub t_hi: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Rect {
    pub fn new(t_lo: f64, t_hi: f64, x_lo: f64, x_hi: f64) -> Rect {
        let r = Rect { t_lo, t_hi, x_lo, x_hi };
        assert!(
            t_lo.is_finite()
                && t_hi.is_finite()
                && x_lo.is_finite()
                && x_hi.is_finite()
                && t_lo < t_hi
                && x_lo < x_hi,
            "degenerate rectangle {r:?}"
        );
        r
    }

    #[inline]
    pub fn contains_x(&self, x: f64) -> bool {
        (self.x_lo..=self.x_hi).contains(&x)
    }

    pub fn x_span(&self) -> f64 {
        self.x_hi - self.x_lo
    }
}

/// Numerical cutoffs for root residuals and derivative degeneracy.
#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    /// A point counts as on the level set when `|V| < eta_root`.
    pub eta_root: f64,
    /// Minimum `|dV/dx|` to accept a seed.
    pub delta_start: f64,
    /// Continuation stops when `|dV/dx|` falls below this.
    pub delta_stop: f64,
    /// Branch merge tolerance as a fraction of the rectangle's x-span.
    pub merge_frac: f64,
}

impl Default for Thresholds {
    fn default() -> Thresholds {
        Thresholds { eta_root: 1e-10, delta_start: 1e-6, delta_stop: 1e-8, merge_frac: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceOptions {
    /// Fine-grid step of the continuation.
    pub h: f64,
    /// Project back onto `V = 0` after each RK4 step. Disable only to
    /// measure the raw integrator order; the residual invariant does not
    /// hold without projection.
    pub newton_projection: bool,
    /// Newton iterations allowed per projection before declaring divergence.
    pub max_newton_iters: usize,
}

impl Default for TraceOptions {
    fn default() -> TraceOptions {
        TraceOptions { h: 1e-3, newton_projection: true, max_newton_iters: 3 }
    }
}

/// Why continuation stopped at an endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryReason {
    /// Reached the rectangle's time edge.
    DomainEdge,
    /// `|dV/dx|` fell below `delta_stop` (or changed sign).
    DvxVanishing,
    /// The curve left `[x_lo, x_hi]`.
    XRangeExit,
    /// The step or its Newton projection produced a non-finite value or
    /// failed to return to the level set.
    NewtonDivergence,
}

impl BoundaryReason {
    pub fn name(&self) -> &'static str {
        match self {
            BoundaryReason::DomainEdge => "domain-edge",
            BoundaryReason::DvxVanishing => "dvx-vanishing",
            BoundaryReason::XRangeExit => "x-range-exit",
            BoundaryReason::NewtonDivergence => "newton-divergence",
        }
    }
}

/// A root of `V(t, .)` found by seeding, with the derivative there.
#[derive(Debug, Clone, Copy)]
pub struct Seed {
    pub x: f64,
    pub dvx: f64,
}

impl Seed {
    pub fn sign(&self) -> DvxSign {
        DvxSign::from_value(self.dvx).expect("seeds are filtered for nonzero dvx")
    }
}

/// One branch `Phi` sampled on the global fine grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveBranch {
    /// Fine-grid index of the first sample; `t = t_origin + index * h`.
    pub first_index: usize,
    pub values: Vec<f64>,
    pub dvx_sign: DvxSign,
    pub left_reason: BoundaryReason,
    pub right_reason: BoundaryReason,
    t_origin: f64,
    h: f64,
}

impl CurveBranch {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last_index(&self) -> usize {
        self.first_index + self.values.len() - 1
    }

    #[inline]
    pub fn node_time(&self, global_index: usize) -> f64 {
        self.t_origin + global_index as f64 * self.h
    }

    /// Interval start `t_a`.
    pub fn t_a(&self) -> f64 {
        self.node_time(self.first_index)
    }

    /// Interval end `t_b`.
    pub fn t_b(&self) -> f64 {
        self.node_time(self.last_index())
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (self.first_index..=self.last_index()).map(|k| self.node_time(k))
    }

    /// Linear interpolation of `Phi` at `t`; `None` outside `[t_a, t_b]`
    /// (with a small snap at the ends).
    pub fn sample_at(&self, t: f64) -> Option<f64> {
        let snap = 1e-9 * t.abs().max(1.0);
        if t < self.t_a() - snap || t > self.t_b() + snap {
            return None;
        }
        if self.values.len() == 1 {
            return Some(self.values[0]);
        }
        let last = (self.values.len() - 1) as f64;
        let pos = ((t - self.t_a()) / self.h).clamp(0.0, last);
        let j = (pos.floor() as usize).min(self.values.len() - 2);
        let w = pos - j as f64;
        Some(self.values[j] * (1.0 - w) + self.values[j + 1] * w)
    }

    pub fn value_at_global_index(&self, k: usize) -> Option<f64> {
        if k < self.first_index || k > self.last_index() {
            return None;
        }
        Some(self.values[k - self.first_index])
    }
}

#[derive(Debug, Clone, Copy, thiserror::Error)]
pub enum SeedError {
    #[error("seed residual |V| = {residual:.3e} exceeds the root tolerance")]
    ResidualTooLarge { residual: f64 },
    #[error("|dV/dx| = {dvx:.3e} at the seed is below the start threshold")]
    FlatDerivative { dvx: f64 },
    #[error("seed ({t}, {x}) lies outside the working rectangle")]
    OutsideRectangle { t: f64, x: f64 },
}

/// A seed whose growth was rejected, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct SeedFailure {
    pub t: f64,
    pub x: f64,
    pub error: SeedError,
}

/// Disjoint set of branches over one rectangle.
#[derive(Debug, Clone)]
pub struct BranchSet {
    pub rect: Rect,
    pub h: f64,
    pub branches: Vec<CurveBranch>,
    pub failures: Vec<SeedFailure>,
}

impl BranchSet {
    /// Minimum distance from branch `k` to any other branch at time `t`;
    /// infinity when no other branch covers `t`.
    pub fn min_gap_at(&self, k: usize, t: f64) -> f64 {
        let Some(own) = self.branches[k].sample_at(t) else {
            return f64::INFINITY;
        };
        let mut gap = f64::INFINITY;
        for (j, other) in self.branches.iter().enumerate() {
            if j == k {
                continue;
            }
            if let Some(v) = other.sample_at(t) {
                gap = gap.min((v - own).abs());
            }
        }
        gap
    }

    /// CSV export, columns `branch_id,t,phi,dvx_sign`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "branch_id,t,phi,dvx_sign")?;
        for (id, b) in self.branches.iter().enumerate() {
            let sign = match b.dvx_sign {
                DvxSign::Plus => 1,
                DvxSign::Minus => -1,
            };
            for (t, phi) in b.times().zip(&b.values) {
                writeln!(w, "{id},{t},{phi},{sign}")?;
            }
        }
        Ok(())
    }
}

/// Scans `nx` uniform points of `[x_lo, x_hi]` for sign changes of
/// `V(t, .)`, refines each bracket by bisection to `|V| < eta_root`, and
/// drops roots whose `|dV/dx|` is below `delta_stop`. Roots come back in
/// increasing x order.
pub fn find_seeds(
    surface: &Surface,
    t: f64,
    x_lo: f64,
    x_hi: f64,
    nx: usize,
    thresholds: &Thresholds,
) -> Vec<Seed> {
    assert!(nx >= 2, "need at least two scan points");
    let step = (x_hi - x_lo) / (nx - 1) as f64;
    let xs: Vec<f64> = (0..nx).map(|j| x_lo + j as f64 * step).collect();
    let vs: Vec<f64> = xs.iter().map(|&x| surface.value(t, x)).collect();

    let mut roots: Vec<f64> = Vec::new();
    for j in 0..nx {
        if vs[j] == 0.0 {
            roots.push(xs[j]);
        }
        if j + 1 < nx && vs[j].is_finite() && vs[j + 1].is_finite() && vs[j] * vs[j + 1] < 0.0 {
            if let Some(root) = bisect(surface, t, xs[j], xs[j + 1], vs[j], thresholds.eta_root) {
                roots.push(root);
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).expect("finite roots"));
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (x_hi - x_lo).abs());

    roots
        .into_iter()
        .filter_map(|x| {
            let dvx = surface.dx(t, x);
            (dvx.is_finite() && dvx.abs() >= thresholds.delta_stop).then_some(Seed { x, dvx })
        })
        .collect()
}

fn bisect(
    surface: &Surface,
    t: f64,
    mut lo: f64,
    mut hi: f64,
    v_lo: f64,
    eta_root: f64,
) -> Option<f64> {
    let mut lo_negative = v_lo < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = surface.value(t, mid);
        if !v.is_finite() {
            return None;
        }
        if v.abs() < eta_root {
            return Some(mid);
        }
        if (v < 0.0) == lo_negative {
            lo = mid;
            lo_negative = v < 0.0;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= f64::EPSILON * mid.abs().max(1e-300) {
            break;
        }
    }
    // Interval exhausted without meeting the residual target (very steep V);
    // polish with a few Newton steps before giving up.
    let mut x = 0.5 * (lo + hi);
    for _ in 0..5 {
        let v = surface.value(t, x);
        if v.abs() < eta_root {
            return Some(x);
        }
        let d = surface.dx(t, x);
        if !d.is_finite() || d == 0.0 {
            return None;
        }
        x -= v / d;
    }
    (surface.value(t, x).abs() < eta_root).then_some(x)
}

struct FineGrid {
    t_origin: f64,
    h: f64,
    /// Last node index; node times are `t_origin + k h` for `k = 0..=last`.
    last: usize,
}

impl FineGrid {
    fn new(rect: &Rect, h: f64) -> FineGrid {
        assert!(h > 0.0 && h.is_finite(), "step must be positive");
        let span = rect.t_hi - rect.t_lo;
        let last = ((span / h) * (1.0 + 1e-12)).floor() as usize;
        assert!(last >= 1, "step {h} too large for time span {span}");
        FineGrid { t_origin: rect.t_lo, h, last }
    }

    #[inline]
    fn time(&self, k: usize) -> f64 {
        self.t_origin + k as f64 * self.h
    }

    fn nearest(&self, t: f64) -> usize {
        let k = ((t - self.t_origin) / self.h).round();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.last)
        }
    }
}

/// Right-hand side of the continuation ODE at `(t, y)`.
fn ode_rhs(
    surface: &Surface,
    t: f64,
    y: f64,
    thresholds: &Thresholds,
) -> Result<f64, BoundaryReason> {
    let dvx = surface.dx(t, y);
    if !dvx.is_finite() {
        return Err(BoundaryReason::NewtonDivergence);
    }
    if dvx.abs() < thresholds.delta_stop {
        return Err(BoundaryReason::DvxVanishing);
    }
    let dvt = surface.dt(t, y);
    let f = -dvt / dvx;
    if f.is_finite() {
        Ok(f)
    } else {
        Err(BoundaryReason::NewtonDivergence)
    }
}

/// One RK4 step of size `h` (signed) followed by Newton projection back to
/// the level set, plus the sign and residual checks the branch invariants
/// require. Returns the new `x` or the reason to stop before committing it.
fn continuation_step(
    surface: &Surface,
    t: f64,
    y: f64,
    h: f64,
    sign: DvxSign,
    thresholds: &Thresholds,
    options: &TraceOptions,
) -> Result<f64, BoundaryReason> {
    let k1 = ode_rhs(surface, t, y, thresholds)?;
    let k2 = ode_rhs(surface, t + 0.5 * h, y + 0.5 * h * k1, thresholds)?;
    let k3 = ode_rhs(surface, t + 0.5 * h, y + 0.5 * h * k2, thresholds)?;
    let k4 = ode_rhs(surface, t + h, y + h * k3, thresholds)?;
    let mut next = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if !next.is_finite() {
        return Err(BoundaryReason::NewtonDivergence);
    }
    let t_next = t + h;
    if options.newton_projection {
        let mut projected = false;
        for _ in 0..options.max_newton_iters {
            let r = surface.value(t_next, next);
            if !r.is_finite() {
                return Err(BoundaryReason::NewtonDivergence);
            }
            if r.abs() < thresholds.eta_root {
                projected = true;
                break;
            }
            let dvx = surface.dx(t_next, next);
            if !dvx.is_finite() {
                return Err(BoundaryReason::NewtonDivergence);
            }
            if dvx.abs() < thresholds.delta_stop {
                return Err(BoundaryReason::DvxVanishing);
            }
            next -= r / dvx;
            if !next.is_finite() {
                return Err(BoundaryReason::NewtonDivergence);
            }
        }
        if !projected && surface.value(t_next, next).abs() >= thresholds.eta_root {
            return Err(BoundaryReason::NewtonDivergence);
        }
    }
    let dvx = surface.dx(t_next, next);
    if !dvx.is_finite() {
        return Err(BoundaryReason::NewtonDivergence);
    }
    if dvx.abs() < thresholds.delta_stop || DvxSign::from_value(dvx) != Some(sign) {
        return Err(BoundaryReason::DvxVanishing);
    }
    Ok(next)
}

/// Grows the branch through `(seed_t, seed_x)` across the rectangle.
/// The seed time is snapped to the nearest fine-grid node and the seed
/// point Newton-projected there before validation.
pub fn grow_branch(
    surface: &Surface,
    seed_t: f64,
    seed_x: f64,
    rect: &Rect,
    thresholds: &Thresholds,
    options: &TraceOptions,
) -> Result<CurveBranch, SeedError> {
    let grid = FineGrid::new(rect, options.h);
    if seed_t < rect.t_lo - options.h || seed_t > rect.t_hi + options.h || !rect.contains_x(seed_x)
    {
        return Err(SeedError::OutsideRectangle { t: seed_t, x: seed_x });
    }
    let k0 = grid.nearest(seed_t);
    let t0 = grid.time(k0);
    let mut x0 = seed_x;
    if options.newton_projection {
        for _ in 0..8 {
            let r = surface.value(t0, x0);
            if !r.is_finite() {
                return Err(SeedError::ResidualTooLarge { residual: f64::INFINITY });
            }
            if r.abs() < thresholds.eta_root {
                break;
            }
            let d = surface.dx(t0, x0);
            if !d.is_finite() || d.abs() < thresholds.delta_stop {
                return Err(SeedError::FlatDerivative { dvx: d });
            }
            x0 -= r / d;
        }
    }
    let residual = surface.value(t0, x0).abs();
    if !(residual < thresholds.eta_root) {
        return Err(SeedError::ResidualTooLarge { residual });
    }
    let dvx0 = surface.dx(t0, x0);
    if !dvx0.is_finite() || dvx0.abs() < thresholds.delta_start {
        return Err(SeedError::FlatDerivative { dvx: dvx0 });
    }
    if !rect.contains_x(x0) {
        return Err(SeedError::OutsideRectangle { t: t0, x: x0 });
    }
    let sign = DvxSign::from_value(dvx0).expect("checked above");

    let mut forward = Vec::new();
    let mut right_reason = BoundaryReason::DomainEdge;
    let mut y = x0;
    for k in k0..grid.last {
        match continuation_step(surface, grid.time(k), y, options.h, sign, thresholds, options) {
            Ok(next) if rect.contains_x(next) => {
                forward.push(next);
                y = next;
            }
            Ok(_) => {
                right_reason = BoundaryReason::XRangeExit;
                break;
            }
            Err(reason) => {
                right_reason = reason;
                break;
            }
        }
    }

    let mut backward = Vec::new();
    let mut left_reason = BoundaryReason::DomainEdge;
    let mut y = x0;
    for k in (1..=k0).rev() {
        match continuation_step(surface, grid.time(k), y, -options.h, sign, thresholds, options) {
            Ok(next) if rect.contains_x(next) => {
                backward.push(next);
                y = next;
            }
            Ok(_) => {
                left_reason = BoundaryReason::XRangeExit;
                break;
            }
            Err(reason) => {
                left_reason = reason;
                break;
            }
        }
    }

    let first_index = k0 - backward.len();
    let mut values = Vec::with_capacity(backward.len() + 1 + forward.len());
    values.extend(backward.into_iter().rev());
    values.push(x0);
    values.extend(forward);
    Ok(CurveBranch {
        first_index,
        values,
        dvx_sign: sign,
        left_reason,
        right_reason,
        t_origin: grid.t_origin,
        h: grid.h,
    })
}

/// True when `candidate` coincides with `existing` within `tol` at every
/// overlapping fine-grid node (no overlap counts as distinct).
fn coincides(existing: &CurveBranch, candidate: &CurveBranch, tol: f64) -> bool {
    let lo = existing.first_index.max(candidate.first_index);
    let hi = existing.last_index().min(candidate.last_index());
    if lo > hi {
        return false;
    }
    (lo..=hi).all(|k| {
        let a = existing.value_at_global_index(k).expect("k in range");
        let b = candidate.value_at_global_index(k).expect("k in range");
        (a - b).abs() <= tol
    })
}

/// Merges `b` into `a` assuming they coincide on their overlap: extends the
/// index range to the union and keeps `a`'s samples where both exist.
fn merge_into(a: &mut CurveBranch, b: CurveBranch) {
    let lo = a.first_index.min(b.first_index);
    let hi = a.last_index().max(b.last_index());
    let mut values = Vec::with_capacity(hi - lo + 1);
    for k in lo..=hi {
        let v = a
            .value_at_global_index(k)
            .or_else(|| b.value_at_global_index(k))
            .expect("union of contiguous overlapping ranges has no gap");
        values.push(v);
    }
    if b.first_index < a.first_index {
        a.left_reason = b.left_reason;
    }
    if b.last_index() > a.last_index() {
        a.right_reason = b.right_reason;
    }
    a.first_index = lo;
    a.values = values;
}

/// Seeds at `n_seed_times` uniform interior times, grows every undiscovered
/// root, merges coinciding branches, and returns the disjoint set sorted by
/// (interval start, start value). Seeds whose growth fails are reported in
/// `failures`, never silently dropped.
pub fn extract_branches(
    surface: &Surface,
    rect: &Rect,
    n_seed_times: usize,
    nx: usize,
    thresholds: &Thresholds,
    options: &TraceOptions,
) -> BranchSet {
    assert!(n_seed_times >= 1, "need at least one seed time");
    let grid = FineGrid::new(rect, options.h);
    let merge_tol = thresholds.merge_frac * rect.x_span();

    let mut seed_nodes: Vec<usize> = (0..n_seed_times)
        .map(|j| {
            let frac = (j as f64 + 0.5) / n_seed_times as f64;
            grid.nearest(rect.t_lo + frac * (rect.t_hi - rect.t_lo))
        })
        .collect();
    seed_nodes.dedup();

    let mut branches: Vec<CurveBranch> = Vec::new();
    let mut failures = Vec::new();
    for &k in &seed_nodes {
        let t = grid.time(k);
        for seed in find_seeds(surface, t, rect.x_lo, rect.x_hi, nx, thresholds) {
            let already_covered = branches.iter().any(|b| {
                b.value_at_global_index(k)
                    .is_some_and(|phi| (phi - seed.x).abs() <= merge_tol.max(1e-9 * rect.x_span()))
            });
            if already_covered {
                continue;
            }
            match grow_branch(surface, t, seed.x, rect, thresholds, options) {
                Ok(branch) => {
                    if let Some(existing) = branches
                        .iter_mut()
                        .find(|b| b.dvx_sign == branch.dvx_sign && coincides(b, &branch, merge_tol))
                    {
                        merge_into(existing, branch);
                    } else {
                        branches.push(branch);
                    }
                }
                Err(error) => failures.push(SeedFailure { t, x: seed.x, error }),
            }
        }
    }

    branches.sort_by(|a, b| {
        (a.first_index, a.values[0])
            .partial_cmp(&(b.first_index, b.values[0]))
            .expect("finite branch samples")
    });
    BranchSet { rect: *rect, h: options.h, branches, failures }
}
