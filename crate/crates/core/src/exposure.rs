//! Expected exposure `EE(t) = E[max(V(t, X_t), 0)]` by Monte Carlo and by
//! the forward representation
//!
//! ```text
//! EE(t) = EE(0) + 1/2 sum_k  int_0^t  sigma^2(s, l_k(s)) |dV/dx(s, l_k(s))| q(s, l_k(s)) ds
//! ```
//!
//! along the zero-level branches `l_k` of a generator-harmonic `V`, plus
//! expected level local times `E L^z_t = int sigma^2(s, z) q(s, z) ds` and
//! the credit valuation adjustment `CVA_0 = alpha int_0^T EE(t) dP_tau(t)`.
//! `q` is the marginal density of the state, either in closed form for the
//! preset models or kernel-estimated from a dedicated ensemble.

use crate::expr::Surface;
use crate::level_curves::{BranchSet, CurveBranch, Rect};
use crate::quad::{adaptive_simpson, integrate_from_origin, QuadError};
use crate::rng;
use crate::sde::{simulate, Ensemble, PathGrid, Preset, SdeModel, SimError};
use crate::stats::{mean, norm_cdf, norm_pdf, silverman_bandwidth};
use std::io::{self, Write};

#[derive(Debug, Clone, thiserror::Error)]
pub enum DensityError {
    #[error("the model has zero volatility, so its marginal law is a point mass")]
    DegenerateVolatility,
    #[error("custom dynamics have no closed-form marginal density; build a kernel estimate")]
    CustomModel,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Kernel density estimate over a dedicated ensemble: Gaussian kernel,
/// Silverman bandwidth per time slice, linear interpolation between slices.
#[derive(Debug, Clone)]
struct KdeDensity {
    times: Vec<f64>,
    /// Horizon states per slice, `samples[k][i]` for path `i` at `times[k]`.
    samples: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
}

impl KdeDensity {
    fn slice_value(&self, k: usize, x: f64) -> f64 {
        let b = self.bandwidths[k];
        let sum: f64 = self.samples[k].iter().map(|&s| norm_pdf((x - s) / b)).sum();
        sum / (b * self.samples[k].len() as f64)
    }

    fn slice_mass(&self, k: usize, x_lo: f64, x_hi: f64) -> f64 {
        let b = self.bandwidths[k];
        let sum: f64 = self.samples[k]
            .iter()
            .map(|&s| norm_cdf((x_hi - s) / b) - norm_cdf((x_lo - s) / b))
            .sum();
        sum / self.samples[k].len() as f64
    }

    /// Bracketing slice indices and interpolation weight for time `s`,
    /// clamped to the covered span (the estimate has no slice at 0; small
    /// times reuse the first slice).
    fn locate(&self, s: f64) -> (usize, usize, f64) {
        let s = s.clamp(self.times[0], *self.times.last().expect("nonempty slices"));
        let j = self.times.partition_point(|&tk| tk <= s).saturating_sub(1);
        if j + 1 >= self.times.len() {
            return (j, j, 0.0);
        }
        let w = (s - self.times[j]) / (self.times[j + 1] - self.times[j]);
        (j, j + 1, w)
    }
}

#[derive(Debug, Clone)]
enum DensityKind {
    ClosedForm { preset: Preset, x0: f64 },
    Kde(KdeDensity),
}

/// Marginal density `q(s, x)` of the state at time `s`.
#[derive(Debug, Clone)]
pub struct DensityModel {
    kind: DensityKind,
}

/// Gaussian marginal parameters for the presets that have one.
fn gaussian_params(preset: Preset, x0: f64, s: f64) -> Option<(f64, f64)> {
    match preset {
        Preset::Brownian => Some((x0, s)),
        Preset::ArithmeticBm { mu, sigma } => Some((x0 + mu * s, sigma * sigma * s)),
        Preset::Ou { kappa, theta, sigma } => {
            let mean = theta + (x0 - theta) * (-kappa * s).exp();
            let var = if kappa.abs() < 1e-12 {
                sigma * sigma * s
            } else {
                sigma * sigma * (-(-2.0 * kappa * s).exp_m1()) / (2.0 * kappa)
            };
            Some((mean, var))
        }
        Preset::Gbm { .. } | Preset::Custom => None,
    }
}

impl DensityModel {
    /// Closed-form marginal for a preset model. Custom dynamics and zero
    /// volatility are rejected.
    pub fn closed_form(model: &SdeModel) -> Result<DensityModel, DensityError> {
        let degenerate = match model.preset {
            Preset::Brownian => false,
            Preset::ArithmeticBm { sigma, .. }
            | Preset::Gbm { sigma, .. }
            | Preset::Ou { sigma, .. } => sigma == 0.0,
            Preset::Custom => return Err(DensityError::CustomModel),
        };
        if degenerate {
            return Err(DensityError::DegenerateVolatility);
        }
        Ok(DensityModel { kind: DensityKind::ClosedForm { preset: model.preset, x0: model.x0 } })
    }

    /// Kernel estimate from a dedicated ensemble in its own seed namespace,
    /// with `n_times` uniform slices of `(0, t_max]`.
    pub fn kde(
        model: &SdeModel,
        grid: PathGrid,
        npaths: usize,
        master_seed: u64,
        n_times: usize,
    ) -> Result<DensityModel, DensityError> {
        assert!(npaths >= 2, "kernel estimate needs at least two paths");
        assert!(n_times >= 1 && n_times <= grid.n(), "slice count must fit the grid");
        let indices: Vec<usize> = (1..=n_times).map(|k| (k * grid.n()) / n_times).collect();
        let mut samples = vec![Vec::with_capacity(npaths); n_times];
        for i in 0..npaths {
            let path = simulate(model, grid, rng::density_seed(master_seed, i as u64))?;
            for (slot, &idx) in samples.iter_mut().zip(&indices) {
                slot.push(path.values[idx]);
            }
        }
        let times: Vec<f64> = indices.iter().map(|&idx| grid.time(idx)).collect();
        let bandwidths: Vec<f64> = samples.iter().map(|s| silverman_bandwidth(s)).collect();
        if bandwidths.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
            return Err(DensityError::DegenerateVolatility);
        }
        Ok(DensityModel { kind: DensityKind::Kde(KdeDensity { times, samples, bandwidths }) })
    }

    /// Density value `q(s, x)`; zero for `s <= 0` and outside the support.
    pub fn value(&self, s: f64, x: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        match &self.kind {
            DensityKind::ClosedForm { preset, x0 } => match preset {
                Preset::Gbm { mu, sigma } => {
                    if x <= 0.0 {
                        return 0.0;
                    }
                    let sd = sigma.abs() * s.sqrt();
                    let m = (x0.ln()) + (mu - 0.5 * sigma * sigma) * s;
                    norm_pdf((x.ln() - m) / sd) / (x * sd)
                }
                _ => {
                    let (mean, var) = gaussian_params(*preset, *x0, s)
                        .expect("non-gbm closed forms are gaussian");
                    let sd = var.sqrt();
                    if sd <= 0.0 {
                        return 0.0;
                    }
                    norm_pdf((x - mean) / sd) / sd
                }
            },
            DensityKind::Kde(kde) => {
                let (j0, j1, w) = kde.locate(s);
                (1.0 - w) * kde.slice_value(j0, x) + w * kde.slice_value(j1, x)
            }
        }
    }

    /// Probability mass of `[x_lo, x_hi]` at time `s`.
    pub fn mass_inside(&self, s: f64, x_lo: f64, x_hi: f64) -> f64 {
        if s <= 0.0 {
            // At the start the law is the point mass at the initial state.
            return if (x_lo..=x_hi).contains(&self.start_point_proxy()) { 1.0 } else { 0.0 };
        }
        match &self.kind {
            DensityKind::ClosedForm { preset, x0 } => match preset {
                Preset::Gbm { mu, sigma } => {
                    let sd = sigma.abs() * s.sqrt();
                    let m = x0.ln() + (mu - 0.5 * sigma * sigma) * s;
                    let cdf = |x: f64| {
                        if x <= 0.0 {
                            0.0
                        } else {
                            norm_cdf((x.ln() - m) / sd)
                        }
                    };
                    cdf(x_hi) - cdf(x_lo)
                }
                _ => {
                    let (mean, var) = gaussian_params(*preset, *x0, s)
                        .expect("non-gbm closed forms are gaussian");
                    let sd = var.sqrt();
                    norm_cdf((x_hi - mean) / sd) - norm_cdf((x_lo - mean) / sd)
                }
            },
            DensityKind::Kde(kde) => {
                let (j0, j1, w) = kde.locate(s);
                (1.0 - w) * kde.slice_mass(j0, x_lo, x_hi) + w * kde.slice_mass(j1, x_lo, x_hi)
            }
        }
    }

    fn start_point_proxy(&self) -> f64 {
        match &self.kind {
            DensityKind::ClosedForm { x0, .. } => *x0,
            DensityKind::Kde(kde) => mean(&kde.samples[0]),
        }
    }

    /// `|int q(s, x) dx - 1|` by quadrature over the effective support.
    pub fn normalization_error(&self, s: f64) -> f64 {
        let (lo, hi) = match &self.kind {
            DensityKind::ClosedForm { preset, x0 } => match preset {
                Preset::Gbm { mu, sigma } => {
                    let sd = sigma.abs() * s.sqrt();
                    let m = x0.ln() + (mu - 0.5 * sigma * sigma) * s;
                    ((m - 12.0 * sd).exp(), (m + 12.0 * sd).exp())
                }
                _ => {
                    let (mean, var) = gaussian_params(*preset, *x0, s)
                        .expect("non-gbm closed forms are gaussian");
                    let sd = var.sqrt();
                    (mean - 12.0 * sd, mean + 12.0 * sd)
                }
            },
            DensityKind::Kde(kde) => {
                let (j0, j1, _) = kde.locate(s);
                let b = kde.bandwidths[j0].max(kde.bandwidths[j1]);
                let lo = kde.samples[j0]
                    .iter()
                    .chain(&kde.samples[j1])
                    .fold(f64::INFINITY, |a, &v| a.min(v));
                let hi = kde.samples[j0]
                    .iter()
                    .chain(&kde.samples[j1])
                    .fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                (lo - 12.0 * b, hi + 12.0 * b)
            }
        };
        let total = adaptive_simpson(&|x| self.value(s, x), lo, hi, 1e-10).value;
        (total - 1.0).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EeMethod {
    Mc,
    Forward,
}

impl EeMethod {
    pub fn name(&self) -> &'static str {
        match self {
            EeMethod::Mc => "mc",
            EeMethod::Forward => "forward",
        }
    }
}

/// Expected exposure sampled at a set of times.
#[derive(Debug, Clone)]
pub struct EeProfile {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Per-time standard errors; empty for the quadrature method.
    pub stderr: Vec<f64>,
    pub method: EeMethod,
}

impl EeProfile {
    /// CSV export, columns `t,ee,stderr,method` (stderr blank for the
    /// forward method).
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "t,ee,stderr,method")?;
        for (j, (t, v)) in self.times.iter().zip(&self.values).enumerate() {
            match self.stderr.get(j) {
                Some(se) => writeln!(w, "{t},{v},{se},{}", self.method.name())?,
                None => writeln!(w, "{t},{v},,{}", self.method.name())?,
            }
        }
        Ok(())
    }
}

/// Monte Carlo exposure profile: per-time ensemble mean and standard error
/// of the positive part, with times snapped to grid nodes.
pub fn ee_mc(ensemble: &Ensemble, v: &Surface, times: &[f64]) -> Result<EeProfile, SimError> {
    assert!(!times.is_empty(), "need at least one evaluation time");
    let grid = ensemble.grid;
    let node_times: Vec<f64> = times
        .iter()
        .map(|&t| {
            assert!(
                (0.0..=grid.t_max() * (1.0 + 1e-12)).contains(&t),
                "time {t} outside the simulated span [0, {}]",
                grid.t_max()
            );
            grid.time(grid.index_at(t))
        })
        .collect();
    let indices: Vec<usize> = times.iter().map(|&t| grid.index_at(t)).collect();

    let m = indices.len();
    let (sums, sumsq) = ensemble.fold_paths(
        || (vec![0.0f64; m], vec![0.0f64; m]),
        |(mut sums, mut sumsq), path| {
            for (j, &idx) in indices.iter().enumerate() {
                let val = v.value(node_times[j], path.values[idx]).max(0.0);
                sums[j] += val;
                sumsq[j] += val * val;
            }
            (sums, sumsq)
        },
        |(mut a, mut a2), (b, b2)| {
            for j in 0..m {
                a[j] += b[j];
                a2[j] += b2[j];
            }
            (a, a2)
        },
    )?;

    let n = ensemble.npaths as f64;
    let mut values = Vec::with_capacity(m);
    let mut stderr = Vec::with_capacity(m);
    for j in 0..m {
        let mean = sums[j] / n;
        assert!(mean.is_finite(), "exposure at t = {} is not finite", node_times[j]);
        let var = if ensemble.npaths > 1 {
            ((sumsq[j] - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        values.push(mean);
        stderr.push((var / n).sqrt());
    }
    Ok(EeProfile { times: node_times, values, stderr, method: EeMethod::Mc })
}

/// Expected level local time `E L^z_t = int_0^t sigma^2(s, z) q(s, z) ds`,
/// integrated with the `s = u^2` substitution to absorb the density's
/// small-time singularity when `z` is the start point.
pub fn expected_local_time(
    model: &SdeModel,
    density: &DensityModel,
    z: f64,
    t: f64,
) -> Result<f64, QuadError> {
    assert!(t > 0.0, "horizon must be positive");
    let f = |s: f64| {
        let sig = model.sigma.value(s, z);
        sig * sig * density.value(s, z)
    };
    integrate_from_origin(&f, 0.0, t, 1e-10).into_value(1e-8)
}

/// Generator residual report for a candidate martingale surface.
#[derive(Debug, Clone, Copy)]
pub struct MartingaleReport {
    pub max_residual: f64,
    /// Magnitude of the generator terms, floored at 1.
    pub scale: f64,
    pub relative: f64,
    /// Set when the relative residual exceeds 1e-6.
    pub warn: bool,
}

/// Evaluates `dV/dt + mu dV/dx + sigma^2/2 d2V/dx2` on an `nt x nx` grid
/// over the rectangle. A martingale surface for the model has residual 0.
pub fn martingale_diagnostic(
    model: &SdeModel,
    v: &Surface,
    rect: &Rect,
    nt: usize,
    nx: usize,
) -> MartingaleReport {
    assert!(nt >= 2 && nx >= 2, "diagnostic grid too small");
    let mut max_residual = 0.0f64;
    let mut scale = 1.0f64;
    for it in 0..nt {
        let t = rect.t_lo + (rect.t_hi - rect.t_lo) * it as f64 / (nt - 1) as f64;
        for ix in 0..nx {
            let x = rect.x_lo + (rect.x_hi - rect.x_lo) * ix as f64 / (nx - 1) as f64;
            let sig = model.sigma.value(t, x);
            let terms =
                [v.dt(t, x), model.mu.value(t, x) * v.dx(t, x), 0.5 * sig * sig * v.dxx(t, x)];
            if terms.iter().any(|u| !u.is_finite()) {
                continue;
            }
            max_residual = max_residual.max(terms.iter().sum::<f64>().abs());
            scale = scale.max(terms.iter().map(|u| u.abs()).sum());
        }
    }
    let relative = max_residual / scale;
    MartingaleReport { max_residual, scale, relative, warn: relative > 1e-6 }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ForwardError {
    #[error("volatility vanishes on the working rectangle; the forward formula needs a diffusive density")]
    ZeroVolatility,
    #[error(
        "generator residual {relative:.3e} exceeds the martingale gate 1e-3; \
         the forward formula only represents exposures of martingale surfaces \
         (pass the override to force it)"
    )]
    NotMartingale { relative: f64 },
    #[error("branch {branch} quadrature failed: {source}")]
    Quadrature { branch: usize, source: QuadError },
}

/// A requested time where more than 1% of the density mass lies outside
/// the branch rectangle, so branch truncation may bite.
#[derive(Debug, Clone, Copy)]
pub struct CoverageGap {
    pub t: f64,
    pub outside_mass: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub profile: EeProfile,
    pub martingale: MartingaleReport,
    pub coverage: Vec<CoverageGap>,
}

const MARTINGALE_GATE: f64 = 1e-3;
const FORWARD_QUAD_TOL: f64 = 1e-9;

fn branch_integrand<'a>(
    v: &'a Surface,
    model: &'a SdeModel,
    density: &'a DensityModel,
    branch: &'a CurveBranch,
) -> impl Fn(f64) -> f64 + 'a {
    move |s: f64| {
        let l = branch.sample_at(s).expect("quadrature stays inside the branch interval");
        let sig = model.sigma.value(s, l);
        sig * sig * v.dx(s, l).abs() * density.value(s, l)
    }
}

/// Exposure profile by the forward representation: `EE(0)` plus half the
/// accumulated `sigma^2 |dV/dx| q` quadrature along each zero branch.
/// Nondecreasing by construction. Gated on the martingale diagnostic
/// unless `allow_non_martingale` is set.
pub fn ee_forward(
    model: &SdeModel,
    v: &Surface,
    branches: &BranchSet,
    density: &DensityModel,
    times: &[f64],
    allow_non_martingale: bool,
) -> Result<ForwardOutput, ForwardError> {
    assert!(!times.is_empty(), "need at least one evaluation time");
    assert!(
        times.windows(2).all(|w| w[0] < w[1]) && times[0] >= 0.0,
        "evaluation times must be strictly increasing and nonnegative"
    );
    let rect = &branches.rect;

    let mut max_sigma = 0.0f64;
    for it in 0..33 {
        let t = rect.t_lo + (rect.t_hi - rect.t_lo) * it as f64 / 32.0;
        for ix in 0..33 {
            let x = rect.x_lo + (rect.x_hi - rect.x_lo) * ix as f64 / 32.0;
            max_sigma = max_sigma.max(model.sigma.value(t, x).abs());
        }
    }
    if max_sigma == 0.0 {
        return Err(ForwardError::ZeroVolatility);
    }

    let martingale = martingale_diagnostic(model, v, rect, 33, 33);
    if martingale.relative > MARTINGALE_GATE && !allow_non_martingale {
        return Err(ForwardError::NotMartingale { relative: martingale.relative });
    }

    let ee0 = v.value(0.0, model.x0).max(0.0);
    let mut totals = vec![0.0f64; times.len()];
    for (k, branch) in branches.branches.iter().enumerate() {
        let g = branch_integrand(v, model, density, branch);
        let a = branch.t_a().max(0.0);
        let b = branch.t_b();
        let mut cum = 0.0;
        let mut prev = a;
        for (j, &tj) in times.iter().enumerate() {
            let hi = tj.min(b);
            if hi > prev {
                let seg = integrate_from_origin(&g, prev, hi, FORWARD_QUAD_TOL)
                    .into_value(1e-6)
                    .map_err(|source| ForwardError::Quadrature { branch: k, source })?;
                cum += seg.max(0.0);
                prev = hi;
            }
            totals[j] += cum;
        }
    }

    let values: Vec<f64> = totals.iter().map(|&s| ee0 + 0.5 * s).collect();
    let coverage: Vec<CoverageGap> = times
        .iter()
        .filter(|&&t| t > 0.0)
        .filter_map(|&t| {
            let outside = 1.0 - density.mass_inside(t, rect.x_lo, rect.x_hi);
            (outside > 0.01).then_some(CoverageGap { t, outside_mass: outside })
        })
        .collect();
    Ok(ForwardOutput {
        profile: EeProfile {
            times: times.to_vec(),
            values,
            stderr: Vec::new(),
            method: EeMethod::Forward,
        },
        martingale,
        coverage,
    })
}

/// Law of the default time on `[0, T]`; mass beyond `T` means no default.
#[derive(Debug, Clone)]
pub enum DefaultDistribution {
    /// Exponential(lambda) truncated at the horizon.
    Exponential { lambda: f64 },
    /// Uniform on `[0, T]`.
    Uniform,
    /// User-supplied CDF samples, linearly interpolated.
    CdfSamples { times: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("invalid default-time CDF: {reason}")]
pub struct InvalidCdf {
    pub reason: String,
}

/// Default-time model with loss factor `alpha`; discounting is identically
/// one and the default time is independent of the exposure.
#[derive(Debug, Clone)]
pub struct DefaultModel {
    pub distribution: DefaultDistribution,
    pub horizon: f64,
    pub alpha: f64,
}

impl DefaultModel {
    pub fn exponential(lambda: f64, horizon: f64) -> DefaultModel {
        assert!(lambda > 0.0 && horizon > 0.0, "positive rate and horizon");
        DefaultModel {
            distribution: DefaultDistribution::Exponential { lambda },
            horizon,
            alpha: 1.0,
        }
    }

    pub fn uniform(horizon: f64) -> DefaultModel {
        assert!(horizon > 0.0, "positive horizon");
        DefaultModel { distribution: DefaultDistribution::Uniform, horizon, alpha: 1.0 }
    }

    pub fn from_cdf_samples(
        times: Vec<f64>,
        values: Vec<f64>,
        horizon: f64,
    ) -> Result<DefaultModel, InvalidCdf> {
        let fail = |reason: &str| Err(InvalidCdf { reason: reason.to_string() });
        if times.len() != values.len() || times.len() < 2 {
            return fail("need at least two (time, cdf) samples");
        }
        if !times.windows(2).all(|w| w[0] < w[1]) {
            return fail("sample times must be strictly increasing");
        }
        if times[0] < 0.0 || *times.last().expect("nonempty") > horizon * (1.0 + 1e-12) {
            return fail("sample times must lie in [0, horizon]");
        }
        if !values.windows(2).all(|w| w[0] <= w[1]) {
            return fail("cdf values must be nondecreasing");
        }
        if values[0] < 0.0 || *values.last().expect("nonempty") > 1.0 {
            return fail("cdf values must lie in [0, 1]");
        }
        Ok(DefaultModel {
            distribution: DefaultDistribution::CdfSamples { times, values },
            horizon,
            alpha: 1.0,
        })
    }

    pub fn with_alpha(mut self, alpha: f64) -> DefaultModel {
        assert!(alpha >= 0.0 && alpha.is_finite(), "loss factor must be nonnegative");
        self.alpha = alpha;
        self
    }

    /// `P(tau <= t)` clamped to the horizon.
    pub fn cdf(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.horizon);
        match &self.distribution {
            DefaultDistribution::Exponential { lambda } => -(-lambda * t).exp_m1(),
            DefaultDistribution::Uniform => t / self.horizon,
            DefaultDistribution::CdfSamples { times, values } => {
                if t <= times[0] {
                    // Linear from the implicit origin (0, 0).
                    if times[0] <= 0.0 {
                        return values[0];
                    }
                    return values[0] * (t / times[0]);
                }
                let j = times.partition_point(|&tk| tk <= t) - 1;
                if j + 1 >= times.len() {
                    return *values.last().expect("nonempty");
                }
                let w = (t - times[j]) / (times[j + 1] - times[j]);
                values[j] * (1.0 - w) + values[j + 1] * w
            }
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum CvaError {
    #[error("EE grid has {points} points; the trapezoidal CVA integral needs at least 32")]
    GridTooCoarse { points: usize },
    #[error("EE grid spans [{lo}, {hi}] but the default model needs [0, {horizon}]")]
    HorizonNotCovered { lo: f64, hi: f64, horizon: f64 },
}

/// `CVA_0 = alpha int_0^T EE(t) dP_tau(t)` by the trapezoidal rule against
/// the CDF increments of the default time.
pub fn cva0(ee: &EeProfile, default: &DefaultModel) -> Result<f64, CvaError> {
    if ee.times.len() < 32 {
        return Err(CvaError::GridTooCoarse { points: ee.times.len() });
    }
    let lo = ee.times[0];
    let hi = *ee.times.last().expect("nonempty");
    let t_span = default.horizon;
    if lo > 1e-9 * t_span || hi < t_span * (1.0 - 1e-9) {
        return Err(CvaError::HorizonNotCovered { lo, hi, horizon: t_span });
    }
    let mut total = 0.0;
    for j in 0..ee.times.len() - 1 {
        let dp = default.cdf(ee.times[j + 1]) - default.cdf(ee.times[j]);
        total += 0.5 * (ee.values[j] + ee.values[j + 1]) * dp;
    }
    Ok(default.alpha * total)
}
