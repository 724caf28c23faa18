//! One-dimensional diffusion simulation: `dX = mu(t, X) dt + sigma(t, X) dW`.
//!
//! Paths are generated by Euler-Maruyama on a uniform grid, with normal
//! draws keyed by `(seed, step)` through the counter-based generator in
//! [`crate::rng`]. A path is a pure function of `(model, grid, seed)`, and
//! ensembles derive per-path seeds from a master seed, so results are
//! bit-identical regardless of how many workers execute them.
//!
//! Quadratic-variation increments are model-based, `q_i = sigma(t_i, x_i)^2
//! dt`, rather than squared path increments; this removes realized-variance
//! noise from every estimator downstream. GBM paths use the exact log-scheme
//! so positivity can never fail in density work.

use crate::expr::{BinOp, Expr, ParseError, Surface, Var};
use crate::rng;
use rayon::prelude::*;
use std::fmt;
use std::io::{Read, Write};

/// Uniform time grid on `[0, T]` with `n` steps and `dt = T / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathGrid {
    t_max: f64,
    n: usize,
}

impl PathGrid {
    /// Panics unless `t_max > 0` and `n >= 1`; callers validate user input.
    pub fn new(t_max: f64, n: usize) -> PathGrid {
        assert!(t_max > 0.0 && t_max.is_finite(), "horizon must be positive and finite");
        assert!(n >= 1, "grid needs at least one step");
        PathGrid { t_max, n }
    }

    #[inline]
    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t_max / self.n as f64
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    /// Number of step indices `i` with `t_i < t`, capped at `n`. Estimator
    /// sums over `t_i < t` all use this cut so they agree index for index.
    /// Times within 1e-9 (relative) of a node count as that node.
    pub fn steps_before(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let r = t / self.dt();
        let rounded = r.round();
        let k = if (r - rounded).abs() < 1e-9 * r.abs().max(1.0) {
            rounded as usize
        } else {
            r.ceil() as usize
        };
        k.min(self.n)
    }

    /// Nearest node index to `t`, clamped to the grid.
    pub fn index_at(&self, t: f64) -> usize {
        let i = (t / self.dt()).round();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.n)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    Brownian,
    ArithmeticBm { mu: f64, sigma: f64 },
    Gbm { mu: f64, sigma: f64 },
    Ou { kappa: f64, theta: f64, sigma: f64 },
    Custom,
}

/// Diffusion coefficients as surfaces in `(t, x)` plus the start point.
#[derive(Debug, Clone)]
pub struct SdeModel {
    pub preset: Preset,
    pub mu: Surface,
    pub sigma: Surface,
    pub x0: f64,
}

fn const_surface(c: f64) -> Surface {
    Surface::new(Expr::constant(c))
}

impl SdeModel {
    /// Standard Brownian motion started at 0.
    pub fn brownian() -> SdeModel {
        SdeModel {
            preset: Preset::Brownian,
            mu: const_surface(0.0),
            sigma: const_surface(1.0),
            x0: 0.0,
        }
    }

    /// `dX = mu dt + sigma dW`.
    pub fn arithmetic_bm(mu: f64, sigma: f64, x0: f64) -> SdeModel {
        SdeModel {
            preset: Preset::ArithmeticBm { mu, sigma },
            mu: const_surface(mu),
            sigma: const_surface(sigma),
            x0,
        }
    }

    /// `dX = mu X dt + sigma X dW`, simulated by the exact log-scheme.
    pub fn gbm(mu: f64, sigma: f64, x0: f64) -> SdeModel {
        assert!(x0 > 0.0, "gbm needs a positive start point");
        let x = Expr::variable(Var::X);
        SdeModel {
            preset: Preset::Gbm { mu, sigma },
            mu: Surface::new(Expr::binary(BinOp::Mul, Expr::constant(mu), x.clone())),
            sigma: Surface::new(Expr::binary(BinOp::Mul, Expr::constant(sigma), x)),
            x0,
        }
    }

    /// `dX = kappa (theta - X) dt + sigma dW`.
    pub fn ou(kappa: f64, theta: f64, sigma: f64, x0: f64) -> SdeModel {
        let drift = Expr::binary(
            BinOp::Mul,
            Expr::constant(kappa),
            Expr::binary(BinOp::Sub, Expr::constant(theta), Expr::variable(Var::X)),
        );
        SdeModel {
            preset: Preset::Ou { kappa, theta, sigma },
            mu: Surface::new(drift),
            sigma: const_surface(sigma),
            x0,
        }
    }

    pub fn custom(mu: Surface, sigma: Surface, x0: f64) -> SdeModel {
        SdeModel { preset: Preset::Custom, mu, sigma, x0 }
    }

    pub fn custom_from_sources(mu: &str, sigma: &str, x0: f64) -> Result<SdeModel, ParseError> {
        Ok(SdeModel::custom(Surface::parse(mu)?, Surface::parse(sigma)?, x0))
    }

    /// Short human-readable (and file-header) description of the dynamics.
    pub fn descriptor(&self) -> String {
        match self.preset {
            Preset::Brownian => format!("brownian(x0={})", self.x0),
            Preset::ArithmeticBm { mu, sigma } => {
                format!("arithmetic-bm(mu={mu},sigma={sigma},x0={})", self.x0)
            }
            Preset::Gbm { mu, sigma } => format!("gbm(mu={mu},sigma={sigma},x0={})", self.x0),
            Preset::Ou { kappa, theta, sigma } => {
                format!("ou(kappa={kappa},theta={theta},sigma={sigma},x0={})", self.x0)
            }
            Preset::Custom => {
                format!("custom(mu={},sigma={},x0={})", self.mu.v, self.sigma.v, self.x0)
            }
        }
    }
}

/// Simulation failure: the scheme produced a non-finite value.
#[derive(Debug, Clone, Copy)]
pub struct SimError {
    pub step: usize,
    pub value: f64,
    pub path_index: Option<usize>,
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "simulation aborted at step {}: non-finite value {}", self.step, self.value)?;
        if let Some(i) = self.path_index {
            write!(f, " (path {i})")?;
        }
        Ok(())
    }
}

impl std::error::Error for SimError {}

/// One simulated path with its increment decomposition.
#[derive(Debug, Clone)]
pub struct SdePath {
    pub grid: PathGrid,
    pub seed: u64,
    /// `x_i`, length `n + 1`.
    pub values: Vec<f64>,
    /// `dx_i = x_{i+1} - x_i`, length `n`.
    pub increments: Vec<f64>,
    /// `q_i = sigma(t_i, x_i)^2 dt`, length `n`.
    pub qv: Vec<f64>,
    /// `a_i = mu(t_i, x_i) dt`, length `n`.
    pub drift: Vec<f64>,
}

#[derive(Debug, Clone, Copy, thiserror::Error)]
#[error("time {t} outside the path horizon [0, {t_max}]")]
pub struct TimeOutOfRange {
    pub t: f64,
    pub t_max: f64,
}

impl SdePath {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.grid.n()).map(|i| self.grid.time(i))
    }

    pub fn check_time(&self, t: f64) -> Result<(), TimeOutOfRange> {
        if (0.0..=self.grid.t_max() * (1.0 + 1e-12)).contains(&t) {
            Ok(())
        } else {
            Err(TimeOutOfRange { t, t_max: self.grid.t_max() })
        }
    }
}

/// Cumulative model-sigma quadratic variation `sum_{t_i < t} q_i`.
pub fn quadratic_variation(path: &SdePath, t: f64) -> Result<f64, TimeOutOfRange> {
    path.check_time(t)?;
    let k = path.grid.steps_before(t);
    Ok(path.qv[..k].iter().sum())
}

/// Simulates one path of `model` on `grid` with the given seed.
pub fn simulate(model: &SdeModel, grid: PathGrid, seed: u64) -> Result<SdePath, SimError> {
    let n = grid.n();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut values = Vec::with_capacity(n + 1);
    let mut increments = Vec::with_capacity(n);
    let mut qv = Vec::with_capacity(n);
    let mut drift = Vec::with_capacity(n);
    let mut x = model.x0;
    values.push(x);

    let fail = |step: usize, value: f64| SimError { step, value, path_index: None };

    if let Preset::Gbm { mu, sigma } = model.preset {
        let log_drift = (mu - 0.5 * sigma * sigma) * dt;
        let vol = sigma * sqrt_dt;
        for i in 0..n {
            let z = rng::standard_normal(seed, i as u64);
            let next = x * (log_drift + vol * z).exp();
            let s = sigma * x;
            let q = s * s * dt;
            if !next.is_finite() || !q.is_finite() {
                return Err(fail(i, if next.is_finite() { q } else { next }));
            }
            increments.push(next - x);
            qv.push(q);
            drift.push(mu * x * dt);
            values.push(next);
            x = next;
        }
    } else {
        for i in 0..n {
            let t = grid.time(i);
            let m = model.mu.value(t, x);
            let s = model.sigma.value(t, x);
            let z = rng::standard_normal(seed, i as u64);
            let next = x + m * dt + s * sqrt_dt * z;
            let q = s * s * dt;
            if !next.is_finite() || !q.is_finite() {
                return Err(fail(i, if next.is_finite() { q } else { next }));
            }
            increments.push(next - x);
            qv.push(q);
            drift.push(m * dt);
            values.push(next);
            x = next;
        }
    }

    Ok(SdePath { grid, seed, values, increments, qv, drift })
}

/// An ensemble description: `npaths` paths of `model` on `grid`, path `i`
/// seeded with `mix(master_seed, i)`.
#[derive(Debug, Clone, Copy)]
pub struct Ensemble<'m> {
    pub model: &'m SdeModel,
    pub grid: PathGrid,
    pub npaths: usize,
    pub master_seed: u64,
}

/// Fixed fold-chunk size. Parallel reductions fold this many paths per
/// partial and then combine partials in index order, so the floating-point
/// result does not depend on the worker count.
const FOLD_CHUNK: usize = 32;

impl<'m> Ensemble<'m> {
    pub fn new(
        model: &'m SdeModel,
        grid: PathGrid,
        npaths: usize,
        master_seed: u64,
    ) -> Ensemble<'m> {
        assert!(npaths >= 1, "ensemble needs at least one path");
        Ensemble { model, grid, npaths, master_seed }
    }

    #[inline]
    pub fn path_seed(&self, i: usize) -> u64 {
        rng::path_seed(self.master_seed, i as u64)
    }

    pub fn simulate_path(&self, i: usize) -> Result<SdePath, SimError> {
        simulate(self.model, self.grid, self.path_seed(i)).map_err(|mut e| {
            e.path_index = Some(i);
            e
        })
    }

    /// Applies `f` to every path in parallel; results come back in path
    /// order regardless of scheduling.
    pub fn map<R, F>(&self, f: F) -> Result<Vec<R>, SimError>
    where
        R: Send,
        F: Fn(&SdePath) -> R + Sync,
    {
        (0..self.npaths).into_par_iter().map(|i| self.simulate_path(i).map(|p| f(&p))).collect()
    }

    /// Serial variant for timing-sensitive callers.
    pub fn map_serial<R, F>(&self, mut f: F) -> Result<Vec<R>, SimError>
    where
        F: FnMut(&SdePath) -> R,
    {
        (0..self.npaths).map(|i| self.simulate_path(i).map(|p| f(&p))).collect()
    }

    /// Parallel fold with deterministic floating-point results: paths are
    /// folded in fixed-size chunks and the chunk partials combined in index
    /// order.
    pub fn fold_paths<A, I, F, C>(&self, init: I, fold: F, combine: C) -> Result<A, SimError>
    where
        A: Send,
        I: Fn() -> A + Sync,
        F: Fn(A, &SdePath) -> A + Sync,
        C: Fn(A, A) -> A,
    {
        let nchunks = self.npaths.div_ceil(FOLD_CHUNK);
        let partials: Result<Vec<A>, SimError> = (0..nchunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * FOLD_CHUNK;
                let hi = ((c + 1) * FOLD_CHUNK).min(self.npaths);
                let mut acc = init();
                for i in lo..hi {
                    acc = fold(acc, &self.simulate_path(i)?);
                }
                Ok(acc)
            })
            .collect();
        Ok(partials?.into_iter().reduce(combine).expect("npaths >= 1"))
    }

    /// Sample standard deviation of `x_n` across the ensemble. Used for the
    /// default window-width rule.
    pub fn sd_at_horizon(&self) -> Result<f64, SimError> {
        let finals = self.map(|p| *p.values.last().expect("non-empty path"))?;
        Ok(crate::stats::std_dev(&finals))
    }

    pub fn materialize(&self) -> Result<Vec<SdePath>, SimError> {
        self.map(|p| p.clone())
    }
}

/// Index-ordered parallel simulation of a whole ensemble.
pub fn simulate_ensemble(
    model: &SdeModel,
    grid: PathGrid,
    npaths: usize,
    master_seed: u64,
) -> Result<Vec<SdePath>, SimError> {
    Ensemble::new(model, grid, npaths, master_seed).materialize()
}

pub const ENSEMBLE_MAGIC: [u8; 4] = *b"SLTE";
pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum EnsembleIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("malformed ensemble file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleHeader {
    pub descriptor: String,
    pub t_max: f64,
    pub n: usize,
    pub npaths: usize,
    pub master_seed: u64,
}

/// Writes header (magic, version, model descriptor, grid, npaths, seed)
/// followed by each path's `x_i` as little-endian f64, in path order.
pub fn write_ensemble<W: Write>(w: &mut W, ens: &Ensemble) -> Result<(), EnsembleIoError> {
    let desc = ens.model.descriptor();
    w.write_all(&ENSEMBLE_MAGIC)?;
    w.write_all(&ENSEMBLE_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(desc.len() as u32).to_le_bytes())?;
    w.write_all(desc.as_bytes())?;
    w.write_all(&ens.grid.t_max().to_le_bytes())?;
    w.write_all(&(ens.grid.n() as u64).to_le_bytes())?;
    w.write_all(&(ens.npaths as u64).to_le_bytes())?;
    w.write_all(&ens.master_seed.to_le_bytes())?;
    for i in 0..ens.npaths {
        let path = ens.simulate_path(i)?;
        let mut buf = Vec::with_capacity(path.values.len() * 8);
        for v in &path.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_ensemble<R: Read>(
    r: &mut R,
) -> Result<(EnsembleHeader, Vec<Vec<f64>>), EnsembleIoError> {
    fn read_exact_buf<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>, EnsembleIoError> {
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        Ok(buf)
    }
    fn u32_le(b: &[u8]) -> u32 {
        u32::from_le_bytes(b.try_into().expect("4 bytes"))
    }
    fn u64_le(b: &[u8]) -> u64 {
        u64::from_le_bytes(b.try_into().expect("8 bytes"))
    }

    let magic = read_exact_buf(r, 4)?;
    if magic != ENSEMBLE_MAGIC {
        return Err(EnsembleIoError::Format("bad magic".into()));
    }
    let version = u32_le(&read_exact_buf(r, 4)?);
    if version != ENSEMBLE_FORMAT_VERSION {
        return Err(EnsembleIoError::Format(format!("unsupported version {version}")));
    }
    let desc_len = u32_le(&read_exact_buf(r, 4)?) as usize;
    if desc_len > 1 << 20 {
        return Err(EnsembleIoError::Format("descriptor too long".into()));
    }
    let descriptor = String::from_utf8(read_exact_buf(r, desc_len)?)
        .map_err(|_| EnsembleIoError::Format("descriptor is not UTF-8".into()))?;
    let t_max = f64::from_le_bytes(read_exact_buf(r, 8)?.as_slice().try_into().expect("8 bytes"));
    let n = u64_le(&read_exact_buf(r, 8)?) as usize;
    let npaths = u64_le(&read_exact_buf(r, 8)?) as usize;
    let master_seed = u64_le(&read_exact_buf(r, 8)?);
    if !(t_max > 0.0) || n == 0 || npaths == 0 || n > 1 << 32 || npaths > 1 << 32 {
        return Err(EnsembleIoError::Format("implausible header".into()));
    }
    let mut paths = Vec::with_capacity(npaths);
    for _ in 0..npaths {
        let buf = read_exact_buf(r, (n + 1) * 8)?;
        let mut values = Vec::with_capacity(n + 1);
        for chunk in buf.chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
        }
        paths.push(values);
    }
    Ok((EnsembleHeader { descriptor, t_max, n, npaths, master_seed }, paths))
}

/// CSV export with columns `path_index,t,x`.
pub fn write_ensemble_csv<W: Write>(w: &mut W, ens: &Ensemble) -> Result<(), EnsembleIoError> {
    writeln!(w, "path_index,t,x")?;
    for i in 0..ens.npaths {
        let path = ens.simulate_path(i)?;
        let mut block = String::new();
        for (j, v) in path.values.iter().enumerate() {
            block.push_str(&format!("{i},{},{v}\n", path.grid.time(j)));
        }
        w.write_all(block.as_bytes())?;
    }
    Ok(())
}
