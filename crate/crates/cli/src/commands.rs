//! Command implementations. Each command reads one config file, writes its
//! outputs under one directory, and records a manifest so a run can be
//! replayed and diffed byte for byte.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use slt_core::change_of_variable::verify;
use slt_core::exposure::{cva0, ee_forward, ee_mc, DensityError, EeProfile};
use slt_core::level_curves::extract_branches;
use slt_core::local_time::{occupation_local_time, tanaka_local_time};
use slt_core::sde::{write_ensemble, write_ensemble_csv, EnsembleIoError, SimError};
use slt_core::{
    BranchSet, CvfSettings, DefaultDistribution, DefaultModel, DensityModel, DvxSign, Ensemble,
    LevelSpec, PathGrid, Preset, Rect, SdeModel, Side, Surface,
};

use crate::config::{Config, ConfigError};

/// Bundled surfaces selectable by name in the `[surface]` section.
const FIXTURES: &[(&str, &str)] = &[
    ("identity", "x"),
    ("paper-example-1", "x^2 - t"),
    ("paper-example-2", "(t - 1)^2*x^2 - 1"),
    ("paper-example-3", "x^2 - 1"),
];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures; verification
    /// outcomes are returned as exit codes, not errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> CliError {
        CliError::Numerical(e.to_string())
    }
}

impl From<EnsembleIoError> for CliError {
    fn from(e: EnsembleIoError) -> CliError {
        match e {
            EnsembleIoError::Io(io) => CliError::Io(io),
            EnsembleIoError::Sim(sim) => CliError::Numerical(sim.to_string()),
            EnsembleIoError::Format(msg) => CliError::Usage(msg),
        }
    }
}

pub struct Ctx {
    pub cfg: Config,
    pub out: PathBuf,
    pub seed_override: Option<u64>,
}

impl Ctx {
    fn master_seed(&self) -> Result<u64, CliError> {
        match self.seed_override {
            Some(s) => Ok(s),
            None => Ok(self.cfg.u64_or("ensemble", "master_seed", 42)?),
        }
    }

    fn npaths(&self) -> Result<usize, CliError> {
        let n = self.cfg.usize_or("ensemble", "npaths", 1000)?;
        if n == 0 {
            return Err(self
                .cfg
                .error_at("ensemble", "npaths", "need at least one path".into())
                .into());
        }
        Ok(n)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }
}

fn build_grid(cfg: &Config) -> Result<PathGrid, CliError> {
    let t = cfg.f64_or("grid", "t", 1.0)?;
    if !(t.is_finite() && t > 0.0) {
        return Err(cfg.error_at("grid", "t", format!("horizon {t} must be positive")).into());
    }
    let n = cfg.usize_or("grid", "n", 4096)?;
    if n == 0 {
        return Err(cfg.error_at("grid", "n", "need at least one step".into()).into());
    }
    Ok(PathGrid::new(t, n))
}

fn model_param(cfg: &Config, key: &str, default: f64) -> Result<f64, CliError> {
    let v = cfg.f64_or("model", key, default)?;
    if !v.is_finite() {
        return Err(cfg.error_at("model", key, format!("`{key}` must be finite")).into());
    }
    Ok(v)
}

/// Rejects parameters that the chosen preset does not read, so a stray
/// `kappa` under gbm fails loudly instead of silently doing nothing.
fn reject_foreign_params(cfg: &Config, preset: &str, allowed: &[&str]) -> Result<(), CliError> {
    for key in ["mu", "sigma", "kappa", "theta", "x0", "mu_expr", "sigma_expr"] {
        if !allowed.contains(&key) && cfg.str_val("model", key).is_some() {
            return Err(cfg
                .error_at("model", key, format!("`{key}` does not apply to the `{preset}` preset"))
                .into());
        }
    }
    Ok(())
}

fn build_model(cfg: &Config) -> Result<SdeModel, CliError> {
    let preset = cfg.str_val("model", "preset").unwrap_or("brownian");
    match preset {
        "brownian" => {
            reject_foreign_params(cfg, preset, &[])?;
            Ok(SdeModel::brownian())
        }
        "arithmetic-bm" => {
            reject_foreign_params(cfg, preset, &["mu", "sigma", "x0"])?;
            let sigma = model_param(cfg, "sigma", 1.0)?;
            if sigma < 0.0 {
                return Err(cfg
                    .error_at("model", "sigma", "volatility must be nonnegative".into())
                    .into());
            }
            Ok(SdeModel::arithmetic_bm(
                model_param(cfg, "mu", 0.0)?,
                sigma,
                model_param(cfg, "x0", 0.0)?,
            ))
        }
        "gbm" => {
            reject_foreign_params(cfg, preset, &["mu", "sigma", "x0"])?;
            let sigma = model_param(cfg, "sigma", 0.2)?;
            let x0 = model_param(cfg, "x0", 1.0)?;
            if sigma < 0.0 {
                return Err(cfg
                    .error_at("model", "sigma", "volatility must be nonnegative".into())
                    .into());
            }
            if x0 <= 0.0 {
                return Err(cfg
                    .error_at("model", "x0", "gbm starts strictly positive".into())
                    .into());
            }
            Ok(SdeModel::gbm(model_param(cfg, "mu", 0.0)?, sigma, x0))
        }
        "ou" => {
            reject_foreign_params(cfg, preset, &["kappa", "theta", "sigma", "x0"])?;
            let kappa = model_param(cfg, "kappa", 1.0)?;
            let sigma = model_param(cfg, "sigma", 1.0)?;
            if kappa < 0.0 {
                return Err(cfg
                    .error_at("model", "kappa", "mean reversion must be nonnegative".into())
                    .into());
            }
            if sigma < 0.0 {
                return Err(cfg
                    .error_at("model", "sigma", "volatility must be nonnegative".into())
                    .into());
            }
            Ok(SdeModel::ou(
                kappa,
                model_param(cfg, "theta", 0.0)?,
                sigma,
                model_param(cfg, "x0", 0.0)?,
            ))
        }
        "custom" => {
            reject_foreign_params(cfg, preset, &["mu_expr", "sigma_expr", "x0"])?;
            let mu_src = cfg.require("model", "mu_expr")?;
            let sigma_src = cfg.require("model", "sigma_expr")?;
            let mu = Surface::parse(mu_src)
                .map_err(|e| cfg.error_at("model", "mu_expr", e.to_string()))?;
            let sigma = Surface::parse(sigma_src)
                .map_err(|e| cfg.error_at("model", "sigma_expr", e.to_string()))?;
            Ok(SdeModel::custom(mu, sigma, model_param(cfg, "x0", 0.0)?))
        }
        other => Err(cfg
            .error_at(
                "model",
                "preset",
                format!("unknown preset `{other}` (brownian, arithmetic-bm, gbm, ou, custom)"),
            )
            .into()),
    }
}

fn build_surface(cfg: &Config) -> Result<Surface, CliError> {
    match (cfg.str_val("surface", "v"), cfg.str_val("surface", "fixture")) {
        (Some(_), Some(_)) => Err(cfg
            .error_at("surface", "fixture", "give either `v` or `fixture`, not both".into())
            .into()),
        (Some(src), None) => {
            Surface::parse(src).map_err(|e| cfg.error_at("surface", "v", e.to_string()).into())
        }
        (None, Some(name)) => {
            let Some(&(_, src)) = FIXTURES.iter().find(|&&(n, _)| n == name) else {
                let known: Vec<&str> = FIXTURES.iter().map(|&(n, _)| n).collect();
                return Err(cfg
                    .error_at(
                        "surface",
                        "fixture",
                        format!("unknown fixture `{name}` (known: {})", known.join(", ")),
                    )
                    .into());
            };
            Ok(Surface::parse(src).expect("fixtures parse"))
        }
        (None, None) => Err(CliError::Config(cfg.error_at("surface", "v", String::new()))),
    }
}

/// Branch rectangle: explicit `rect = t_lo t_hi x_lo x_hi`, or the span of
/// the grid times a 4-standard-deviation band around the start value.
fn build_rect(cfg: &Config, ens: &Ensemble, model: &SdeModel) -> Result<Rect, CliError> {
    if let Some(vals) = cfg.f64_list("estimator", "rect")? {
        if vals.len() != 4 {
            return Err(cfg
                .error_at("estimator", "rect", "expected `t_lo t_hi x_lo x_hi`".into())
                .into());
        }
        let (t_lo, t_hi, x_lo, x_hi) = (vals[0], vals[1], vals[2], vals[3]);
        if !(t_lo < t_hi && x_lo < x_hi) {
            return Err(cfg
                .error_at("estimator", "rect", "rectangle bounds must be ordered".into())
                .into());
        }
        return Ok(Rect::new(t_lo, t_hi, x_lo, x_hi));
    }
    let sd = ens.sd_at_horizon()?;
    let half = if sd > 0.0 { 4.0 * sd } else { 1.0 };
    Ok(Rect::new(0.0, ens.grid.t_max(), model.x0 - half, model.x0 + half))
}

fn build_cvf_settings(cfg: &Config, rect: Rect) -> Result<CvfSettings, CliError> {
    let mut s = CvfSettings::new(rect);
    if let Some(eps) = cfg.f64_val("estimator", "epsilon")? {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(cfg
                .error_at("estimator", "epsilon", "window must be positive".into())
                .into());
        }
        s.eps = Some(eps);
    }
    s.n_seed_times = cfg.usize_or("estimator", "n_seed_times", s.n_seed_times)?;
    s.nx = cfg.usize_or("estimator", "nx", s.nx)?;
    if s.n_seed_times == 0 || s.nx < 2 {
        let key = if s.nx < 2 { "nx" } else { "n_seed_times" };
        return Err(cfg.error_at("estimator", key, "seeding grid is too small".into()).into());
    }
    s.tolerance = cfg.f64_or("estimator", "tolerance", s.tolerance)?;
    if !(s.tolerance.is_finite() && s.tolerance > 0.0) {
        return Err(cfg
            .error_at("estimator", "tolerance", "tolerance must be positive".into())
            .into());
    }
    s.trace.h = cfg.f64_or("estimator", "trace_step", s.trace.h)?;
    if !(s.trace.h.is_finite() && s.trace.h > 0.0) {
        return Err(cfg.error_at("estimator", "trace_step", "step must be positive".into()).into());
    }
    s.trace.max_newton_iters =
        cfg.usize_or("estimator", "newton_iters", s.trace.max_newton_iters)?;
    Ok(s)
}

fn parse_side(cfg: &Config) -> Result<Side, CliError> {
    match cfg.str_val("estimator", "side").unwrap_or("right") {
        "right" => Ok(Side::Right),
        "left" => Ok(Side::Left),
        "symmetric" => Ok(Side::Symmetric),
        other => Err(cfg
            .error_at(
                "estimator",
                "side",
                format!("unknown side `{other}` (right, left, symmetric)"),
            )
            .into()),
    }
}

/// Evaluation times: an explicit list, or `ntimes` even intervals covering
/// `[0, T]` endpoint to endpoint.
fn build_times(cfg: &Config, t_max: f64, default_n: usize) -> Result<Vec<f64>, CliError> {
    if let Some(times) = cfg.f64_list("exposure", "times")? {
        let ordered = times.windows(2).all(|w| w[0] < w[1]);
        if times.is_empty()
            || !ordered
            || times[0] < 0.0
            || times[times.len() - 1] > t_max * (1.0 + 1e-12)
        {
            return Err(cfg
                .error_at(
                    "exposure",
                    "times",
                    format!("times must increase strictly within [0, {t_max}]"),
                )
                .into());
        }
        return Ok(times);
    }
    let k = cfg.usize_or("exposure", "ntimes", default_n)?;
    if k == 0 {
        return Err(cfg.error_at("exposure", "ntimes", "need at least one interval".into()).into());
    }
    Ok((0..=k).map(|j| t_max * j as f64 / k as f64).collect())
}

fn build_default_model(cfg: &Config, t_max: f64) -> Result<DefaultModel, CliError> {
    let model = match cfg.str_val("exposure", "default").unwrap_or("exponential") {
        "exponential" => {
            let lambda = cfg.f64_or("exposure", "lambda", 1.0)?;
            if !(lambda.is_finite() && lambda > 0.0) {
                return Err(cfg
                    .error_at("exposure", "lambda", "rate must be positive".into())
                    .into());
            }
            DefaultModel::exponential(lambda, t_max)
        }
        "uniform" => DefaultModel::uniform(t_max),
        "cdf" => {
            let path = cfg.require("exposure", "cdf_file")?;
            let text = fs::read_to_string(path).map_err(|e| {
                cfg.error_at("exposure", "cdf_file", format!("cannot read `{path}`: {e}"))
            })?;
            let mut times = Vec::new();
            let mut values = Vec::new();
            for line in text.lines().map(str::trim) {
                if line.is_empty() || line.starts_with('#') || line.starts_with("t,") {
                    continue;
                }
                let parts: Vec<&str> = line.split(',').map(str::trim).collect();
                let parsed = (parts.len() == 2)
                    .then(|| Some((parts[0].parse::<f64>().ok()?, parts[1].parse::<f64>().ok()?)))
                    .flatten();
                let Some((t, p)) = parsed else {
                    return Err(cfg
                        .error_at("exposure", "cdf_file", format!("bad cdf row `{line}`"))
                        .into());
                };
                times.push(t);
                values.push(p);
            }
            DefaultModel::from_cdf_samples(times, values, t_max)
                .map_err(|e| cfg.error_at("exposure", "cdf_file", e.to_string()))?
        }
        other => {
            return Err(cfg
                .error_at(
                    "exposure",
                    "default",
                    format!("unknown default model `{other}` (exponential, uniform, cdf)"),
                )
                .into())
        }
    };
    let alpha = cfg.f64_or("exposure", "alpha", 1.0)?;
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(cfg
            .error_at("exposure", "alpha", "loss fraction must be nonnegative".into())
            .into());
    }
    Ok(model.with_alpha(alpha))
}

fn build_density(ctx: &Ctx, model: &SdeModel, grid: PathGrid) -> Result<DensityModel, CliError> {
    let cfg = &ctx.cfg;
    let choice = cfg.str_val("exposure", "density").unwrap_or("auto");
    let kde = |ctx: &Ctx| -> Result<DensityModel, CliError> {
        let slices = cfg.usize_or("exposure", "density_times", 32)?;
        if slices == 0 || slices > grid.n() {
            return Err(cfg
                .error_at("exposure", "density_times", format!("need 1..={} slices", grid.n()))
                .into());
        }
        let npaths = ctx.npaths()?.max(2);
        DensityModel::kde(model, grid, npaths, ctx.master_seed()?, slices)
            .map_err(|e| CliError::Numerical(e.to_string()))
    };
    match choice {
        "closed-form" => DensityModel::closed_form(model).map_err(|e| match e {
            DensityError::CustomModel => CliError::Config(cfg.error_at(
                "exposure",
                "density",
                "custom dynamics have no closed-form marginal; set `density = kde`".into(),
            )),
            other => CliError::Numerical(other.to_string()),
        }),
        "kde" => kde(ctx),
        "auto" => match model.preset {
            Preset::Custom => kde(ctx),
            _ => DensityModel::closed_form(model).map_err(|e| CliError::Numerical(e.to_string())),
        },
        other => Err(cfg
            .error_at(
                "exposure",
                "density",
                format!("unknown density source `{other}` (auto, closed-form, kde)"),
            )
            .into()),
    }
}

/// Written at the end of every successful command. Contains no timestamps,
/// so identical runs produce identical bytes.
fn write_manifest(
    ctx: &Ctx,
    command: &str,
    model: &SdeModel,
    grid: PathGrid,
    extra: &[(&str, String)],
) -> Result<String, CliError> {
    let npaths = ctx.npaths()?;
    let master_seed = ctx.master_seed()?;
    let mut text = String::new();
    text.push_str(&format!("tool = slt {}\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("command = {command}\n"));
    text.push_str(&format!("config = {}\n", ctx.cfg.path.display()));
    text.push_str(&format!("config_hash = {:016x}\n", ctx.cfg.hash()));
    text.push_str(&format!("model = {}\n", model.descriptor()));
    text.push_str(&format!("grid_t = {}\n", grid.t_max()));
    text.push_str(&format!("grid_n = {}\n", grid.n()));
    text.push_str(&format!("npaths = {npaths}\n"));
    text.push_str(&format!("master_seed = {master_seed}\n"));
    for (k, v) in extra {
        text.push_str(&format!("{k} = {v}\n"));
    }
    if npaths <= 32 {
        let ens = Ensemble::new(model, grid, npaths, master_seed);
        for i in 0..npaths {
            text.push_str(&format!("seed[{i}] = {}\n", ens.path_seed(i)));
        }
    }
    fs::write(ctx.out.join("manifest.txt"), &text)?;
    Ok(text)
}

pub fn cmd_simulate(ctx: &Ctx) -> Result<i32, CliError> {
    let model = build_model(&ctx.cfg)?;
    let grid = build_grid(&ctx.cfg)?;
    let ens = Ensemble::new(&model, grid, ctx.npaths()?, ctx.master_seed()?);

    let mut bin = ctx.create("ensemble.bin")?;
    write_ensemble(&mut bin, &ens)?;
    bin.flush()?;
    if ctx.cfg.bool_or("output", "csv", false)? {
        let mut csv = ctx.create("paths.csv")?;
        write_ensemble_csv(&mut csv, &ens)?;
        csv.flush()?;
    }

    let manifest = write_manifest(ctx, "simulate", &model, grid, &[])?;
    print!("{manifest}");
    Ok(0)
}

pub fn cmd_localtime(ctx: &Ctx) -> Result<i32, CliError> {
    let cfg = &ctx.cfg;
    let model = build_model(cfg)?;
    let grid = build_grid(cfg)?;
    let ens = Ensemble::new(&model, grid, ctx.npaths()?, ctx.master_seed()?);

    let kind = cfg.str_val("estimator", "kind").unwrap_or("occupation");
    let level = cfg.f64_or("estimator", "level", 0.0)?;
    let side = parse_side(cfg)?;
    let eps = match cfg.f64_val("estimator", "epsilon")? {
        Some(e) => e,
        None => 0.02 * ens.sd_at_horizon()?,
    };

    let n = grid.n();
    // One pass over the ensemble: summed process plus per-path finals, in
    // path order so the reduction is independent of the worker count.
    type Acc = (Vec<f64>, Vec<f64>);
    let fold_with = |proc_of: &(dyn Fn(&slt_core::sde::SdePath) -> slt_core::LocalTimeProcess
                           + Sync)| {
        ens.fold_paths(
            || (vec![0.0; n + 1], Vec::new()),
            |mut acc: Acc, path| {
                let lt = proc_of(path);
                for (s, v) in acc.0.iter_mut().zip(lt.values()) {
                    *s += v;
                }
                acc.1.push(lt.final_value());
                acc
            },
            |mut a: Acc, b: Acc| {
                for (s, v) in a.0.iter_mut().zip(&b.0) {
                    *s += v;
                }
                a.1.extend_from_slice(&b.1);
                a
            },
        )
    };

    let (sums, finals, clip_note) = match kind {
        "occupation" => {
            let spec = LevelSpec::new(level, eps, side)
                .map_err(|e| cfg.error_at("estimator", "epsilon", e.to_string()))?;
            let (sums, finals) = fold_with(&|p| occupation_local_time(p, &spec))?;
            (sums, finals, None)
        }
        "tanaka" => {
            let (acc, clips) = ens.fold_paths(
                || ((vec![0.0; n + 1], Vec::new()), 0.0),
                |(mut acc, clip): (Acc, f64), path| {
                    let est = tanaka_local_time(path, level);
                    for (s, v) in acc.0.iter_mut().zip(est.process.values()) {
                        *s += v;
                    }
                    acc.1.push(est.process.final_value());
                    (acc, clip + est.clip.total)
                },
                |(mut a, ca), (b, cb)| {
                    for (s, v) in a.0.iter_mut().zip(&b.0) {
                        *s += v;
                    }
                    a.1.extend_from_slice(&b.1);
                    (a, ca + cb)
                },
            )?;
            (acc.0, acc.1, Some(clips / ens.npaths as f64))
        }
        other => {
            return Err(cfg
                .error_at(
                    "estimator",
                    "kind",
                    format!("unknown estimator `{other}` (occupation, tanaka)"),
                )
                .into())
        }
    };

    let inv_n = 1.0 / ens.npaths as f64;
    let mut csv = ctx.create("localtime.csv")?;
    writeln!(csv, "t,local_time")?;
    for (i, s) in sums.iter().enumerate() {
        writeln!(csv, "{},{}", grid.time(i), s * inv_n)?;
    }
    csv.flush()?;

    let mut summary = String::new();
    summary.push_str(&format!("estimator = {kind}\n"));
    summary.push_str(&format!("level = {level}\n"));
    if kind == "occupation" {
        summary.push_str(&format!("epsilon = {eps}\n"));
        summary
            .push_str(&format!("side = {}\n", cfg.str_val("estimator", "side").unwrap_or("right")));
    }
    summary.push_str(&format!("mean_at_horizon = {}\n", slt_core::stats::mean(&finals)));
    summary.push_str(&format!("standard_error = {}\n", slt_core::stats::standard_error(&finals)));
    if let Some(clip) = clip_note {
        summary.push_str(&format!("mean_clip_total = {clip}\n"));
    }
    fs::write(ctx.out.join("localtime_summary.txt"), &summary)?;
    print!("{summary}");

    write_manifest(ctx, "localtime", &model, grid, &[])?;
    Ok(0)
}

fn extract_from_config(ctx: &Ctx) -> Result<(SdeModel, PathGrid, Surface, BranchSet), CliError> {
    let cfg = &ctx.cfg;
    let model = build_model(cfg)?;
    let grid = build_grid(cfg)?;
    let v = build_surface(cfg)?;
    let ens = Ensemble::new(&model, grid, ctx.npaths()?, ctx.master_seed()?);
    let rect = build_rect(cfg, &ens, &model)?;
    let settings = build_cvf_settings(cfg, rect)?;
    let branches = extract_branches(
        &v,
        &settings.rect,
        settings.n_seed_times,
        settings.nx,
        &settings.thresholds,
        &settings.trace,
    );
    Ok((model, grid, v, branches))
}

pub fn cmd_branches(ctx: &Ctx) -> Result<i32, CliError> {
    let (model, grid, _, branches) = extract_from_config(ctx)?;

    let mut csv = ctx.create("branches.csv")?;
    branches.write_csv(&mut csv)?;
    csv.flush()?;

    println!("branches = {}", branches.branches.len());
    for (k, b) in branches.branches.iter().enumerate() {
        let sign = match b.dvx_sign {
            DvxSign::Plus => "+",
            DvxSign::Minus => "-",
        };
        println!(
            "branch {k}: t in [{}, {}], dvx {sign}, ends {}/{}",
            b.t_a(),
            b.t_b(),
            b.left_reason.name(),
            b.right_reason.name()
        );
    }
    if !branches.failures.is_empty() {
        eprintln!("warning: {} seeds failed to grow into branches", branches.failures.len());
    }

    write_manifest(
        ctx,
        "branches",
        &model,
        grid,
        &[("branch_count", branches.branches.len().to_string())],
    )?;
    Ok(0)
}

pub fn cmd_verify_cvf(ctx: &Ctx) -> Result<i32, CliError> {
    let cfg = &ctx.cfg;
    let model = build_model(cfg)?;
    let grid = build_grid(cfg)?;
    let v = build_surface(cfg)?;
    let ens = Ensemble::new(&model, grid, ctx.npaths()?, ctx.master_seed()?);
    let rect = build_rect(cfg, &ens, &model)?;
    let settings = build_cvf_settings(cfg, rect)?;

    let z = cfg.f64_or("estimator", "z", 0.0)?;
    let horizon = cfg.f64_or("estimator", "horizon", grid.t_max())?;
    if !(horizon > 0.0 && horizon <= grid.t_max() * (1.0 + 1e-12)) {
        return Err(cfg
            .error_at("estimator", "horizon", format!("horizon must lie in (0, {}]", grid.t_max()))
            .into());
    }

    let report = verify(&ens, &v, z, horizon, &settings)?;

    let mut out = ctx.create("cvf_report.txt")?;
    report.write_report(&mut out)?;
    out.flush()?;
    let mut pairs = ctx.create("cvf_pairs.csv")?;
    report.write_pairs_csv(&mut pairs)?;
    pairs.flush()?;

    println!("branches = {}", report.branch_count);
    println!("eps = {}", report.eps);
    println!("lhs_mean = {}", report.mean_lhs);
    println!("rhs_mean = {}", report.mean_rhs);
    println!("gap = {}", report.gap);
    println!("correlation = {}", report.correlation);
    println!("verdict: {}", if report.pass { "PASS" } else { "FAIL" });
    if report.low_coverage_paths > 0 {
        eprintln!(
            "warning: {} paths spent over 1% of their steps outside the rectangle",
            report.low_coverage_paths
        );
    }

    write_manifest(
        ctx,
        "verify-cvf",
        &model,
        grid,
        &[("gap", report.gap.to_string()), ("pass", report.pass.to_string())],
    )?;
    Ok(if report.pass { 0 } else { 1 })
}

fn forward_profile(
    ctx: &Ctx,
    model: &SdeModel,
    grid: PathGrid,
    v: &Surface,
    times: &[f64],
) -> Result<EeProfile, CliError> {
    let cfg = &ctx.cfg;
    let ens = Ensemble::new(model, grid, ctx.npaths()?, ctx.master_seed()?);
    let rect = build_rect(cfg, &ens, model)?;
    let settings = build_cvf_settings(cfg, rect)?;
    let branches = extract_branches(
        v,
        &settings.rect,
        settings.n_seed_times,
        settings.nx,
        &settings.thresholds,
        &settings.trace,
    );
    let density = build_density(ctx, model, grid)?;
    let allow = cfg.bool_or("exposure", "allow_non_martingale", false)?;
    let out = ee_forward(model, v, &branches, &density, times, allow)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    if out.martingale.warn {
        eprintln!(
            "warning: generator residual {:.3e} (relative); the surface may not be a martingale",
            out.martingale.relative
        );
    }
    for gap in &out.coverage {
        eprintln!(
            "warning: {:.2}% of the density mass lies outside the rectangle at t = {}",
            100.0 * gap.outside_mass,
            gap.t
        );
    }
    Ok(out.profile)
}

pub fn cmd_ee(ctx: &Ctx) -> Result<i32, CliError> {
    let cfg = &ctx.cfg;
    let model = build_model(cfg)?;
    let grid = build_grid(cfg)?;
    let v = build_surface(cfg)?;
    let times = build_times(cfg, grid.t_max(), 32)?;
    let method = cfg.str_val("exposure", "method").unwrap_or("both");

    let forward = match method {
        "forward" | "both" => Some(forward_profile(ctx, &model, grid, &v, &times)?),
        "mc" => None,
        other => {
            return Err(cfg
                .error_at(
                    "exposure",
                    "method",
                    format!("unknown method `{other}` (mc, forward, both)"),
                )
                .into())
        }
    };
    let mc = match method {
        "mc" | "both" => {
            let ens = Ensemble::new(&model, grid, ctx.npaths()?, ctx.master_seed()?);
            Some(ee_mc(&ens, &v, &times)?)
        }
        _ => None,
    };

    if let Some(profile) = &forward {
        let mut w = ctx.create("ee_forward.csv")?;
        profile.write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(profile) = &mc {
        let mut w = ctx.create("ee_mc.csv")?;
        profile.write_csv(&mut w)?;
        w.flush()?;
    }

    if let (Some(f), Some(m)) = (&forward, &mc) {
        let mut table = String::from("t,forward,mc,mc_stderr,abs_diff\n");
        for (i, &t) in times.iter().enumerate() {
            table.push_str(&format!(
                "{},{},{},{},{}\n",
                t,
                f.values[i],
                m.values[i],
                m.stderr[i],
                (f.values[i] - m.values[i]).abs()
            ));
        }
        fs::write(ctx.out.join("ee_table.txt"), &table)?;
        print!("{table}");
    } else {
        let profile = forward.as_ref().or(mc.as_ref()).expect("one method ran");
        println!("t,ee");
        for (t, ee) in profile.times.iter().zip(&profile.values) {
            println!("{t},{ee}");
        }
    }

    write_manifest(ctx, "ee", &model, grid, &[("method", method.to_string())])?;
    Ok(0)
}

pub fn cmd_cva(ctx: &Ctx) -> Result<i32, CliError> {
    let cfg = &ctx.cfg;
    let model = build_model(cfg)?;
    let grid = build_grid(cfg)?;
    let v = build_surface(cfg)?;
    let times = build_times(cfg, grid.t_max(), 64)?;
    let method = cfg.str_val("exposure", "method").unwrap_or("forward");

    let profile = match method {
        "forward" => forward_profile(ctx, &model, grid, &v, &times)?,
        "mc" => {
            let ens = Ensemble::new(&model, grid, ctx.npaths()?, ctx.master_seed()?);
            ee_mc(&ens, &v, &times)?
        }
        other => {
            return Err(cfg
                .error_at(
                    "exposure",
                    "method",
                    format!("cva needs `mc` or `forward`, got `{other}`"),
                )
                .into())
        }
    };
    let default = build_default_model(cfg, grid.t_max())?;
    let value = cva0(&profile, &default).map_err(|e| CliError::Usage(e.to_string()))?;

    let mut w = ctx.create("ee_profile.csv")?;
    profile.write_csv(&mut w)?;
    w.flush()?;

    let described = match &default.distribution {
        DefaultDistribution::Exponential { lambda } => {
            format!("exponential (lambda = {lambda}, truncated at {})", default.horizon)
        }
        DefaultDistribution::Uniform => format!("uniform on [0, {}]", default.horizon),
        DefaultDistribution::CdfSamples { times, .. } => {
            format!("cdf samples ({} points)", times.len())
        }
    };
    let mut report = String::new();
    report.push_str(&format!("cva0 = {value}\n"));
    report.push_str(&format!("alpha = {}\n", default.alpha));
    report.push_str(&format!("default = {described}\n"));
    report.push_str(&format!("ee_method = {method}\n"));
    report.push_str(&format!("ee_points = {}\n", profile.times.len()));
    fs::write(ctx.out.join("cva_report.txt"), &report)?;
    print!("{report}");

    write_manifest(ctx, "cva", &model, grid, &[("cva0", value.to_string())])?;
    Ok(0)
}
