//! Subcommand dispatch: builds the model from a [`RunConfig`], runs the
//! requested computation, writes artifacts and collects pass/fail reports.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use fiberspec::diagnostics::{
    self, ccr_check, concavity_probe, cone_membership, feynman_hellmann_check, hermiticity_check,
    number_two_way_check, pull_through_residual, pull_through_subspace_check, resolvent_limit_check, snap_gradient, ConeSpec,
    IdentityReport, IrSweepConfig, IrSweepReport, LogFit, Provenance, ResolventRow, SweepFailure,
};
use fiberspec::field::norm3;
use fiberspec::spectral::{
    self, default_fd_step, dispersion_with, fd_gradient, DispersionRow, DispersionTable, GroundStateRecord,
};
use fiberspec::{FiberModel, FockBasis, FockBasisOptions, Vec3};

use crate::cache::{ground_key, ResultCache, DEFAULT_CAP_BYTES};
use crate::config::{Format, RunConfig};

/// Pass tolerances of the `check` suite.
pub const FH_TOLERANCE: f64 = 1e-4;
pub const SUBSPACE_TOLERANCE: f64 = 1e-10;
pub const CCR_TOLERANCE: f64 = 1e-12;
pub const NUMBER_TOLERANCE: f64 = 1e-10;
/// The CCR suite runs on a basis of at most this many channels and photons.
pub const CCR_MAX_CHANNELS: usize = 12;
pub const CCR_MAX_PHOTONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ground,
    Dispersion,
    IrSweep,
    Check,
    DumpModes,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Ground => "ground",
            Command::Dispersion => "dispersion",
            Command::IrSweep => "ir-sweep",
            Command::Check => "check",
            Command::DumpModes => "dump-modes",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] fiberspec::Error),

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },

    #[error("{0}")]
    Task(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output.directory`.
    pub out: Option<PathBuf>,
    /// Overrides the cache root (else `FIBERSPEC_CACHE_DIR`, else `<out>/cache`).
    pub cache_dir: Option<PathBuf>,
    pub no_cache: bool,
}

/// A failed check or task, in the machine-readable failure list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub name: String,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub reports: Vec<IdentityReport>,
    pub failures: Vec<Failure>,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

impl Outcome {
    /// Exit-status contract: success iff every report passes and no task failed.
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.reports.iter().all(|r| r.pass)
    }

    /// Task failures plus every failing report.
    pub fn failure_list(&self) -> Vec<Failure> {
        let mut out = self.failures.clone();
        for r in self.reports.iter().filter(|r| !r.pass) {
            out.push(Failure {
                name: r.name.clone(),
                message: format!("value {:e} exceeds tolerance {:e}", r.value, r.tolerance),
            });
        }
        out
    }
}

struct Context<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    cache: Option<ResultCache>,
}

impl Context<'_> {
    fn model(&self) -> Result<FiberModel, RunError> {
        let basis_opts = FockBasisOptions { c_max: self.cfg.c_max, ..FockBasisOptions::default() };
        Ok(FiberModel::build(self.cfg.grid, self.cfg.coupling, self.cfg.n_max, &basis_opts)?)
    }

    fn ground(&self, model: &FiberModel, key: &str, xi: Vec3) -> fiberspec::Result<GroundStateRecord> {
        if let Some(record) = self.cache.as_ref().and_then(|c| c.get(key)) {
            return Ok(record);
        }
        let record = spectral::ground_state(model, xi, &self.cfg.solver)?;
        if let Some(cache) = &self.cache {
            // a failed cache write only costs a recompute next time
            let _ = cache.put(key, &record);
        }
        Ok(record)
    }

    fn write(&self, name: &str, contents: &str, outcome: &mut Outcome) -> Result<(), RunError> {
        fs::create_dir_all(&self.out).map_err(io_err(format!("creating {}", self.out.display())))?;
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(io_err(format!("writing {}", path.display())))?;
        outcome.artifacts.push(path);
        Ok(())
    }

    fn csv(&self, body: &str) -> String {
        format!("# config_hash: {}\n{body}", self.cfg.hash)
    }

    fn json<T: Serialize>(&self, value: &T) -> Result<String, RunError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| RunError::Task(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    fn stamp(&self, mut reports: Vec<IdentityReport>) -> Vec<IdentityReport> {
        for r in &mut reports {
            r.config_hash = self.cfg.hash.clone();
        }
        reports
    }
}

pub fn run(command: Command, cfg: &RunConfig, opts: &RunOptions) -> Result<Outcome, RunError> {
    let out = opts.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    let cache = if opts.no_cache {
        None
    } else {
        let root = opts.cache_dir.clone().unwrap_or_else(|| ResultCache::default_root(&out));
        Some(ResultCache::open(&root, &cfg.hash, DEFAULT_CAP_BYTES).map_err(io_err(format!("opening cache {}", root.display())))?)
    };
    let ctx = Context { cfg, out, cache };
    let mut outcome = Outcome::default();
    match command {
        Command::Ground => ground(&ctx, &mut outcome)?,
        Command::Dispersion => dispersion(&ctx, &mut outcome)?,
        Command::IrSweep => ir_sweep(&ctx, &mut outcome)?,
        Command::Check => check(&ctx, &mut outcome)?,
        Command::DumpModes => dump_modes(&ctx, &mut outcome)?,
    }
    if let Some(cache) = &ctx.cache {
        outcome.cache_hits = cache.hits();
        outcome.cache_misses = cache.misses();
    }
    outcome.reports = ctx.stamp(std::mem::take(&mut outcome.reports));
    Ok(outcome)
}

#[derive(Serialize)]
struct GroundArtifact<'a> {
    config_hash: &'a str,
    xi: Vec3,
    energy: f64,
    t: f64,
    n_expect: f64,
    v_expect: Vec3,
    cluster_size: usize,
    eigenvalues: &'a [f64],
    gap: Option<f64>,
    solver: &'a spectral::SolverInfo,
    gradient: Vec3,
    reports: &'a [IdentityReport],
}

fn fd_step(cfg: &RunConfig, xi: Vec3) -> f64 {
    cfg.task.fd_step.unwrap_or_else(|| default_fd_step(xi))
}

fn ground(ctx: &Context, outcome: &mut Outcome) -> Result<(), RunError> {
    let model = ctx.model()?;
    let xi = ctx.cfg.task.xi;
    let gs = ctx.ground(&model, &ground_key("gs", xi), xi)?;
    let row = DispersionRow::from_record(&model, &gs);
    let grad = fd_gradient(&model, xi, fd_step(ctx.cfg, xi), false, &ctx.cfg.solver)?.gradient;
    let reports = ctx.stamp(vec![
        hermiticity_check(&model, xi),
        number_two_way_check(&model, xi, &gs.vector, NUMBER_TOLERANCE)?,
        feynman_hellmann_check(&model, &gs, grad, FH_TOLERANCE)?,
    ]);
    if ctx.cfg.wants(Format::Json) {
        let artifact = GroundArtifact {
            config_hash: &ctx.cfg.hash,
            xi,
            energy: gs.energy,
            t: row.t(),
            n_expect: row.n_expect,
            v_expect: row.v_expect,
            cluster_size: gs.cluster_size(),
            eigenvalues: &gs.eigenvalues,
            gap: gs.gap,
            solver: &gs.solver,
            gradient: grad,
            reports: &reports,
        };
        ctx.write("ground.json", &ctx.json(&artifact)?, outcome)?;
    }
    outcome.reports = reports;
    Ok(())
}

fn dispersion_table(ctx: &Context, model: &FiberModel, xis: &[Vec3]) -> Result<DispersionTable, RunError> {
    Ok(dispersion_with(model, xis, |xi| ctx.ground(model, &ground_key("gs", xi), xi))?)
}

#[derive(Serialize)]
struct DispersionArtifact<'a> {
    config_hash: &'a str,
    table: &'a DispersionTable,
}

fn dispersion(ctx: &Context, outcome: &mut Outcome) -> Result<(), RunError> {
    if ctx.cfg.task.xi_list.is_empty() {
        return Err(RunError::Task("task.xi_list is empty".into()));
    }
    let model = ctx.model()?;
    let table = dispersion_table(ctx, &model, &ctx.cfg.task.xi_list)?;
    if ctx.cfg.wants(Format::Csv) {
        ctx.write("dispersion.csv", &ctx.csv(&table.to_csv()), outcome)?;
    }
    if ctx.cfg.wants(Format::Json) {
        ctx.write("dispersion.json", &ctx.json(&DispersionArtifact { config_hash: &ctx.cfg.hash, table: &table })?, outcome)?;
    }
    for f in &table.failures {
        outcome.failures.push(Failure {
            name: format!("dispersion[{}, {}, {}]", f.xi[0], f.xi[1], f.xi[2]),
            message: f.error.clone(),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct IrSweepArtifact<'a> {
    config_hash: &'a str,
    xi: Vec3,
    rows: &'a [diagnostics::IrSweepRow],
    failures: &'a [SweepFailure],
    fit: Option<LogFit>,
}

fn ir_sweep(ctx: &Context, outcome: &mut Outcome) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let sigmas = &cfg.task.sigma_list;
    if sigmas.len() < diagnostics::MIN_FIT_POINTS {
        outcome.failures.push(Failure {
            name: "ir_sweep.fit".into(),
            message: fiberspec::Error::InsufficientPoints { needed: diagnostics::MIN_FIT_POINTS, got: sigmas.len() }
                .to_string(),
        });
        return Ok(());
    }
    let sweep = IrSweepConfig {
        xi: cfg.task.xi,
        sigmas: sigmas.clone(),
        params: cfg.coupling,
        angular: cfg.grid.angular,
        shells_per_decade: cfg.task.shells_per_decade,
        n_max: cfg.n_max,
        c_max: cfg.c_max,
    };
    let report: IrSweepReport = diagnostics::ir_sweep_with(&sweep, |model, sigma| {
        let key = format!("ir-{:016x}", sigma.to_bits());
        ctx.ground(model, &key, sweep.xi)
    })?;
    if cfg.wants(Format::Csv) {
        ctx.write("ir_sweep.csv", &ctx.csv(&report.to_csv()), outcome)?;
    }
    if cfg.wants(Format::Json) {
        let artifact = IrSweepArtifact {
            config_hash: &cfg.hash,
            xi: report.xi,
            rows: &report.rows,
            failures: &report.failures,
            fit: report.fit,
        };
        ctx.write("ir_sweep.json", &ctx.json(&artifact)?, outcome)?;
    }
    for f in &report.failures {
        outcome.failures.push(Failure { name: format!("ir_sweep[sigma={}]", f.sigma), message: f.error.clone() });
    }
    if let Err(e) = report.require_fit() {
        outcome.failures.push(Failure { name: "ir_sweep.fit".into(), message: e.to_string() });
    }
    Ok(())
}

#[derive(Serialize)]
struct ResolventArtifact {
    omega: Vec3,
    target: [f64; 2],
    rows: Vec<ResolventRow>,
}

#[derive(Serialize)]
struct CheckArtifact<'a> {
    config_hash: &'a str,
    pass: bool,
    gradient: Vec3,
    reports: &'a [IdentityReport],
    resolvent: &'a [ResolventArtifact],
    failures: &'a [Failure],
}

/// Nine points s·d, s ∈ {−0.4, …, 0.4}, along ξ̂ (x̂ when ξ = 0).
fn default_ray(xi: Vec3) -> Vec<Vec3> {
    let n = norm3(xi);
    let d = if n > 0.0 { [xi[0] / n, xi[1] / n, xi[2] / n] } else { [1.0, 0.0, 0.0] };
    (0..9)
        .map(|j| {
            let s = (j as f64 - 4.0) / 10.0;
            [s * d[0], s * d[1], s * d[2]]
        })
        .collect()
}

fn check(ctx: &Context, outcome: &mut Outcome) -> Result<(), RunError> {
    let cfg = ctx.cfg;
    let model = ctx.model()?;
    let xi = cfg.task.xi;
    let opts = &cfg.solver;
    let gs = ctx.ground(&model, &ground_key("gs", xi), xi)?;
    let grad = snap_gradient(fd_gradient(&model, xi, fd_step(cfg, xi), false, opts)?.gradient);
    let prov = Provenance::of(&model, xi);

    let mut reports = vec![hermiticity_check(&model, xi)];
    let ccr_basis = FockBasis::enumerate(
        model.modes().num_channels().min(CCR_MAX_CHANNELS),
        model.n_max().min(CCR_MAX_PHOTONS),
    )?;
    reports.push(ccr_check(&ccr_basis, CCR_TOLERANCE, prov.clone())?);
    reports.push(number_two_way_check(&model, xi, &gs.vector, NUMBER_TOLERANCE)?);
    reports.push(feynman_hellmann_check(&model, &gs, grad, FH_TOLERANCE)?);
    reports.push(pull_through_subspace_check(&model, xi, opts.seed, SUBSPACE_TOLERANCE)?);

    // pull-through on every channel whose direction lies in K
    let cone = ConeSpec::new(grad, cfg.task.eps)?;
    for mu in 0..model.modes().num_channels() {
        let (mode, _) = model.modes().channel(mu);
        if !cone_membership(mode.khat(), &cone)?.in_k {
            continue;
        }
        match pull_through_residual(&model, &gs, mu, opts) {
            Ok(p) => reports.push(p.report),
            Err(e) => outcome.failures.push(Failure { name: format!("pull_through[{mu}]"), message: e.to_string() }),
        }
    }

    let mut resolvent = Vec::new();
    for &omega in &cfg.task.probe_directions {
        match resolvent_limit_check(&model, &gs, grad, omega, &cfg.task.kmags, cfg.task.eps, opts.tol, opts) {
            Ok(r) => {
                reports.push(r.monotone);
                reports.push(r.gap);
                resolvent.push(ResolventArtifact { omega, target: [r.target.re, r.target.im], rows: r.rows });
            }
            Err(e) => outcome.failures.push(Failure {
                name: format!("resolvent_limit[{}, {}, {}]", omega[0], omega[1], omega[2]),
                message: e.to_string(),
            }),
        }
    }

    let ray = if cfg.task.xi_list.len() >= 3 { cfg.task.xi_list.clone() } else { default_ray(xi) };
    let table = dispersion_table(ctx, &model, &ray)?;
    for f in &table.failures {
        outcome.failures.push(Failure {
            name: format!("dispersion[{}, {}, {}]", f.xi[0], f.xi[1], f.xi[2]),
            message: f.error.clone(),
        });
    }
    match concavity_probe(&table, opts.tol, prov) {
        Ok(r) => reports.push(r),
        Err(e) => outcome.failures.push(Failure { name: "concavity".into(), message: e.to_string() }),
    }

    let reports = ctx.stamp(reports);
    outcome.reports = reports;
    let failures = outcome.failure_list();
    if cfg.wants(Format::Json) {
        let artifact = CheckArtifact {
            config_hash: &cfg.hash,
            pass: failures.is_empty(),
            gradient: grad,
            reports: &outcome.reports,
            resolvent: &resolvent,
            failures: &failures,
        };
        ctx.write("check.json", &ctx.json(&artifact)?, outcome)?;
    }
    Ok(())
}

fn dump_modes(ctx: &Context, outcome: &mut Outcome) -> Result<(), RunError> {
    let modes = fiberspec::ModeSet::build(&ctx.cfg.grid, &ctx.cfg.coupling)?;
    if ctx.cfg.wants(Format::Csv) {
        ctx.write("modes.csv", &ctx.csv(&modes.to_csv()), outcome)?;
    }
    Ok(())
}

/// One line per report for the terminal.
pub fn summary(outcome: &Outcome) -> String {
    let mut s = String::new();
    for r in &outcome.reports {
        let _ = writeln!(
            s,
            "{} {:<28} value {:.3e}  tol {:.3e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.value,
            r.tolerance
        );
    }
    for f in &outcome.failures {
        let _ = writeln!(s, "FAIL {:<28} {}", f.name, f.message);
    }
    if outcome.cache_hits + outcome.cache_misses > 0 {
        let _ = writeln!(s, "cache: {} hits, {} misses", outcome.cache_hits, outcome.cache_misses);
    }
    for a in &outcome.artifacts {
        let _ = writeln!(s, "wrote {}", a.display());
    }
    s
}

/// The failure list as JSON, for stderr on a nonzero exit.
pub fn failure_json(cfg: &RunConfig, outcome: &Outcome) -> String {
    #[derive(Serialize)]
    struct Failures<'a> {
        config_hash: &'a str,
        failures: Vec<Failure>,
    }
    serde_json::to_string(&Failures { config_hash: &cfg.hash, failures: outcome.failure_list() })
        .unwrap_or_else(|_| "{}".into())
}
