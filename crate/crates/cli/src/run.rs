//! Runs one experiment and writes its output directory.

use std::path::{Path, PathBuf};

use fracheat_core::grid::discretize;
use fracheat_core::kernel::{build_kernel, check_bounds, check_chapman_kolmogorov, CkGrid, KernelConfig, KernelTable};
use fracheat_core::nonlinearity::{build_calculus, classify, estimate_qf, Calculus};
use fracheat_core::numeric::geomspace;
use fracheat_core::solvability::{
    bracket_lambda0, check_necessary, check_sufficient, necessary_violation_time_constant, write_sweep_csv, DcsSpec, SweepSetup,
};
use fracheat_core::solver::{mild_solve, Verdict};
use fracheat_core::Error as CoreError;
use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ConfigError, ExperimentConfig, Mode};
use crate::output::{sha256_hex, Artifacts, ConfigRef, Manifest, Versions};
use crate::report::{render_report, ReportError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Whether a library error reflects bad input rather than a numerical failure.
fn is_validation(e: &CoreError) -> bool {
    matches!(
        e,
        CoreError::InvalidParameter { .. }
            | CoreError::Expression { .. }
            | CoreError::NonMonotone { .. }
            | CoreError::NotPositive { .. }
            | CoreError::TailDivergent { .. }
            | CoreError::Domain { .. }
            | CoreError::NonIntegrableSingularity { .. }
            | CoreError::BetaWindowEmpty { .. }
            | CoreError::LogDomain { .. }
            | CoreError::GridMismatch(_)
    )
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_INVALID,
            RunError::Core(e) if is_validation(e) => EXIT_INVALID,
            RunError::Core(_) => EXIT_NUMERICAL,
            RunError::Io(_) | RunError::Report(_) => EXIT_IO,
        }
    }
}

/// Loads a kernel table from `cache` or builds (and stores) it.
pub fn cached_kernel(n: usize, theta: f64, cfg: &KernelConfig, cache: Option<&Path>, used: &mut Vec<String>) -> Result<KernelTable, CoreError> {
    let Some(dir) = cache else {
        return build_kernel(n, theta, cfg);
    };
    let key = serde_json::to_vec(&json!({
        "N": n,
        "theta": theta,
        "config": cfg,
        "version": fracheat_core::VERSION,
    }))
    .expect("plain data");
    let name = format!("kernel-{}.json", &sha256_hex(&key)[..16]);
    let path = dir.join(&name);
    used.push(name);
    if path.exists() {
        match KernelTable::load_json(&path) {
            Ok(k) => {
                info!("kernel table from {}", path.display());
                return Ok(k);
            }
            Err(e) => warn!("ignoring unreadable cache entry: {e}"),
        }
    }
    let k = build_kernel(n, theta, cfg)?;
    if let Err(e) = std::fs::create_dir_all(dir).map_err(|e| CoreError::Cache(e.to_string())).and_then(|_| k.save_json(&path)) {
        warn!("kernel cache not written: {e}");
    }
    Ok(k)
}

/// Result of a finished run.
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub exit_code: i32,
}

#[derive(Serialize)]
struct ResultFile<'a> {
    mode: &'a str,
    config_sha256: &'a str,
    versions: Versions,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Classify => "classify",
        Mode::KernelCheck => "kernel-check",
        Mode::Evolve => "evolve",
        Mode::Necessary => "necessary",
        Mode::Sufficient => "sufficient",
        Mode::Sweep => "sweep",
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    cache: Option<&'a Path>,
    kernels_used: Vec<String>,
}

impl Ctx<'_> {
    fn kernel(&mut self) -> Result<KernelTable, CoreError> {
        cached_kernel(self.cfg.n, self.cfg.theta, &self.cfg.kernel, self.cache, &mut self.kernels_used)
    }

    fn calculus(&self) -> Result<Calculus, RunError> {
        let nl = self.cfg.nonlinearity.build()?;
        Ok(build_calculus(&nl, &self.cfg.quadrature)?)
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable result")
}

/// Runs the experiment described by `cfg` (already validated) and writes
/// `result.json`, mode-specific tables, plots and `manifest.json` into `out`.
pub fn run(cfg: &ExperimentConfig, config_path: &Path, config_bytes: &[u8], out: &Path, cache: Option<&Path>) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let config_sha = sha256_hex(config_bytes);
    let mut art = Artifacts::create(out)?;
    let mut ctx = Ctx {
        cfg,
        cache,
        kernels_used: Vec::new(),
    };
    let mode = mode_name(cfg.mode);
    let outcome = execute(&mut ctx, &mut art);
    let (result, error, code) = match outcome {
        Ok((v, code)) => (Some(v), None, code),
        Err(RunError::Core(e)) if !is_validation(&e) => (None, Some(e.to_string()), EXIT_NUMERICAL),
        Err(e) => return Err(e),
    };
    let plotted = error.is_none();
    art.write_json(
        "result.json",
        &ResultFile {
            mode,
            config_sha256: &config_sha,
            versions: Versions::current(),
            result,
            error,
        },
    )?;
    if plotted {
        for (name, svg) in render_report(art.dir())? {
            art.write(&name, svg.as_bytes())?;
        }
    }
    let outputs = art.outputs().to_vec();
    let mut kernels = ctx.kernels_used;
    kernels.dedup();
    art.write_json(
        "manifest.json",
        &Manifest {
            mode,
            config: ConfigRef {
                path: config_path.display().to_string(),
                sha256: config_sha,
            },
            versions: Versions::current(),
            kernel_cache: kernels,
            outputs: &outputs,
        },
    )?;
    Ok(RunSummary {
        out_dir: out.to_owned(),
        exit_code: code,
    })
}

fn execute(ctx: &mut Ctx, art: &mut Artifacts) -> Result<(Value, i32), RunError> {
    let cfg = ctx.cfg;
    match cfg.mode {
        Mode::Classify => {
            let calc = ctx.calculus()?;
            let class = classify(&calc, cfg.n, cfg.theta)?;
            let est = estimate_qf(&calc, &cfg.quadrature.qf_grid).ok();
            Ok((
                json!({
                    "nonlinearity": calc.nonlinearity().label(),
                    "classification": to_value(&class),
                    "q_estimate": est.map(|e| json!({"q_hat": e.q_hat, "spread": e.spread, "converged": e.converged})),
                    "F0": calc.F0(),
                    "G0": calc.G0(),
                    "hypotheses": to_value(calc.hypotheses()),
                }),
                EXIT_OK,
            ))
        }
        Mode::KernelCheck => {
            let k = ctx.kernel()?;
            let bounds = if cfg.theta < 2.0 { Some(to_value(&check_bounds(&k)?)) } else { None };
            let ck = if cfg.n == 1 {
                let grid = match &cfg.grid {
                    Some(g) => CkGrid {
                        half_width: g.half_width,
                        points: g.m,
                    },
                    None => CkGrid {
                        half_width: 20.0,
                        points: 256,
                    },
                };
                Some(check_chapman_kolmogorov(&k, 1.0, 0.5, &grid)?)
            } else {
                None
            };
            Ok((
                json!({
                    "N": cfg.n,
                    "theta": cfg.theta,
                    "mass": k.mass(),
                    "mass_error": (k.mass() - 1.0).abs(),
                    "r_min": k.r_min(),
                    "r_max": k.r_max(),
                    "tail_coeff": k.tail_coeff(),
                    "bound_fit": bounds,
                    "chapman_kolmogorov": ck.map(|d| json!({"t": 1.0, "s": 0.5, "max_deviation": d})),
                }),
                EXIT_OK,
            ))
        }
        Mode::Evolve => {
            let k = ctx.kernel()?;
            let nl = cfg.nonlinearity.build()?;
            let data = cfg.data.as_ref().expect("validated").build(cfg)?;
            let u0 = discretize(data.pointwise, cfg.grid_spec()?)?;
            let time = cfg.time.expect("validated");
            let report = mild_solve(&k, &nl, &u0, time.t_end, time.dt, &cfg.solver)?;
            let mut csv = Vec::new();
            report.final_field().write_csv(&mut csv)?;
            art.write("field.csv", &csv)?;
            let code = if report.verdict == Verdict::Inconclusive {
                EXIT_NUMERICAL
            } else {
                EXIT_OK
            };
            Ok((to_value(&report), code))
        }
        Mode::Necessary => {
            let k = ctx.kernel()?;
            let calc = ctx.calculus()?;
            let nc = cfg.necessary.as_ref().expect("validated");
            let data = cfg.data.as_ref().expect("validated").build(cfg)?;
            let u0 = discretize(data.pointwise, cfg.grid_spec()?)?;
            let ts = geomspace(nc.t_min, nc.t_max, nc.points);
            let v = check_necessary(&k, &calc, &u0, nc.cstar, nc.tstar, &ts)?;
            let analytic = match data.constant {
                Some(c) if c > 0.0 => Some(necessary_violation_time_constant(&calc, c, nc.cstar)?),
                _ => None,
            };
            Ok((json!({"verdict": to_value(&v), "constant_violation_time": analytic}), EXIT_OK))
        }
        Mode::Sufficient => {
            let calc = ctx.calculus()?;
            let sp = cfg.sufficient.as_ref().expect("validated");
            let data = cfg.data.as_ref().expect("validated").build(cfg)?;
            let field = match &cfg.grid {
                Some(_) => Some(discretize(data.pointwise.clone(), cfg.grid_spec()?)?),
                None => None,
            };
            let radial = data.radial.as_ref().expect("radial data");
            let v = check_sufficient(
                &calc,
                &|r| radial(r),
                field.as_ref(),
                cfg.n,
                cfg.theta,
                sp.beta,
                sp.delta,
                sp.eps,
                cfg.time.expect("validated").t_end,
                &sp.sampling,
            )?;
            Ok((json!({"verdict": to_value(&v)}), EXIT_OK))
        }
        Mode::Sweep => {
            let k = ctx.kernel()?;
            let nl = cfg.nonlinearity.build()?;
            let profile = cfg.profile.as_ref().expect("validated");
            // surface profile errors as config errors before the parallel part
            profile.build(cfg, cfg.sweep.as_ref().expect("validated").lambda_min)?;
            let time = cfg.time.expect("validated");
            let setup = SweepSetup {
                kernel: &k,
                nonlinearity: &nl,
                grid: cfg.grid_spec()?,
                t_end: time.t_end,
                dt: time.dt,
                options: cfg.solver.clone(),
            };
            let make = |lambda: f64| -> fracheat_core::Result<DcsSpec> {
                profile.build(cfg, lambda).map_err(|e| CoreError::InvalidParameter {
                    name: "profile",
                    reason: e.to_string(),
                })
            };
            let res = bracket_lambda0(&make, &setup, cfg.sweep.as_ref().expect("validated"))?;
            let mut csv = Vec::new();
            write_sweep_csv(&res.rows, &mut csv)?;
            art.write("sweep.csv", &csv)?;
            Ok((to_value(&res), EXIT_OK))
        }
    }
}
