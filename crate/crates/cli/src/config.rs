//! Experiment configuration files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use fracheat_core::expr::Expr;
use fracheat_core::grid::{BallIndicator, Constant, GridSpec, Offset, PointwiseData, RadialExpr, RadialPower};
use fracheat_core::kernel::KernelConfig;
use fracheat_core::nonlinearity::{build_calculus, NonlinearitySpec, QuadratureConfig};
use fracheat_core::solvability::{make_dcs, DcsKind, DcsSource, DcsSpec, SufficientConfig, SweepConfig};
use fracheat_core::solver::SolveOptions;
use serde::{Deserialize, Serialize};

/// Problem with a config file; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: at `{field}`: {msg}")]
    Schema { path: PathBuf, field: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Classify,
    KernelCheck,
    Evolve,
    Necessary,
    Sufficient,
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "M")]
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
}

/// A dilation-critical profile; `lambda` is ignored by sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub kind: DcsKind,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default, rename = "L")]
    pub l: Option<f64>,
    #[serde(default)]
    pub n: Option<u32>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub cutoff: Option<f64>,
}

/// Initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Constant {
        value: f64,
    },
    Ball {
        radius: f64,
        value: f64,
        #[serde(default)]
        offset: f64,
    },
    RadialPower {
        coef: f64,
        exponent: f64,
        radius: f64,
        #[serde(default)]
        offset: f64,
    },
    /// expression in `r`; `singular` is the exponent `a` of `r^{-a}` at the origin
    Expr {
        expr: String,
        #[serde(default)]
        singular: Option<f64>,
        #[serde(default)]
        background: f64,
    },
    Profile(ProfileConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NecessaryConfig {
    #[serde(rename = "C_star", default = "one")]
    pub cstar: f64,
    #[serde(rename = "T_star")]
    pub tstar: f64,
    /// geometric time grid in `(0, T_star)`
    pub t_min: f64,
    pub t_max: f64,
    #[serde(default = "thirty")]
    pub points: usize,
}

fn one() -> f64 {
    1.0
}

fn thirty() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SufficientParams {
    pub beta: f64,
    pub delta: f64,
    pub eps: f64,
    #[serde(default)]
    pub sampling: SufficientConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub nonlinearity: NonlinearitySpec,
    #[serde(rename = "N")]
    pub n: usize,
    pub theta: f64,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub time: Option<TimeConfig>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub profile: Option<ProfileConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub necessary: Option<NecessaryConfig>,
    #[serde(default)]
    pub sufficient: Option<SufficientParams>,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl ExperimentConfig {
    /// Reads and validates a config, reporting schema errors with their field path.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let de = &mut serde_json::Deserializer::from_slice(&bytes);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
            path: path.to_owned(),
            field: e.path().to_string(),
            msg: e.inner().to_string(),
        })?;
        Ok((cfg, bytes))
    }

    /// Checks the invariants every mode relies on, plus what `mode` needs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=3).contains(&self.n) {
            return Err(invalid(format!("N must be 1, 2 or 3, got {}", self.n)));
        }
        if !(self.theta > 0.0 && self.theta <= 2.0) {
            return Err(invalid(format!("theta must lie in (0, 2], got {}", self.theta)));
        }
        self.nonlinearity.build().map_err(|e| invalid(format!("nonlinearity: {e}")))?;
        if let Some(g) = &self.grid {
            self.grid_spec_of(g)?;
        }
        if let Some(t) = &self.time {
            if !(t.t_end > 0.0 && t.dt > 0.0 && t.dt <= t.t_end) {
                return Err(invalid(format!("time: need 0 < dt ≤ T, got T = {}, dt = {}", t.t_end, t.dt)));
            }
        }
        if let Some(s) = &self.sweep {
            s.validate().map_err(|e| invalid(e.to_string()))?;
        }
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid(format!("mode {:?} needs `{what}`", self.mode)))
            }
        };
        match self.mode {
            Mode::Classify | Mode::KernelCheck => Ok(()),
            Mode::Evolve => {
                need(self.grid.is_some(), "grid")?;
                need(self.time.is_some(), "time")?;
                need(self.data.is_some(), "data")
            }
            Mode::Necessary => {
                need(self.grid.is_some(), "grid")?;
                need(self.data.is_some(), "data")?;
                need(self.necessary.is_some(), "necessary")
            }
            Mode::Sufficient => {
                need(self.data.is_some(), "data")?;
                need(self.time.is_some(), "time")?;
                need(self.sufficient.is_some(), "sufficient")
            }
            Mode::Sweep => {
                need(self.grid.is_some(), "grid")?;
                need(self.time.is_some(), "time")?;
                need(self.profile.is_some(), "profile")?;
                need(self.sweep.is_some(), "sweep")
            }
        }
    }

    fn grid_spec_of(&self, g: &GridConfig) -> Result<GridSpec, ConfigError> {
        GridSpec::new(self.n, g.half_width, g.m).map_err(|e| invalid(format!("grid: {e}")))
    }

    pub fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        match &self.grid {
            Some(g) => self.grid_spec_of(g),
            None => Err(invalid("missing `grid`")),
        }
    }
}

impl ProfileConfig {
    fn get(v: Option<f64>, name: &str) -> Result<f64, ConfigError> {
        v.ok_or_else(|| invalid(format!("profile needs `{name}`")))
    }

    /// The profile at dilation `lambda`.
    pub fn build(&self, cfg: &ExperimentConfig, lambda: f64) -> Result<DcsSpec, ConfigError> {
        let src = match self.kind {
            DcsKind::Generic => {
                let nl = cfg.nonlinearity.build().map_err(|e| invalid(e.to_string()))?;
                let c = build_calculus(&nl, &cfg.quadrature).map_err(|e| invalid(format!("nonlinearity: {e}")))?;
                DcsSource::Calculus(Arc::new(c))
            }
            DcsKind::Power => DcsSource::Power {
                p: Self::get(self.p, "p")?,
            },
            DcsKind::Exp => DcsSource::Exp,
            DcsKind::PowerLog => DcsSource::PowerLog {
                p: Self::get(self.p, "p")?,
                q: Self::get(self.q, "q")?,
                l: Self::get(self.l, "L")?,
            },
            DcsKind::ExpN => DcsSource::ExpN {
                n: self.n.ok_or_else(|| invalid("profile needs `n`"))?,
                p: Self::get(self.p, "p")?,
            },
        };
        make_dcs(&src, self.kind, cfg.n, cfg.theta, lambda, self.cutoff).map_err(|e| invalid(format!("profile: {e}")))
    }
}

/// Initial data together with its radial form, when it has one.
pub struct Data {
    pub pointwise: Arc<dyn PointwiseData>,
    pub radial: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
    pub constant: Option<f64>,
}

impl DataConfig {
    pub fn build(&self, cfg: &ExperimentConfig) -> Result<Data, ConfigError> {
        let n = cfg.n;
        let offset = |inner: Arc<dyn PointwiseData>, c: f64| -> Arc<dyn PointwiseData> {
            if c == 0.0 {
                inner
            } else {
                Arc::new(Offset { inner, c })
            }
        };
        let radial_of = |p: Arc<dyn PointwiseData>| -> Box<dyn Fn(f64) -> f64 + Send + Sync> {
            Box::new(move |r: f64| {
                let mut x = [0.0; 3];
                x[0] = r;
                p.eval(&x[..n])
            })
        };
        let (pointwise, constant): (Arc<dyn PointwiseData>, Option<f64>) = match self {
            DataConfig::Constant { value } => {
                if !(*value >= 0.0 && value.is_finite()) {
                    return Err(invalid(format!("data: constant must be finite and ≥ 0, got {value}")));
                }
                (Arc::new(Constant(*value)), Some(*value))
            }
            DataConfig::Ball { radius, value, offset: c } => (
                offset(
                    Arc::new(BallIndicator {
                        radius: *radius,
                        value: *value,
                    }),
                    *c,
                ),
                None,
            ),
            DataConfig::RadialPower {
                coef,
                exponent,
                radius,
                offset: c,
            } => (
                offset(
                    Arc::new(RadialPower {
                        coef: *coef,
                        exponent: *exponent,
                        radius: *radius,
                    }),
                    *c,
                ),
                None,
            ),
            DataConfig::Expr {
                expr,
                singular,
                background,
            } => (
                Arc::new(RadialExpr {
                    expr: Expr::parse(expr).map_err(|e| invalid(format!("data.expr: {e}")))?,
                    singular: *singular,
                    background: *background,
                }),
                None,
            ),
            DataConfig::Profile(p) => {
                let lambda = p.lambda.ok_or_else(|| invalid("data profile needs `lambda`"))?;
                let d = p.build(cfg, lambda)?;
                let pw = d.to_pointwise().map_err(|e| invalid(format!("profile: {e}")))?;
                return Ok(Data {
                    pointwise: pw,
                    radial: Some(Box::new(move |r| d.eval_r(r))),
                    constant: None,
                });
            }
        };
        Ok(Data {
            radial: Some(radial_of(pointwise.clone())),
            pointwise,
            constant,
        })
    }
}
