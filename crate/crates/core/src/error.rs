use thiserror::Error;

/// Errors raised by the numerical laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("expression error at byte {pos}: {msg}")]
    Expression { pos: usize, msg: String },

    #[error("f decreases on the sampled grid: f({u_lo}) = {f_lo} > f({u_hi}) = {f_hi}")]
    NonMonotone { u_lo: f64, f_lo: f64, u_hi: f64, f_hi: f64 },

    #[error("f is not positive at u = {u} (f = {value})")]
    NotPositive { u: f64, value: f64 },

    #[error("tail integral of 1/f does not converge above u = {from} (remainder {remainder:e})")]
    TailDivergent { from: f64, remainder: f64 },

    #[error("argument {value} outside the domain of {what}")]
    Domain { what: &'static str, value: f64 },

    #[error("could not bracket {what} = {target} below cap {cap:e}")]
    BracketFailure { what: &'static str, target: f64, cap: f64 },

    #[error("sequence f'(u)F(u) has no detectable limit (tail spread {spread:e})")]
    NoLimit { spread: f64 },

    #[error("F^-1 could not be evaluated at sigma = {sigma}")]
    InversionFailure { sigma: f64 },

    #[error("oscillatory quadrature failed self-consistency at r = {r} (relative change {change:e})")]
    QuadratureFailure { r: f64, change: f64 },

    #[error("no finite two-sided kernel bound constant below {limit:e} (needed {needed:e})")]
    BoundViolation { needed: f64, limit: f64 },

    #[error("local singularity exponent {exponent} is not integrable in dimension {dim}")]
    NonIntegrableSingularity { exponent: f64, dim: usize },

    #[error("{leak:.3e} of kernel mass leaves the window at t = {t}")]
    WindowTooSmall { leak: f64, t: f64 },

    #[error("beta window ({lo}, {hi}) is empty")]
    BetaWindowEmpty { lo: f64, hi: f64 },

    #[error("profile argument {arg} is at or below the domain threshold {threshold} inside the cutoff")]
    LogDomain { arg: f64, threshold: f64 },

    #[error("run at dt = {dt} did not blow up")]
    NotBlowingUp { dt: f64 },

    #[error("converged verdict at lambda = {converged} lies above a blow-up verdict at lambda = {blowup}")]
    NonMonotoneSweep { converged: f64, blowup: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("kernel cache: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
