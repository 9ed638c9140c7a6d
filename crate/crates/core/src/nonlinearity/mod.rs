//! Nonlinearities `f` and the calculus derived from them.
//!
//! A [`Nonlinearity`] is an evaluator for `f`, `f'` (and their logarithms,
//! which stay finite long after `f` itself overflows for the iterated
//! exponential family) together with the thresholds `τ₀` (where `f` is C¹
//! and `1/f` is integrable) and `τ₁` (where convexity starts).
//!
//! [`Calculus`] builds `F(u) = ∫_u^∞ ds/f(s)`, `G = 1/F`, the zero-extended
//! inverse `ψ_f` of `G`, and the growth exponent `q_f = lim f'(u)F(u)`.

mod calculus;
mod growth;

pub use calculus::{
    build_calculus, classify, estimate_qf, Calculus, Classification, Criticality, QfEstimate, QfGrid,
    QuadratureConfig, SandwichReport, CRITICAL_TOL,
};
pub use growth::{verify_lemma41, verify_lemma42, ConvexityReport, GrowthFitReport};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expr::Expr;
use crate::numeric::geomspace;
use crate::special::exp_n;

/// Built-in families plus black-box expressions.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `u^p`, `p > 1`
    Power { p: f64 },
    /// `u^p + u^q`, `p > q > 1`
    PowerSum { p: f64, q: f64 },
    /// `u^p (ln u)^q` for `u ≥ L`, continued by `f(L)(u/L)^p` below `L`
    PowerLog { p: f64, q: f64, l: f64 },
    /// `exp_n(u^p)`
    ExpN { n: u32, p: f64 },
    Custom { f: Expr, fprime: Option<Expr> },
}

/// A nonlinearity `f: [0, ∞) → [0, ∞)` with its thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct Nonlinearity {
    family: Family,
    tau0: f64,
    tau1: f64,
}

/// `u^p`, by repeated multiplication for small integer `p`.
fn pow(u: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= 16.0 {
        u.powi(p as i32)
    } else {
        u.powf(p)
    }
}

impl Nonlinearity {
    pub fn power(p: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(invalid("p", format!("power exponent must exceed 1, got {p}")));
        }
        Ok(Nonlinearity {
            family: Family::Power { p },
            tau0: 1.0,
            tau1: 0.0,
        })
    }

    pub fn power_sum(p: f64, q: f64) -> Result<Self> {
        if !(p > q && q > 1.0 && p.is_finite()) {
            return Err(invalid("q", format!("need p > q > 1, got p = {p}, q = {q}")));
        }
        Ok(Nonlinearity {
            family: Family::PowerSum { p, q },
            tau0: 1.0,
            tau1: 0.0,
        })
    }

    pub fn power_log(p: f64, q: f64, l: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(invalid("p", format!("power exponent must exceed 1, got {p}")));
        }
        if !(l > 1.0 && l.is_finite()) || p * l.ln() + q < 0.0 || !q.is_finite() {
            return Err(invalid(
                "L",
                format!("u^p (ln u)^q must be increasing from L; got p = {p}, q = {q}, L = {l}"),
            ));
        }
        Ok(Nonlinearity {
            family: Family::PowerLog { p, q, l },
            tau0: l,
            tau1: l,
        })
    }

    pub fn exp_n(n: u32, p: f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "need at least one exponential"));
        }
        if !(p > 0.0 && p.is_finite()) {
            return Err(invalid("p", format!("need p > 0, got {p}")));
        }
        Ok(Nonlinearity {
            family: Family::ExpN { n, p },
            tau0: 1.0,
            tau1: if p >= 1.0 { 0.0 } else { 1.0 },
        })
    }

    /// `f(u) = e^u`.
    pub fn exp() -> Self {
        Nonlinearity::exp_n(1, 1.0).expect("valid parameters")
    }

    pub fn custom(f: Expr, fprime: Option<Expr>, tau0: f64, tau1: Option<f64>) -> Result<Self> {
        if !(tau0 >= 0.0 && tau0.is_finite()) {
            return Err(invalid("tau0", format!("must be a finite nonnegative number, got {tau0}")));
        }
        let tau1 = tau1.unwrap_or(tau0);
        if !(tau1 >= 0.0 && tau1.is_finite()) {
            return Err(invalid("tau1", format!("must be a finite nonnegative number, got {tau1}")));
        }
        Ok(Nonlinearity {
            family: Family::Custom { f, fprime },
            tau0,
            tau1,
        })
    }

    /// Parses a custom nonlinearity from expression strings.
    pub fn custom_str(f: &str, fprime: Option<&str>, tau0: f64) -> Result<Self> {
        let f = Expr::parse(f)?;
        let fprime = fprime.map(Expr::parse).transpose()?;
        Nonlinearity::custom(f, fprime, tau0, None)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    pub fn tau1(&self) -> f64 {
        self.tau1
    }

    pub fn label(&self) -> String {
        match &self.family {
            Family::Power { p } => format!("u^{p}"),
            Family::PowerSum { p, q } => format!("u^{p} + u^{q}"),
            Family::PowerLog { p, q, l } => format!("u^{p} (log u)^{q}, u >= {l}"),
            Family::ExpN { n, p } => format!("exp_{n}(u^{p})"),
            Family::Custom { f, .. } => f.source().to_string(),
        }
    }

    /// Evaluates `f(u)` for `u ≥ 0`.
    pub fn f(&self, u: f64) -> f64 {
        match &self.family {
            Family::Power { p } => pow(u, *p),
            Family::PowerSum { p, q } => pow(u, *p) + pow(u, *q),
            Family::PowerLog { p, q, l } => {
                if u >= *l {
                    u.powf(*p) * u.ln().powf(*q)
                } else {
                    l.powf(*p) * l.ln().powf(*q) * (u / l).powf(*p)
                }
            }
            Family::ExpN { n, p } => exp_n(*n, u.powf(*p)),
            Family::Custom { f, .. } => f.eval(u),
        }
    }

    /// Evaluates `f'(u)`; custom expressions without a derivative use central
    /// differences.
    pub fn f_prime(&self, u: f64) -> f64 {
        match &self.family {
            Family::Power { p } => p * u.powf(p - 1.0),
            Family::PowerSum { p, q } => p * u.powf(p - 1.0) + q * u.powf(q - 1.0),
            Family::PowerLog { p, q, l } => {
                if u >= *l {
                    let lu = u.ln();
                    u.powf(p - 1.0) * lu.powf(q - 1.0) * (p * lu + q)
                } else {
                    l.powf(*p) * l.ln().powf(*q) * p * u.powf(p - 1.0) / l.powf(*p)
                }
            }
            Family::ExpN { n, p } => {
                let up = u.powf(*p);
                let mut prod = p * u.powf(p - 1.0);
                for k in 1..=*n {
                    prod *= exp_n(k, up);
                }
                prod
            }
            Family::Custom { f, fprime } => match fprime {
                Some(d) => d.eval(u),
                None => {
                    let h = 1e-6 * u.abs().max(1e-3);
                    let lo = (u - h).max(0.0);
                    (f.eval(u + h) - f.eval(lo)) / (u + h - lo)
                }
            },
        }
    }

    /// `ln f(u)`, finite for the exponential family well past `f`'s overflow.
    pub fn ln_f(&self, u: f64) -> f64 {
        match &self.family {
            Family::Power { p } => p * u.ln(),
            Family::PowerSum { p, q } => p * u.ln() + (u.powf(q - p)).ln_1p(),
            Family::PowerLog { p, q, l } if u >= *l => p * u.ln() + q * u.ln().ln(),
            Family::ExpN { n, p } => exp_n(n - 1, u.powf(*p)),
            _ => self.f(u).ln(),
        }
    }

    /// `ln f'(u)`.
    pub fn ln_f_prime(&self, u: f64) -> f64 {
        match &self.family {
            Family::Power { p } => p.ln() + (p - 1.0) * u.ln(),
            Family::ExpN { n, p } => {
                let up = u.powf(*p);
                let mut s = p.ln() + (p - 1.0) * u.ln();
                for k in 1..=*n {
                    s += exp_n(k - 1, up);
                }
                s
            }
            _ => self.f_prime(u).ln(),
        }
    }

    /// Samples hypotheses (M), (S) and (C).
    ///
    /// Errors on (M) failures (`NonMonotone`, `NotPositive`) and on (S)
    /// (`TailDivergent`); convexity is reported, not enforced.
    pub fn check_hypotheses(&self, grid: &HypothesisGrid) -> Result<HypothesisReport> {
        let f0 = self.f(0.0);
        if !(f0 >= 0.0) {
            return Err(Error::NotPositive { u: 0.0, value: f0 });
        }
        let us = geomspace(grid.lo, grid.hi, grid.points);
        let mut prev = (0.0, f0);
        for &u in &us {
            let v = self.f(u);
            if v.is_nan() || v <= 0.0 {
                return Err(Error::NotPositive { u, value: v });
            }
            if v < prev.1 * (1.0 - 1e-12) {
                return Err(Error::NonMonotone {
                    u_lo: prev.0,
                    f_lo: prev.1,
                    u_hi: u,
                    f_hi: v,
                });
            }
            prev = (u, v);
        }
        let tail_from = self.tau0.max(grid.lo);
        let w0 = local_scale(self, tail_from);
        let tail = crate::quadrature::integrate_tail(
            |s| (-self.ln_f(s)).exp(),
            tail_from,
            w0,
            crate::quadrature::TailTol {
                rel: 1e-10,
                ..Default::default()
            },
        )?;

        // (C): f' nondecreasing from some grid point on; report the smallest such point
        let conv_from = self.tau0.max(self.tau1);
        let cus: Vec<f64> = us.iter().copied().filter(|&u| u >= conv_from).collect();
        let mut convex_from = None;
        if cus.len() >= 2 {
            let dp: Vec<f64> = cus.iter().map(|&u| self.ln_f_prime(u)).collect();
            let mut start = cus.len() - 1;
            while start > 0 && dp[start - 1] <= dp[start] + 1e-10 * dp[start].abs().max(1.0) {
                start -= 1;
            }
            convex_from = Some(cus[start]);
        }
        Ok(HypothesisReport {
            f_at_zero: f0,
            tail_from,
            tail_integral: tail.value,
            convex_from,
            convex_at_tau: convex_from.map(|c| c <= conv_from * (1.0 + 1e-12) || cus.first() == Some(&c)),
        })
    }

    /// Builds the serializable description of this nonlinearity.
    pub fn spec(&self) -> NonlinearitySpec {
        match &self.family {
            Family::Power { p } => NonlinearitySpec::Power { p: *p },
            Family::PowerSum { p, q } => NonlinearitySpec::PowerSum { p: *p, q: *q },
            Family::PowerLog { p, q, l } => NonlinearitySpec::PowerLog { p: *p, q: *q, l: *l },
            Family::ExpN { n, p } => NonlinearitySpec::ExpN { n: *n, p: *p },
            Family::Custom { f, fprime } => NonlinearitySpec::Custom {
                f: f.source().to_string(),
                fprime: fprime.as_ref().map(|e| e.source().to_string()),
                tau0: Some(self.tau0),
                tau1: Some(self.tau1),
            },
        }
    }
}

/// Scale on which `1/f` decays near `u`: `f(u) / f'(u)`, clamped to `(0, max(u, 1)]`.
pub(crate) fn local_scale(nl: &Nonlinearity, u: f64) -> f64 {
    let w = (nl.ln_f(u) - nl.ln_f_prime(u)).exp();
    let upper = u.max(1.0);
    if w.is_finite() && w > 0.0 {
        w.clamp(upper * 1e-14, upper)
    } else {
        upper
    }
}

/// Sampling grid for hypothesis checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for HypothesisGrid {
    fn default() -> Self {
        HypothesisGrid {
            lo: 1e-6,
            hi: 1e6,
            points: 241,
        }
    }
}

/// Outcome of sampled hypothesis checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub f_at_zero: f64,
    pub tail_from: f64,
    pub tail_integral: f64,
    /// smallest sampled `u ≥ max(τ₀, τ₁)` from which `f'` is nondecreasing on the grid
    pub convex_from: Option<f64>,
    pub convex_at_tau: Option<bool>,
}

/// JSON form of a nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum NonlinearitySpec {
    Power {
        p: f64,
    },
    #[serde(rename = "powersum")]
    PowerSum {
        p: f64,
        q: f64,
    },
    #[serde(rename = "powerlog")]
    PowerLog {
        p: f64,
        q: f64,
        #[serde(rename = "L")]
        l: f64,
    },
    #[serde(rename = "expn")]
    ExpN {
        n: u32,
        p: f64,
    },
    Exp,
    Custom {
        f: String,
        #[serde(default)]
        fprime: Option<String>,
        #[serde(default)]
        tau0: Option<f64>,
        #[serde(default)]
        tau1: Option<f64>,
    },
}

impl NonlinearitySpec {
    pub fn build(&self) -> Result<Nonlinearity> {
        match self {
            NonlinearitySpec::Power { p } => Nonlinearity::power(*p),
            NonlinearitySpec::PowerSum { p, q } => Nonlinearity::power_sum(*p, *q),
            NonlinearitySpec::PowerLog { p, q, l } => Nonlinearity::power_log(*p, *q, *l),
            NonlinearitySpec::ExpN { n, p } => Nonlinearity::exp_n(*n, *p),
            NonlinearitySpec::Exp => Ok(Nonlinearity::exp()),
            NonlinearitySpec::Custom { f, fprime, tau0, tau1 } => Nonlinearity::custom(
                Expr::parse(f)?,
                fprime.as_deref().map(Expr::parse).transpose()?,
                tau0.unwrap_or(1.0),
                *tau1,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let fams = [
            Nonlinearity::power(3.0).unwrap(),
            Nonlinearity::power_sum(3.0, 2.0).unwrap(),
            Nonlinearity::power_log(4.0, -1.0, 10.0).unwrap(),
            Nonlinearity::exp_n(2, 1.0).unwrap(),
            Nonlinearity::exp_n(1, 2.0).unwrap(),
        ];
        for nl in &fams {
            for u in [1.3, 2.0, 3.7, 12.0, 40.0] {
                if nl.f(u + 1e-4).is_infinite() {
                    continue;
                }
                let h = 1e-6 * u;
                let fd = (nl.f(u + h) - nl.f(u - h)) / (2.0 * h);
                let d = nl.f_prime(u);
                assert!((fd - d).abs() <= 1e-6 * d.abs(), "{} at {u}: {fd} vs {d}", nl.label());
                assert!((nl.ln_f(u) - nl.f(u).ln()).abs() < 1e-10 * nl.ln_f(u).abs().max(1.0));
                assert!((nl.ln_f_prime(u) - d.ln()).abs() < 1e-10 * d.ln().abs().max(1.0));
            }
        }
    }

    #[test]
    fn log_space_survives_overflow() {
        let nl = Nonlinearity::exp_n(2, 1.0).unwrap();
        assert!(nl.f(10.0).is_infinite());
        assert!((nl.ln_f(10.0) - 10f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn parameter_validation() {
        assert!(Nonlinearity::power(1.0).is_err());
        assert!(Nonlinearity::power_sum(2.0, 3.0).is_err());
        assert!(Nonlinearity::power_log(4.0, -100.0, 2.0).is_err());
        assert!(Nonlinearity::exp_n(0, 1.0).is_err());
        assert!(Nonlinearity::exp_n(1, -1.0).is_err());
        assert!(Nonlinearity::custom_str("u^2 +", None, 1.0).is_err());
    }

    #[test]
    fn hypothesis_checks() {
        let grid = HypothesisGrid::default();
        let r = Nonlinearity::power(2.0).unwrap().check_hypotheses(&grid).unwrap();
        assert!((r.tail_integral - 1.0).abs() < 1e-9);
        assert_eq!(r.convex_at_tau, Some(true));

        let dec = Nonlinearity::custom_str("1/(1+u)", None, 1.0).unwrap();
        assert!(matches!(dec.check_hypotheses(&grid), Err(Error::NonMonotone { .. })));

        let lin = Nonlinearity::custom_str("u", Some("1"), 1.0).unwrap();
        assert!(matches!(lin.check_hypotheses(&grid), Err(Error::TailDivergent { .. })));

        let zero = Nonlinearity::custom_str("0", Some("0"), 1.0).unwrap();
        assert!(matches!(zero.check_hypotheses(&grid), Err(Error::NotPositive { .. })));

        // u^2 + sin-wiggle is increasing but not convex everywhere
        let wiggle = Nonlinearity::custom_str("u^3 + 0.5*u^2", None, 1.0).unwrap();
        assert!(wiggle.check_hypotheses(&grid).unwrap().convex_from.is_some());
    }

    #[test]
    fn spec_round_trip() {
        let json = r#"{"family":"powerlog","p":4,"q":-1,"L":10}"#;
        let spec: NonlinearitySpec = serde_json::from_str(json).unwrap();
        let nl = spec.build().unwrap();
        assert_eq!(nl.spec(), spec);
        let custom: NonlinearitySpec =
            serde_json::from_str(r#"{"family":"custom","f":"u^2+u^3","fprime":"2*u+3*u^2","tau0":1}"#).unwrap();
        let nl = custom.build().unwrap();
        assert_eq!(nl.f(2.0), 12.0);
        assert_eq!(nl.f_prime(2.0), 16.0);
        assert!(serde_json::from_str::<NonlinearitySpec>(r#"{"family":"power","p":4,"x":1}"#).is_err());
    }
}
