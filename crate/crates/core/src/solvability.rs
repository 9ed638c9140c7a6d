//! Checkable solvability conditions and dilation-critical profiles.
//!
//! Profiles are `μ_λ(x) = ψ(λ|x|^{-θ})` cut off outside a ball. They are
//! evaluated through `ln v = ln λ - θ ln |x|` so that the closed forms stay
//! finite arbitrarily close to the origin.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{discretize, GridField, GridSpec, PointwiseData, RadialPower};
use crate::kernel::{sphere_area, KernelTable};
use crate::nonlinearity::{Calculus, Nonlinearity};
use crate::numeric::geomspace;
use crate::quadrature::{integrate_tail, tanh_sinh, TailTol};
use crate::semigroup::{apply_semigroup, ball_integrals};
use crate::solver::{mild_solve, SolveOptions, Verdict};
use crate::special::{e_n, exp_n, log_n};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictKind {
    NecessaryViolated,
    NecessaryPassed,
    SufficientHolds,
    SufficientFails,
}

/// Where an inequality was decided: `lhs` against `rhs` at `(x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    /// a radius for radial checks, a point for grid checks
    pub x: Vec<f64>,
    pub t: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolvabilityVerdict {
    pub kind: VerdictKind,
    pub witness: Option<Witness>,
    pub parameters: BTreeMap<String, f64>,
}

fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

// ---------------------------------------------------------------------------
// profiles

/// Families of dilation-critical profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DcsKind {
    Generic,
    Power,
    Exp,
    PowerLog,
    ExpN,
}

/// The function `ψ` of a profile.
#[derive(Debug, Clone)]
pub enum Psi {
    /// zero-extended `G⁻¹`
    Generic(Arc<Calculus>),
    /// `c_p v^{1/(p-1)}`
    Power { p: f64 },
    /// `log v` for `v > 1`
    Exp,
    /// `v^{1/(p-1)} (log v)^{-q/(p-1)}` for `v > l`
    PowerLog { p: f64, q: f64, l: f64 },
    /// `(log_n A(v))^{1/p}` with `A(v) = v (log_n v)^{1/p} Π_k (log_k v)^{-1}`, for `v > l`
    ExpN { n: u32, p: f64, l: f64 },
}

/// `ln A(v)` for the generalized exponential family, from `ln v`.
fn ln_a(n: u32, p: f64, ln_v: f64) -> f64 {
    // log_k v = log_{k-1}(ln v)
    let mut sum_logs = 0.0;
    let mut lk = ln_v;
    for _ in 1..n {
        lk = lk.ln();
        sum_logs += lk.ln();
    }
    // here lk = log_n v
    let ln_log1 = ln_v.ln();
    ln_v + lk.ln() / p - (ln_log1 + sum_logs)
}

/// `log_i A(v) / log_i v` for `i = 1..=n`.
pub fn expn_log_ratios(n: u32, p: f64, v: f64) -> Result<Vec<f64>> {
    if !(v > e_n(n)) {
        return Err(Error::LogDomain { arg: v, threshold: e_n(n) });
    }
    let la = ln_a(n, p, v.ln());
    let mut out = Vec::with_capacity(n as usize);
    let (mut a, mut u) = (la, v.ln());
    for i in 1..=n {
        if i > 1 {
            a = a.ln();
            u = u.ln();
        }
        out.push(a / u);
    }
    Ok(out)
}

/// `ψ₀(v) = (log_n A(v))^{1/p}`; fails below `e_n`.
pub fn expn_psi0(n: u32, p: f64, v: f64) -> Result<f64> {
    if !(v > e_n(n)) {
        return Err(Error::LogDomain { arg: v, threshold: e_n(n) });
    }
    Ok(expn_psi_ln(n, p, v.ln()))
}

fn expn_psi_ln(n: u32, p: f64, ln_v: f64) -> f64 {
    let inner = log_n(n - 1, ln_a(n, p, ln_v));
    inner.max(0.0).powf(1.0 / p)
}

/// `ln φ₀(u)` with `φ₀(u) = u^{p-1} Π_{k=1}^n exp_k(u^p)`.
pub fn expn_ln_phi0(n: u32, p: f64, u: f64) -> f64 {
    let up = u.powf(p);
    (p - 1.0) * u.ln() + (1..=n).map(|k| exp_n(k - 1, up)).sum::<f64>()
}

impl Psi {
    /// `ψ(v)` given `ln v`.
    pub fn eval_ln(&self, ln_v: f64) -> f64 {
        if ln_v.is_nan() {
            return f64::NAN;
        }
        match self {
            Psi::Generic(c) => {
                let v = ln_v.min(700.0).exp();
                c.eval_psi_f(v).unwrap_or(f64::NAN)
            }
            Psi::Power { p } => ((ln_v - (p - 1.0).ln()) / (p - 1.0)).exp(),
            Psi::Exp => ln_v.max(0.0),
            Psi::PowerLog { p, q, l } => {
                if ln_v <= l.ln() {
                    0.0
                } else {
                    (ln_v / (p - 1.0)).exp() * ln_v.powf(-q / (p - 1.0))
                }
            }
            Psi::ExpN { n, p, l } => {
                if ln_v <= l.ln() {
                    0.0
                } else {
                    expn_psi_ln(*n, *p, ln_v)
                }
            }
        }
    }

    pub fn eval(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        self.eval_ln(v.ln())
    }

    /// Where `ψ` switches on (`ψ = 0` below).
    pub fn threshold(&self) -> f64 {
        match self {
            Psi::Generic(c) => c.G0(),
            Psi::Power { .. } => 0.0,
            Psi::Exp => 1.0,
            Psi::PowerLog { l, .. } | Psi::ExpN { l, .. } => *l,
        }
    }

    /// Blow-up rate `θ(q_f - 1)` of `ψ(λ|x|^{-θ})`, divided by `θ`.
    fn q_minus_one(&self) -> Result<f64> {
        Ok(match self {
            Psi::Generic(c) => c.q_f()? - 1.0,
            Psi::Power { p } | Psi::PowerLog { p, .. } => 1.0 / (p - 1.0),
            Psi::Exp | Psi::ExpN { .. } => 0.0,
        })
    }
}

/// A profile `μ(x) = ψ(λ|x|^{-θ}) χ_{|x| < r}`.
#[derive(Debug, Clone)]
pub struct DcsSpec {
    pub kind: DcsKind,
    pub psi: Psi,
    pub n: usize,
    pub theta: f64,
    pub lambda: f64,
    pub cutoff_r: f64,
    pub cutoff_shrunk: bool,
}

/// What [`make_dcs`] builds from.
#[derive(Debug, Clone)]
pub enum DcsSource {
    Calculus(Arc<Calculus>),
    Power { p: f64 },
    Exp,
    PowerLog { p: f64, q: f64, l: f64 },
    ExpN { n: u32, p: f64 },
}

/// Smallest point above `e_n` past which `ψ₀` is positive and increasing on a fine grid up to `1e12`.
fn expn_threshold(n: u32, p: f64) -> f64 {
    let start = e_n(n);
    let grid: Vec<f64> = geomspace(1e-9, 1e12, 400).into_iter().map(|d| start + d).collect();
    let vals: Vec<f64> = grid.iter().map(|&v| expn_psi_ln(n, p, v.ln())).collect();
    let mut l = start;
    for i in 0..grid.len() - 1 {
        if !(vals[i] > 0.0 && vals[i + 1] > vals[i]) {
            l = grid[i + 1];
        }
    }
    l
}

/// Builds a profile for dimension `n`, order `theta`, dilation `lambda`.
///
/// Without a cutoff the radius is `(λ/L)^{1/θ}`, `L` being the point where `ψ`
/// switches on (1 for the pure power, which has none). A cutoff reaching
/// outside that radius is shrunk, with a warning.
pub fn make_dcs(src: &DcsSource, kind: DcsKind, n: usize, theta: f64, lambda: f64, cutoff: Option<f64>) -> Result<DcsSpec> {
    if !(1..=3).contains(&n) {
        return Err(invalid("N", format!("must be 1, 2 or 3, got {n}")));
    }
    if !(theta > 0.0 && theta <= 2.0) {
        return Err(invalid("theta", format!("must lie in (0, 2], got {theta}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda", format!("must be positive, got {lambda}")));
    }
    let p_theta = 1.0 + theta / n as f64;
    let psi = match (kind, src) {
        (DcsKind::Generic, DcsSource::Calculus(c)) => Psi::Generic(c.clone()),
        (DcsKind::Power, DcsSource::Power { p }) => {
            if !(*p > p_theta) {
                return Err(invalid("p", format!("must exceed p_θ = {p_theta}, got {p}")));
            }
            Psi::Power { p: *p }
        }
        (DcsKind::Exp, DcsSource::Exp) => Psi::Exp,
        (DcsKind::PowerLog, DcsSource::PowerLog { p, q, l }) => {
            if !(*p > p_theta) {
                return Err(invalid("p", format!("must exceed p_θ = {p_theta}, got {p}")));
            }
            if !(*l > 1.0 && l.ln() > *q) {
                return Err(invalid("L", format!("need L > max(1, e^q) for an increasing profile, got {l}")));
            }
            Psi::PowerLog { p: *p, q: *q, l: *l }
        }
        (DcsKind::ExpN, DcsSource::ExpN { n: k, p }) => {
            if *k < 1 || !(*p > 0.0) {
                return Err(invalid("ExpN", format!("need n ≥ 1 and p > 0, got n = {k}, p = {p}")));
            }
            Psi::ExpN {
                n: *k,
                p: *p,
                l: expn_threshold(*k, *p),
            }
        }
        (k, _) => return Err(invalid("kind", format!("{k:?} does not match the given source"))),
    };
    let l = psi.threshold();
    let natural = if l > 0.0 { (lambda / l).powf(1.0 / theta) } else { f64::INFINITY };
    let mut shrunk = false;
    let cutoff_r = match cutoff {
        Some(r) if !(r > 0.0) => return Err(invalid("cutoff", format!("must be positive, got {r}"))),
        Some(r) if r > natural => {
            warn!(
                "cutoff {r} reaches where λ|x|^(-θ) ≤ {l}; shrinking it to {natural}",
            );
            shrunk = true;
            natural
        }
        Some(r) => r,
        None if natural.is_finite() => natural,
        None => 1.0,
    };
    Ok(DcsSpec {
        kind,
        psi,
        n,
        theta,
        lambda,
        cutoff_r,
        cutoff_shrunk: shrunk,
    })
}

/// Quadrature of a profile over its support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalIntegrability {
    /// `∫_{B_r} μ`
    pub integral: f64,
    /// `N - θ(q_f - 1)`, the margin in the growth exponent
    pub exponent_margin: f64,
    /// `ε₀` used in the check `N + θ(1 - q_f - ε₀) > 0`
    pub eps0: f64,
    pub finite: bool,
}

impl DcsSpec {
    /// `μ` at radius `r`.
    pub fn eval_r(&self, r: f64) -> f64 {
        if r >= self.cutoff_r {
            return 0.0;
        }
        if r <= 0.0 {
            return f64::INFINITY;
        }
        self.psi.eval_ln(self.lambda.ln() - self.theta * r.ln())
    }

    /// Local exponent `a` of `|x|^{-a}` at the origin (zero for logarithmic profiles).
    pub fn singular_exponent(&self) -> Result<f64> {
        Ok(self.theta * self.psi.q_minus_one()?)
    }

    /// Radial quadrature of `μ` over `B_r`, with the exponent check.
    pub fn local_integrability(&self) -> Result<LocalIntegrability> {
        let n = self.n as f64;
        let margin = n - self.singular_exponent()?;
        let eps0 = 0.5 * margin / self.theta;
        let r = self.cutoff_r;
        // ρ = r e^{-s}: ∫_0^r μ ρ^{N-1} dρ = r^N ∫_0^∞ μ(r e^{-s}) e^{-Ns} ds
        let rate = margin.max(1e-3);
        let tail = integrate_tail(
            |s| {
                let v = self.eval_r(r * (-s).exp());
                if v == 0.0 {
                    0.0
                } else {
                    (v.ln() - n * s).exp()
                }
            },
            0.0,
            1.0 / rate,
            TailTol::default(),
        );
        let integral = match tail {
            Ok(t) => sphere_area(self.n) * r.powf(n) * t.value,
            Err(_) => f64::INFINITY,
        };
        Ok(LocalIntegrability {
            integral,
            exponent_margin: margin,
            eps0,
            finite: integral.is_finite() && margin > 0.0 && n + self.theta * (-self.psi.q_minus_one()? - eps0) > 0.0,
        })
    }

    /// Grid version of the profile; power profiles use exact 1D origin-cell averages.
    pub fn to_pointwise(&self) -> Result<Arc<dyn PointwiseData>> {
        if let Psi::Power { p } = self.psi {
            let cp = (p - 1.0).powf(-1.0 / (p - 1.0));
            return Ok(Arc::new(RadialPower {
                coef: cp * self.lambda.powf(1.0 / (p - 1.0)),
                exponent: self.theta / (p - 1.0),
                radius: self.cutoff_r,
            }));
        }
        Ok(Arc::new(DcsData {
            spec: self.clone(),
            exponent: self.singular_exponent()?,
        }))
    }

    pub fn discretize(&self, grid: GridSpec) -> Result<GridField> {
        discretize(self.to_pointwise()?, grid)
    }
}

#[derive(Debug)]
struct DcsData {
    spec: DcsSpec,
    exponent: f64,
}

impl PointwiseData for DcsData {
    fn eval(&self, x: &[f64]) -> f64 {
        let big = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let r = if big == 0.0 {
            0.0
        } else {
            big * x.iter().map(|v| (v / big) * (v / big)).sum::<f64>().sqrt()
        };
        self.spec.eval_r(r)
    }
    fn singular_exponent(&self) -> Option<f64> {
        Some(self.exponent)
    }
}

// ---------------------------------------------------------------------------
// asymptotic pairs

/// Range of a ratio on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bracket {
    pub min: f64,
    pub max: f64,
    pub pass: bool,
}

impl Bracket {
    fn of(values: impl Iterator<Item = f64>, spread: f64) -> Bracket {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut finite = true;
        for v in values {
            finite &= v.is_finite() && v > 0.0;
            min = min.min(v);
            max = max.max(v);
        }
        Bracket {
            min,
            max,
            pass: finite && min > 0.0 && max <= spread * min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    /// `φ(ψ(u))/u`
    pub phi_psi: Bracket,
    /// `φ(u)/G(u)`, when `G` is supplied
    pub phi_over_g: Option<Bracket>,
    /// `(i, u, log_i A(u)/log_i u)` for the generalized exponential pair
    pub log_ratios: Vec<(u32, f64, f64)>,
    pub log_ratio_band: Option<(f64, f64)>,
    pub pass: bool,
}

/// Checks that `φ∘ψ(u)/u` and `φ(u)/G(u)` stay in positive brackets whose
/// width is at most `spread` on `grid`.
pub fn check_asymptotic_pair(
    phi: &dyn Fn(f64) -> f64,
    psi: &dyn Fn(f64) -> f64,
    g: Option<&dyn Fn(f64) -> f64>,
    grid: &[f64],
    spread: f64,
) -> PairReport {
    let phi_psi = Bracket::of(grid.iter().map(|&u| phi(psi(u)) / u), spread);
    let phi_over_g = g.map(|g| Bracket::of(grid.iter().map(|&u| phi(u) / g(u)), spread));
    let pass = phi_psi.pass && phi_over_g.is_none_or(|b| b.pass);
    PairReport {
        phi_psi,
        phi_over_g,
        log_ratios: Vec::new(),
        log_ratio_band: None,
        pass,
    }
}

/// The pair `(φ₀, ψ₀)` of the generalized exponential family, plus the
/// ratios `log_i A(u)/log_i u` at `probe` for `i ≤ n` against `band`.
pub fn check_expn_pair(n: u32, p: f64, grid: &[f64], spread: f64, probe: &[f64], band: (f64, f64)) -> Result<PairReport> {
    let phi_psi = Bracket::of(
        grid.iter().map(|&u| {
            let s = expn_psi_ln(n, p, u.ln());
            (expn_ln_phi0(n, p, s) - u.ln()).exp()
        }),
        spread,
    );
    let mut log_ratios = Vec::new();
    let mut in_band = true;
    for &u in probe {
        for (i, r) in expn_log_ratios(n, p, u)?.into_iter().enumerate() {
            in_band &= band.0 <= r && r <= band.1;
            log_ratios.push((i as u32 + 1, u, r));
        }
    }
    Ok(PairReport {
        pass: phi_psi.pass && in_band,
        phi_psi,
        phi_over_g: None,
        log_ratios,
        log_ratio_band: Some(band),
    })
}

// ---------------------------------------------------------------------------
// pointwise, necessary and sufficient conditions

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PointwiseBound {
    /// `G(μ(x)) ≥ γ|x|^{-θ}`
    Lower { gamma: f64 },
    /// `G(μ(x)) ≤ ε|x|^{-θ}`
    Upper { eps: f64 },
}

/// Samples `G(μ(x))|x|^θ` on `points` radii in `[r·1e-6, r]`.
///
/// A lower bound that holds reads as `NecessaryViolated` (no solution), one that
/// fails as `NecessaryPassed`; an upper bound maps to `SufficientHolds` or
/// `SufficientFails`. The parameters carry the extreme ratios.
pub fn check_pointwise_condition(
    calc: &Calculus,
    mu: &dyn Fn(f64) -> f64,
    theta: f64,
    bound: PointwiseBound,
    r: f64,
    points: usize,
) -> Result<SolvabilityVerdict> {
    if !(r > 0.0) || points < 2 {
        return Err(invalid("r", "need r > 0 and at least two sample points"));
    }
    let mut rows = Vec::with_capacity(points);
    for rho in geomspace(r * 1e-6, r, points) {
        let g = calc.eval_G(mu(rho))?;
        rows.push((rho, g * rho.powf(theta)));
    }
    let (mut lo, mut hi) = (rows[0], rows[0]);
    for &row in &rows {
        if row.1 < lo.1 {
            lo = row;
        }
        if row.1 > hi.1 {
            hi = row;
        }
    }
    let (kind, worst, c, name) = match bound {
        PointwiseBound::Lower { gamma } => {
            let k = if lo.1 >= gamma {
                VerdictKind::NecessaryViolated
            } else {
                VerdictKind::NecessaryPassed
            };
            (k, lo, gamma, "gamma")
        }
        PointwiseBound::Upper { eps } => {
            let k = if hi.1 <= eps {
                VerdictKind::SufficientHolds
            } else {
                VerdictKind::SufficientFails
            };
            (k, hi, eps, "eps")
        }
    };
    Ok(SolvabilityVerdict {
        kind,
        witness: Some(Witness {
            x: vec![worst.0],
            t: None,
            lhs: worst.1,
            rhs: c,
        }),
        parameters: params(&[(name, c), ("min_ratio", lo.1), ("max_ratio", hi.1), ("theta", theta)]),
    })
}

/// Time at which constant data `c` violate `F(S(t)c) ≥ C_* t`: `F(c)/C_*`.
pub fn necessary_violation_time_constant(calc: &Calculus, c: f64, cstar: f64) -> Result<f64> {
    if !(cstar > 0.0 && cstar < 1.0) && cstar != 1.0 {
        return Err(invalid("C_*", format!("must lie in (0, 1], got {cstar}")));
    }
    Ok(calc.eval_F(c)? / cstar)
}

/// Scans `F([S(t)μ](x)) ≥ C_* t` over `t_grid` and the grid cells.
///
/// At the first violating time the crossing is bisected against the last
/// passing time; the witness carries that time and the cell of the maximum.
pub fn check_necessary(
    k: &KernelTable,
    calc: &Calculus,
    u0: &GridField,
    cstar: f64,
    tstar: f64,
    t_grid: &[f64],
) -> Result<SolvabilityVerdict> {
    if !(cstar > 0.0 && cstar <= 1.0) {
        return Err(invalid("C_*", format!("must lie in (0, 1], got {cstar}")));
    }
    let mut ts: Vec<f64> = t_grid.to_vec();
    ts.sort_by(f64::total_cmp);
    if ts.is_empty() || !(ts[0] > 0.0) || ts.iter().any(|&t| t >= tstar) {
        return Err(invalid("t_grid", format!("must be nonempty and inside (0, T_* = {tstar})")));
    }
    // F(sup S(t)μ) - C_* t and the location of the sup
    let gap = |t: f64| -> Result<(f64, Vec<f64>, f64)> {
        let s = apply_semigroup(k, u0, t)?;
        let (mut best, mut at) = (s.background(), None);
        for (i, &v) in s.values().iter().enumerate() {
            if v > best {
                best = v;
                at = Some(i);
            }
        }
        let x = match at {
            Some(i) => s.spec().point(i)[..s.spec().n].to_vec(),
            None => vec![f64::INFINITY; s.spec().n],
        };
        let f = if best > 0.0 { calc.eval_F(best)? } else { calc.F0() };
        Ok((f - cstar * t, x, f))
    };
    let mut last_ok: Option<f64> = None;
    for &t in &ts {
        let (g, x, f) = gap(t)?;
        if g < 0.0 {
            let (mut lo, mut hi) = (last_ok.unwrap_or(0.0), t);
            let mut wit = (x, f);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi || hi - lo <= 1e-14 * hi {
                    break;
                }
                let (gm, xm, fm) = gap(mid)?;
                if gm < 0.0 {
                    hi = mid;
                    wit = (xm, fm);
                } else {
                    lo = mid;
                }
            }
            return Ok(SolvabilityVerdict {
                kind: VerdictKind::NecessaryViolated,
                witness: Some(Witness {
                    x: wit.0,
                    t: Some(hi),
                    lhs: wit.1,
                    rhs: cstar * hi,
                }),
                parameters: params(&[("C_star", cstar), ("T_star", tstar), ("violation_time", hi), ("first_failing_grid_time", t)]),
            });
        }
        last_ok = Some(t);
    }
    Ok(SolvabilityVerdict {
        kind: VerdictKind::NecessaryPassed,
        witness: None,
        parameters: params(&[("C_star", cstar), ("T_star", tstar)]),
    })
}

/// Sampling settings of [`check_sufficient`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SufficientConfig {
    /// range and size of the sample on which `β ≤ f'F ≤ 1 + β - δ` is checked
    pub u_lo: f64,
    pub u_hi: f64,
    pub u_points: usize,
    /// `σ` runs over `[sigma_min_frac, 1] · T^{1/θ}`
    pub sigma_min_frac: f64,
    pub sigma_points: usize,
}

impl Default for SufficientConfig {
    fn default() -> Self {
        SufficientConfig {
            u_lo: 10.0,
            u_hi: 1e6,
            u_points: 61,
            sigma_min_frac: 1e-3,
            sigma_points: 31,
        }
    }
}

/// `(N/σ^N) ∫_0^σ G(μ(ρ))^β ρ^{N-1} dρ`, the average over the ball centred at the origin.
pub fn centered_ball_average(calc: &Calculus, mu: &dyn Fn(f64) -> f64, n: usize, beta: f64, sigma: f64) -> Result<f64> {
    let nf = n as f64;
    let mut err = None;
    let q = tanh_sinh(
        |s| {
            // ρ = σ s^{1/N}·... keeps the weight ρ^{N-1} dρ = σ^N/N ds
            let rho = sigma * s.powf(1.0 / nf);
            let m = mu(rho);
            if !m.is_finite() {
                // only at the endpoint node where ρ underflows to 0
                return 0.0;
            }
            match calc.eval_G(m) {
                Ok(g) if g.is_finite() => g.powf(beta),
                Ok(_) => 0.0,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        1.0,
        1e-12,
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok(q.value)
}

/// The sufficient condition: the `β` window, `β ≤ f'F ≤ 1 + β - δ` on a
/// sampled tail, and `sup_x avg_{B(x,σ)} G(μ)^β ≤ ε σ^{-βθ}` for
/// `σ < T^{1/θ}`.
///
/// The sup is taken at the origin for the radial profile `mu` and, when a
/// grid field is given, also over sliding balls of radius at least one cell.
#[allow(clippy::too_many_arguments)]
pub fn check_sufficient(
    calc: &Calculus,
    mu: &dyn Fn(f64) -> f64,
    grid: Option<&GridField>,
    n: usize,
    theta: f64,
    beta: f64,
    delta: f64,
    eps: f64,
    t_end: f64,
    cfg: &SufficientConfig,
) -> Result<SolvabilityVerdict> {
    let q = calc.q_f()?;
    let (lo, hi) = (q - 1.0, q.min(n as f64 / theta));
    if lo >= hi {
        return Err(Error::BetaWindowEmpty { lo, hi });
    }
    if !(beta > lo && beta < hi) {
        return Err(invalid("beta", format!("must lie in ({lo}, {hi}), got {beta}")));
    }
    if !(delta > 0.0 && q < 1.0 + beta - delta) {
        return Err(invalid("delta", format!("need δ > 0 and q_f < 1 + β - δ, got δ = {delta}")));
    }
    if !(eps > 0.0 && t_end > 0.0) {
        return Err(invalid("eps", "ε and T must be positive"));
    }
    let mut base = params(&[("beta", beta), ("delta", delta), ("eps", eps), ("T", t_end), ("q_f", q)]);

    // sandwich on the sampled tail: τ* is the first sample after the last failure
    let us = geomspace(cfg.u_lo, cfg.u_hi, cfg.u_points);
    let mut tau_star = None;
    let mut last_fail = None;
    for (i, &u) in us.iter().enumerate() {
        let r = calc.growth_ratio(u)?;
        let ok = beta <= r + 1e-12 && r <= 1.0 + beta - delta + 1e-12;
        if !ok {
            last_fail = Some((u, r));
            tau_star = None;
        } else if tau_star.is_none() {
            tau_star = Some(i);
        }
    }
    let Some(ti) = tau_star else {
        let (u, r) = last_fail.unwrap();
        return Ok(SolvabilityVerdict {
            kind: VerdictKind::SufficientFails,
            witness: Some(Witness {
                x: vec![u],
                t: None,
                lhs: r,
                rhs: if r < beta { beta } else { 1.0 + beta - delta },
            }),
            parameters: base,
        });
    };
    base.insert("tau_star".into(), us[ti]);

    let s_max = t_end.powf(1.0 / theta);
    let mut worst: Option<(f64, Vec<f64>, f64, f64)> = None;
    let g_field = match grid {
        Some(g) => {
            let vals: Result<Vec<f64>> = g.values().iter().map(|&v| Ok(calc.eval_G(v)?.powf(beta))).collect();
            let bg = calc.eval_G(g.background())?.powf(beta);
            Some(GridField::from_values(*g.spec(), vals?, bg)?)
        }
        None => None,
    };
    for sigma in geomspace(cfg.sigma_min_frac * s_max, s_max, cfg.sigma_points) {
        let bound = eps * sigma.powf(-beta * theta);
        let mut cands = vec![(centered_ball_average(calc, mu, n, beta, sigma)?, vec![0.0; n])];
        if let Some(g) = &g_field {
            if sigma >= g.spec().h() {
                let vol = PI.powf(n as f64 / 2.0) / statrs::function::gamma::gamma(n as f64 / 2.0 + 1.0) * sigma.powi(n as i32);
                let balls = ball_integrals(g, sigma);
                let (i, m) = balls
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
                cands.push((m / vol, g.spec().point(i)[..n].to_vec()));
            }
        }
        for (avg, x) in cands {
            let ratio = avg / bound;
            if worst.as_ref().is_none_or(|w| ratio > w.0) {
                worst = Some((ratio, x, avg, bound));
            }
        }
    }
    let (ratio, x, avg, bound) = worst.expect("nonempty σ grid");
    base.insert("worst_ratio".into(), ratio);
    Ok(SolvabilityVerdict {
        kind: if ratio <= 1.0 {
            VerdictKind::SufficientHolds
        } else {
            VerdictKind::SufficientFails
        },
        witness: Some(Witness {
            x,
            t: None,
            lhs: avg,
            rhs: bound,
        }),
        parameters: base,
    })
}

// ---------------------------------------------------------------------------
// λ sweeps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub points: usize,
    #[serde(default)]
    pub bisections: usize,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_min > 0.0 && self.lambda_min < self.lambda_max && self.lambda_max.is_finite()) {
            return Err(invalid("sweep", "need 0 < lambda_min < lambda_max"));
        }
        if self.points < 2 {
            return Err(invalid("sweep.points", "need at least two points"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub verdict: Verdict,
    #[serde(rename = "T_reached")]
    pub t_reached: f64,
    pub sup_final: f64,
    pub residual_final: f64,
    pub refinement_stable: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    /// sorted by `λ`, bisection points included
    pub rows: Vec<SweepRow>,
    pub lambda_lo: Option<f64>,
    pub lambda_hi: Option<f64>,
    /// bracket after each bisection
    pub history: Vec<(f64, f64)>,
}

/// Everything a sweep needs besides the profile family.
pub struct SweepSetup<'a> {
    pub kernel: &'a KernelTable,
    pub nonlinearity: &'a Nonlinearity,
    pub grid: GridSpec,
    pub t_end: f64,
    pub dt: f64,
    pub options: SolveOptions,
}

fn sweep_point(make: &(dyn Fn(f64) -> Result<DcsSpec> + Sync), setup: &SweepSetup, lambda: f64) -> Result<SweepRow> {
    let u0 = make(lambda)?.discretize(setup.grid)?;
    let r = mild_solve(setup.kernel, setup.nonlinearity, &u0, setup.t_end, setup.dt, &setup.options)?;
    Ok(SweepRow {
        lambda,
        verdict: r.verdict,
        t_reached: r.t_reached,
        sup_final: *r.sup_history.last().unwrap_or(&0.0),
        residual_final: r.final_residual,
        refinement_stable: r.refinement_stable,
    })
}

fn check_monotone(rows: &[SweepRow]) -> Result<()> {
    let first_blowup = rows.iter().find(|r| r.verdict == Verdict::BlowUpEvidence);
    if let Some(b) = first_blowup {
        if let Some(c) = rows.iter().rev().find(|r| r.verdict == Verdict::Converged && r.lambda > b.lambda) {
            return Err(Error::NonMonotoneSweep {
                converged: c.lambda,
                blowup: b.lambda,
            });
        }
    }
    Ok(())
}

/// Geometric sweep of `λ` followed by geometric bisection of the bracket
/// between the largest converged and the smallest blowing-up `λ`.
pub fn bracket_lambda0(
    make: &(dyn Fn(f64) -> Result<DcsSpec> + Sync),
    setup: &SweepSetup,
    sweep: &SweepConfig,
) -> Result<SweepResult> {
    sweep.validate()?;
    let lambdas = geomspace(sweep.lambda_min, sweep.lambda_max, sweep.points);
    let mut rows: Vec<SweepRow> = lambdas
        .par_iter()
        .map(|&l| sweep_point(make, setup, l))
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    check_monotone(&rows)?;
    let mut lo = rows.iter().rev().find(|r| r.verdict == Verdict::Converged).map(|r| r.lambda);
    let mut hi = rows.iter().find(|r| r.verdict == Verdict::BlowUpEvidence).map(|r| r.lambda);
    let mut history = Vec::new();
    if let (Some(l), Some(h)) = (lo, hi) {
        let (mut l, mut h) = (l, h);
        history.push((l, h));
        for _ in 0..sweep.bisections {
            let mid = (l * h).sqrt();
            let row = sweep_point(make, setup, mid)?;
            let v = row.verdict;
            rows.push(row);
            match v {
                Verdict::Converged => l = mid,
                Verdict::BlowUpEvidence => h = mid,
                Verdict::Inconclusive => break,
            }
            history.push((l, h));
        }
        rows.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        check_monotone(&rows)?;
        lo = Some(l);
        hi = Some(h);
    }
    Ok(SweepResult {
        rows,
        lambda_lo: lo,
        lambda_hi: hi,
        history,
    })
}

/// Writes the sweep table as CSV.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "lambda,verdict,T_reached,sup_final,residual_final,refinement_stable")?;
    for r in rows {
        let stable = match r.refinement_stable {
            Some(b) => b.to_string(),
            None => String::new(),
        };
        writeln!(
            w,
            "{:e},{:?},{:e},{:e},{:e},{}",
            r.lambda, r.verdict, r.t_reached, r.sup_final, r.residual_final, stable
        )?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::{build_calculus, QuadratureConfig};

    fn calc(nl: Nonlinearity) -> Arc<Calculus> {
        Arc::new(build_calculus(&nl, &QuadratureConfig::default()).unwrap())
    }

    #[test]
    fn power_profile_constant() {
        let d = make_dcs(&DcsSource::Power { p: 4.0 }, DcsKind::Power, 1, 2.0, 1.0, None).unwrap();
        let c4 = 3f64.powf(-1.0 / 3.0);
        for r in [1e-6, 0.01, 0.5] {
            assert!((d.eval_r(r) - c4 * r.powf(-2.0 / 3.0)).abs() < 1e-12 * d.eval_r(r));
        }
        assert_eq!(d.cutoff_r, 1.0);
        assert_eq!(d.eval_r(1.5), 0.0);
    }

    #[test]
    fn expn_reduces_to_exp() {
        let a = make_dcs(&DcsSource::ExpN { n: 1, p: 1.0 }, DcsKind::ExpN, 1, 2.0, 3.0, None).unwrap();
        let b = make_dcs(&DcsSource::Exp, DcsKind::Exp, 1, 2.0, 3.0, None).unwrap();
        for r in geomspace(1e-8, 1.5, 50) {
            assert!((a.eval_r(r) - b.eval_r(r)).abs() <= 1e-12 * b.eval_r(r).max(1.0), "{r}");
        }
        let c = make_dcs(&DcsSource::ExpN { n: 1, p: 1.0 }, DcsKind::ExpN, 1, 2.0, 1.0, None).unwrap();
        assert!((c.eval_r((-1f64).exp()) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn cutoff_is_shrunk_into_the_log_domain() {
        let d = make_dcs(&DcsSource::Exp, DcsKind::Exp, 1, 2.0, 4.0, Some(5.0)).unwrap();
        assert!(d.cutoff_shrunk);
        assert!((d.cutoff_r - 2.0).abs() < 1e-14);
        assert!(matches!(expn_psi0(2, 1.0, 2.0), Err(Error::LogDomain { .. })));
    }

    #[test]
    fn local_integrability_of_power_profile() {
        // ∫_{-1}^{1} c|x|^{-2/3} dx = 6c
        let d = make_dcs(&DcsSource::Power { p: 4.0 }, DcsKind::Power, 1, 2.0, 1.0, None).unwrap();
        let li = d.local_integrability().unwrap();
        let c4 = 3f64.powf(-1.0 / 3.0);
        assert!(li.finite);
        assert!((li.integral - 6.0 * c4).abs() < 1e-9, "{}", li.integral);
        assert!((li.exponent_margin - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pointwise_ratio_is_the_dilation() {
        let c = calc(Nonlinearity::power(3.0).unwrap());
        let d = make_dcs(&DcsSource::Calculus(c.clone()), DcsKind::Generic, 1, 1.5, 0.7, Some(1.0)).unwrap();
        let v = check_pointwise_condition(&c, &|r| d.eval_r(r), 1.5, PointwiseBound::Lower { gamma: 0.5 }, 0.9, 40).unwrap();
        assert_eq!(v.kind, VerdictKind::NecessaryViolated);
        assert!((v.parameters["min_ratio"] - 0.7).abs() < 1e-10);
        assert!((v.parameters["max_ratio"] - 0.7).abs() < 1e-10);
    }

    #[test]
    fn necessary_equality_case() {
        use crate::grid::Constant;
        use crate::kernel::{build_kernel, KernelConfig};
        let c = calc(Nonlinearity::power(2.0).unwrap());
        let k = build_kernel(1, 2.0, &KernelConfig::default()).unwrap();
        let u0 = discretize(Arc::new(Constant(2.0)), GridSpec::new(1, 4.0, 64).unwrap()).unwrap();
        assert_eq!(necessary_violation_time_constant(&c, 2.0, 1.0).unwrap(), 0.5);
        let ts = geomspace(0.01, 5.0, 30);
        let v = check_necessary(&k, &c, &u0, 1.0, 10.0, &ts).unwrap();
        assert_eq!(v.kind, VerdictKind::NecessaryViolated);
        assert!((v.witness.unwrap().t.unwrap() - 0.5).abs() < 1e-10);
        let pass = check_necessary(&k, &c, &u0, 1.0, 10.0, &geomspace(0.01, 0.49, 10)).unwrap();
        assert_eq!(pass.kind, VerdictKind::NecessaryPassed);
    }

    #[test]
    fn beta_window() {
        let c = calc(Nonlinearity::power(4.0).unwrap());
        let mu = |r: f64| 0.1 * r.powf(-2.0 / 3.0);
        let v = check_sufficient(&c, &mu, None, 1, 2.0, 0.45, 0.1, 10.0, 0.01, &SufficientConfig::default()).unwrap();
        assert!(v.parameters.contains_key("tau_star"));
        assert!(check_sufficient(&c, &mu, None, 1, 2.0, 0.6, 0.1, 1.0, 0.01, &SufficientConfig::default()).is_err());
        let sub = calc(Nonlinearity::power(2.0).unwrap());
        assert!(matches!(
            check_sufficient(&sub, &mu, None, 1, 2.0, 0.45, 0.1, 1.0, 0.01, &SufficientConfig::default()),
            Err(Error::BetaWindowEmpty { .. })
        ));
    }

    #[test]
    fn centred_average_closed_form() {
        let c = calc(Nonlinearity::power(4.0).unwrap());
        let (eps0, beta, theta) = (0.3, 0.4, 2.0);
        let mu = |r: f64| c.eval_psi_f(eps0 * r.powf(-theta)).unwrap();
        for sigma in [1e-3, 0.1, 1.0] {
            let a = centered_ball_average(&c, &mu, 1, beta, sigma).unwrap();
            let exact = eps0.powf(beta) * sigma.powf(-beta * theta) / (1.0 - beta * theta);
            assert!((a - exact).abs() < 1e-8 * exact, "{a} vs {exact}");
        }
    }

    #[test]
    fn expn_pair_limits() {
        let r = check_expn_pair(1, 1.0, &geomspace(1e3, 1e12, 20), 1.01, &[1e12], (0.99, 1.01)).unwrap();
        assert!(r.pass);
        assert!((r.phi_psi.min - 1.0).abs() < 1e-12);
        let r2 = check_expn_pair(2, 1.0, &geomspace(1e3, 1e12, 20), 2.0, &[1e12], (0.99, 1.01)).unwrap();
        // log A / log u = 1 - log log u / log u for n = 2, p = 1
        let lu = 1e12f64.ln();
        assert!((r2.log_ratios[0].2 - (1.0 - lu.ln() / lu)).abs() < 1e-14);
    }

    #[test]
    fn sweep_rejects_bad_ranges() {
        let s = SweepConfig {
            lambda_min: 1.0,
            lambda_max: 0.5,
            points: 3,
            bisections: 0,
        };
        assert!(s.validate().is_err());
    }
}
