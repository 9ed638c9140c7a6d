use serde::{Deserialize, Serialize};

use super::{local_scale, Family, HypothesisGrid, HypothesisReport, Nonlinearity};
use crate::error::{invalid, Error, Result};
use crate::numeric::{geomspace, invert_increasing, poly_fit, poly_fit_at, Inversion};
use crate::quadrature::{integrate, integrate_tail, QuadTol, TailTol};

/// `q_f - 1` below this is treated as `q_f = 1`, i.e. `p_f = ∞`.
const UNIT_TOL: f64 = 1e-6;
/// `|p_f - p_θ|` below this classifies as critical.
pub const CRITICAL_TOL: f64 = 1e-3;
/// Largest `ln f(u)` used when estimating `q_f`.
const LN_F_MAX: f64 = 1e6;

/// Numerical settings for [`build_calculus`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// largest abscissa reached by tail integrals
    pub u_max: f64,
    pub rel_tol: f64,
    /// upper bracket cap for `ψ_f`
    pub psi_cap: f64,
    /// use closed forms for built-in families when available
    pub closed_forms: bool,
    pub hypothesis_grid: HypothesisGrid,
    pub qf_grid: QfGrid,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            u_max: 1e300,
            rel_tol: 1e-12,
            psi_cap: 1e300,
            closed_forms: true,
            hypothesis_grid: HypothesisGrid::default(),
            qf_grid: QfGrid::default(),
        }
    }
}

impl QuadratureConfig {
    /// Same settings with closed forms disabled.
    pub fn numeric() -> Self {
        QuadratureConfig {
            closed_forms: false,
            ..Default::default()
        }
    }
}

/// Geometric grid for the `q_f` estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QfGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// number of trailing points used for extrapolation
    pub tail: usize,
}

impl Default for QfGrid {
    fn default() -> Self {
        QfGrid {
            lo: 1e2,
            hi: 1e12,
            points: 60,
            tail: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Closed {
    Power { p: f64 },
    Exp,
    None,
}

/// `F`, `G`, `ψ_f`, `q_f`, `p_f` for a nonlinearity.
#[derive(Debug, Clone)]
pub struct Calculus {
    nl: Nonlinearity,
    cfg: QuadratureConfig,
    closed: Closed,
    f0: f64,
    f0_estimated: bool,
    q_f: Option<f64>,
    q_estimated: bool,
    hypotheses: HypothesisReport,
}

/// Builds the calculus of `nl`, checking (M) and (S) on the configured grid.
pub fn build_calculus(nl: &Nonlinearity, cfg: &QuadratureConfig) -> Result<Calculus> {
    if !(cfg.rel_tol > 0.0 && cfg.rel_tol < 1e-2) {
        return Err(invalid("rel_tol", format!("must lie in (0, 0.01), got {}", cfg.rel_tol)));
    }
    let hypotheses = nl.check_hypotheses(&cfg.hypothesis_grid)?;
    let closed = if cfg.closed_forms {
        match nl.family() {
            Family::Power { p } => Closed::Power { p: *p },
            Family::ExpN { n: 1, p } if *p == 1.0 => Closed::Exp,
            _ => Closed::None,
        }
    } else {
        Closed::None
    };
    let closed_q = match nl.family() {
        Family::Power { p } | Family::PowerSum { p, .. } | Family::PowerLog { p, .. } => Some(p / (p - 1.0)),
        Family::ExpN { .. } => Some(1.0),
        Family::Custom { .. } => None,
    };
    let mut calc = Calculus {
        nl: nl.clone(),
        cfg: cfg.clone(),
        closed,
        f0: f64::INFINITY,
        f0_estimated: false,
        q_f: None,
        q_estimated: false,
        hypotheses,
    };
    match closed {
        Closed::Power { .. } => {}
        Closed::Exp => calc.f0 = 1.0,
        Closed::None => {
            calc.f0 = calc.numeric_f0()?;
            calc.f0_estimated = true;
        }
    }
    match closed_q.filter(|_| cfg.closed_forms) {
        Some(q) => calc.q_f = Some(q),
        None => {
            calc.q_estimated = true;
            match estimate_qf(&calc, &cfg.qf_grid) {
                Ok(est) => calc.q_f = Some(est.q_hat.max(1.0)),
                Err(e) => log::warn!("q_f unavailable for {}: {e}", nl.label()),
            }
        }
    }
    Ok(calc)
}

#[allow(non_snake_case)]
impl Calculus {
    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nl
    }

    pub fn config(&self) -> &QuadratureConfig {
        &self.cfg
    }

    pub fn hypotheses(&self) -> &HypothesisReport {
        &self.hypotheses
    }

    fn tail_tol(&self) -> TailTol {
        TailTol {
            rel: self.cfg.rel_tol,
            u_max: self.cfg.u_max,
            ..Default::default()
        }
    }

    /// `F(u) = ∫_u^∞ ds/f(s)` for `u > 0`.
    pub fn eval_F(&self, u: f64) -> Result<f64> {
        if !(u > 0.0) {
            return Err(Error::Domain { what: "F", value: u });
        }
        match self.closed {
            Closed::Power { p } => Ok(u.powf(1.0 - p) / (p - 1.0)),
            Closed::Exp => Ok((-u).exp()),
            Closed::None => {
                if u.is_infinite() {
                    return Ok(0.0);
                }
                let nl = &self.nl;
                let t = integrate_tail(|s| (-nl.ln_f(s)).exp(), u, local_scale(nl, u), self.tail_tol())?;
                Ok(t.value)
            }
        }
    }

    /// `G(u) = 1/F(u)` with `G(0) = G₀`.
    pub fn eval_G(&self, u: f64) -> Result<f64> {
        if u < 0.0 || u.is_nan() {
            return Err(Error::Domain { what: "G", value: u });
        }
        if u == 0.0 {
            return Ok(self.G0());
        }
        match self.closed {
            Closed::Power { p } => Ok((p - 1.0) * u.powf(p - 1.0)),
            Closed::Exp => Ok(u.exp()),
            Closed::None => Ok(1.0 / self.eval_F(u)?),
        }
    }

    /// Zero-extended inverse of `G`.
    pub fn eval_psi_f(&self, v: f64) -> Result<f64> {
        if v < 0.0 || v.is_nan() {
            return Err(Error::Domain { what: "psi_f", value: v });
        }
        if v <= self.G0() {
            return Ok(0.0);
        }
        match self.closed {
            Closed::Power { p } => Ok((v / (p - 1.0)).powf(1.0 / (p - 1.0))),
            Closed::Exp => Ok(v.ln()),
            Closed::None => {
                if v.is_infinite() {
                    return Ok(f64::INFINITY);
                }
                let mut err = None;
                let inv = invert_increasing(
                    |u| match self.eval_G(u) {
                        Ok(g) => g,
                        Err(e) => {
                            err.get_or_insert(e);
                            f64::INFINITY
                        }
                    },
                    v,
                    1.0,
                    1e-300,
                    self.cfg.psi_cap,
                    200,
                );
                if let Some(e) = err {
                    return Err(e);
                }
                match inv {
                    Inversion::Found(u) => Ok(u),
                    Inversion::BelowFloor => Ok(0.0),
                    Inversion::AboveCap => Err(Error::BracketFailure {
                        what: "G",
                        target: v,
                        cap: self.cfg.psi_cap,
                    }),
                }
            }
        }
    }

    /// `F⁻¹(σ)` for `σ ∈ (0, F₀)`.
    pub fn eval_F_inv(&self, sigma: f64) -> Result<f64> {
        if !(sigma > 0.0) || sigma >= self.F0() {
            return Err(Error::InversionFailure { sigma });
        }
        match self.closed {
            Closed::Power { p } => Ok(((p - 1.0) * sigma).powf(-1.0 / (p - 1.0))),
            Closed::Exp => Ok(-sigma.ln()),
            Closed::None => match self.eval_psi_f(1.0 / sigma) {
                Ok(u) if u > 0.0 => Ok(u),
                _ => Err(Error::InversionFailure { sigma }),
            },
        }
    }

    /// `F₀ = lim_{u→0} F(u)`, possibly infinite.
    pub fn F0(&self) -> f64 {
        self.f0
    }

    /// Whether `F₀` came from quadrature rather than a closed form.
    pub fn F0_estimated(&self) -> bool {
        self.f0_estimated
    }

    pub fn G0(&self) -> f64 {
        if self.f0.is_infinite() {
            0.0
        } else {
            1.0 / self.f0
        }
    }

    /// `q_f`, if it was available in closed form or could be estimated.
    pub fn q_f(&self) -> Result<f64> {
        self.q_f.ok_or(Error::NoLimit { spread: f64::NAN })
    }

    pub fn q_f_estimated(&self) -> bool {
        self.q_estimated
    }

    /// Hölder conjugate of `q_f`; infinite when `q_f = 1`.
    pub fn p_f(&self) -> Result<f64> {
        Ok(conjugate(self.q_f()?))
    }

    /// `f'(u) F(u)`, computed as one scaled integral so that it stays finite
    /// when `f` overflows.
    pub fn growth_ratio(&self, u: f64) -> Result<f64> {
        if !(u > 0.0) {
            return Err(Error::Domain { what: "f'F", value: u });
        }
        match self.closed {
            Closed::Power { p } => Ok(p / (p - 1.0)),
            Closed::Exp => Ok(1.0),
            Closed::None => {
                let nl = &self.nl;
                let lfp = nl.ln_f_prime(u);
                let t = integrate_tail(|s| (lfp - nl.ln_f(s)).exp(), u, local_scale(nl, u), self.tail_tol())?;
                Ok(t.value)
            }
        }
    }

    /// Checks `(1/(2q)) f'(u) ≤ G(u) ≤ (2/q) f'(u)` on a grid; equivalently
    /// `q / (f'F) ∈ [1/2, 2]`.
    pub fn check_sandwich(&self, grid: &[f64]) -> Result<SandwichReport> {
        let q = self.q_f()?;
        let mut ratios = Vec::with_capacity(grid.len());
        for &u in grid {
            ratios.push((u, q / self.growth_ratio(u)?));
        }
        let ok = |r: f64| (0.5..=2.0).contains(&r);
        let mut start = ratios.len();
        while start > 0 && ok(ratios[start - 1].1) {
            start -= 1;
        }
        Ok(SandwichReport {
            threshold: ratios.get(start).map(|r| r.0),
            ratios,
        })
    }

    fn numeric_f0(&self) -> Result<f64> {
        let nl = &self.nl;
        let inv = |s: f64| 1.0 / nl.f(s);
        let tol = QuadTol::rel(self.cfg.rel_tol);
        let f_one = self.eval_F(1.0)?;
        if nl.f(0.0) > 0.0 {
            return Ok(integrate(inv, 0.0, 1.0, tol).value + f_one);
        }
        // f(0) = 0: sum dyadic shells towards the origin until they shrink geometrically
        let mut sum = f_one;
        let mut prev = f64::NAN;
        let mut flat = 0;
        let mut prev_est = f64::NAN;
        for k in 0..1000 {
            let hi = 0.5f64.powi(k);
            let d = integrate(inv, 0.5 * hi, hi, tol).value;
            if !d.is_finite() {
                return Ok(f64::INFINITY);
            }
            sum += d;
            if sum > 1e300 {
                return Ok(f64::INFINITY);
            }
            let r = d / prev;
            prev = d;
            if !(r < 0.999) {
                flat += (r >= 0.999) as usize;
                if flat >= 30 {
                    return Ok(f64::INFINITY);
                }
                prev_est = f64::NAN;
                continue;
            }
            flat = 0;
            let est = sum + d * r / (1.0 - r);
            if d == 0.0 || (est - prev_est).abs() <= self.cfg.rel_tol * est {
                return Ok(est);
            }
            prev_est = est;
        }
        Ok(f64::INFINITY)
    }
}

fn conjugate(q: f64) -> f64 {
    if q - 1.0 <= UNIT_TOL {
        f64::INFINITY
    } else {
        q / (q - 1.0)
    }
}

/// Output of [`Calculus::check_sandwich`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    /// smallest grid point from which the sandwich holds to the end of the grid
    pub threshold: Option<f64>,
    /// `(u, q G(u) / f'(u))`
    pub ratios: Vec<(f64, f64)>,
}

/// Limit estimate of `f'(u) F(u)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QfEstimate {
    pub q_hat: f64,
    /// `(u, f'(u) F(u))` on the grid actually used
    pub sequence: Vec<(f64, f64)>,
    /// spread of the trailing values
    pub spread: f64,
    pub converged: bool,
}

/// Estimates `q_f` from `f'F` on a geometric grid, extrapolating the trailing
/// values quadratically in `h = 1/ln f(u)`.
///
/// The top of the grid is lowered to where `ln f` reaches `1e6`; if that
/// leaves fewer than four decades, the bottom moves down as well (but not
/// below `max(τ₀, τ₁, 1)`).
pub fn estimate_qf(calc: &Calculus, grid: &QfGrid) -> Result<QfEstimate> {
    if !(grid.lo > 0.0 && grid.hi > grid.lo) || grid.points < 4 || grid.tail < 3 || grid.tail > grid.points {
        return Err(invalid("qf_grid", format!("{grid:?}")));
    }
    let nl = calc.nonlinearity();
    let mut hi = grid.hi;
    let lnf_hi = nl.ln_f(hi);
    if !(lnf_hi <= LN_F_MAX) {
        hi = match invert_increasing(|u| nl.ln_f(u), LN_F_MAX, grid.lo, 1e-300, grid.hi, 200) {
            Inversion::Found(u) => u,
            _ => grid.hi,
        };
    }
    let floor = nl.tau0().max(nl.tau1()).max(1.0);
    let lo = if hi >= grid.lo * 1e4 {
        grid.lo
    } else {
        (hi * 1e-4).max(floor)
    };
    if !(hi > lo) {
        return Err(invalid("qf_grid", format!("empty range after clamping: [{lo}, {hi}]")));
    }
    let us = geomspace(lo, hi, grid.points);
    let mut sequence = Vec::with_capacity(us.len());
    for &u in &us {
        sequence.push((u, calc.growth_ratio(u)?));
    }
    let tail = &sequence[sequence.len() - grid.tail..];
    let vals: Vec<f64> = tail.iter().map(|t| t.1).collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = max - min;
    let last = *vals.last().unwrap();
    if !spread.is_finite() {
        return Err(Error::NoLimit { spread });
    }
    let scale = last.abs().max(1.0);
    if spread <= 1e-10 * scale {
        return Ok(QfEstimate {
            q_hat: last,
            sequence,
            spread,
            converged: true,
        });
    }
    // monotone Cauchy test: increments keep one sign and shrink
    let diffs: Vec<f64> = vals.windows(2).map(|w| w[1] - w[0]).collect();
    let noise = 1e-11 * scale;
    let one_sign = diffs.iter().all(|&d| d >= -noise) || diffs.iter().all(|&d| d <= noise);
    let shrinking = diffs.windows(2).all(|w| w[1].abs() <= w[0].abs() * 1.05 + noise);
    if !(one_sign && shrinking) {
        return Err(Error::NoLimit { spread });
    }
    let hs: Vec<f64> = tail
        .iter()
        .map(|&(u, _)| {
            let l = nl.ln_f(u);
            if l > 1.0 {
                1.0 / l
            } else {
                1.0 / u
            }
        })
        .collect();
    let fit = poly_fit(&hs, &vals, 2);
    let mut q_hat = poly_fit_at(&fit, 0.0);
    // fall back to the raw tail if the extrapolation wanders further than the tail itself moved
    if !q_hat.is_finite() || (q_hat - last).abs() > 10.0 * spread {
        q_hat = last;
    }
    Ok(QfEstimate {
        q_hat,
        sequence,
        spread,
        converged: true,
    })
}

/// Subcritical, critical or supercritical relative to `p_θ = 1 + θ/N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criticality {
    Subcritical,
    Critical,
    Supercritical,
}

/// Output of [`classify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    pub q_f: f64,
    /// `None` encodes `p_f = ∞`
    #[serde(serialize_with = "ser_inf")]
    pub p_f: f64,
    pub p_theta: f64,
    pub class: Criticality,
}

fn ser_inf<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

/// Compares `p_f` with `p_θ = 1 + θ/N`.
pub fn classify(calc: &Calculus, n: usize, theta: f64) -> Result<Classification> {
    if !(1..=3).contains(&n) {
        return Err(invalid("N", format!("dimension must be 1, 2 or 3, got {n}")));
    }
    if !(theta > 0.0 && theta <= 2.0) {
        return Err(invalid("theta", format!("must lie in (0, 2], got {theta}")));
    }
    let q_f = calc.q_f()?;
    let p_f = conjugate(q_f);
    let p_theta = 1.0 + theta / n as f64;
    let class = if p_f.is_infinite() {
        Criticality::Supercritical
    } else if (p_f - p_theta).abs() <= CRITICAL_TOL {
        Criticality::Critical
    } else if p_f > p_theta {
        Criticality::Supercritical
    } else {
        Criticality::Subcritical
    };
    Ok(Classification {
        q_f,
        p_f,
        p_theta,
        class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn calc(nl: Nonlinearity) -> Calculus {
        build_calculus(&nl, &QuadratureConfig::default()).unwrap()
    }

    #[test]
    fn closed_forms() {
        let c = calc(Nonlinearity::power(2.0).unwrap());
        assert_eq!(c.eval_F(1.0).unwrap(), 1.0);
        assert_eq!(c.F0(), f64::INFINITY);
        assert_eq!(c.G0(), 0.0);
        assert_relative_eq!(calc(Nonlinearity::power(3.0).unwrap()).eval_F(2.0).unwrap(), 0.125);

        let e = calc(Nonlinearity::exp());
        assert_eq!(e.F0(), 1.0);
        assert_eq!(e.G0(), 1.0);
        assert_relative_eq!(e.eval_F(0.5).unwrap(), (-0.5f64).exp());
        assert_eq!(e.eval_psi_f(0.5).unwrap(), 0.0);
        assert_relative_eq!(e.eval_psi_f(std::f64::consts::E).unwrap(), 1.0);
        assert!(matches!(e.eval_F(0.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn numeric_paths_reproduce_closed_forms() {
        let e = build_calculus(&Nonlinearity::exp(), &QuadratureConfig::numeric()).unwrap();
        assert!(e.F0_estimated());
        assert_relative_eq!(e.F0(), 1.0, max_relative = 1e-9);
        assert_relative_eq!(e.eval_F(0.5).unwrap(), (-0.5f64).exp(), max_relative = 1e-10);
        assert_relative_eq!(e.eval_psi_f(10.0).unwrap(), 10f64.ln(), max_relative = 1e-10);
        assert_eq!(e.eval_psi_f(0.9).unwrap(), 0.0);

        let p = build_calculus(&Nonlinearity::power(2.5).unwrap(), &QuadratureConfig::numeric()).unwrap();
        assert_eq!(p.F0(), f64::INFINITY);
        for u in [1e-3, 0.7, 40.0] {
            assert_relative_eq!(p.eval_F(u).unwrap(), u.powf(-1.5) / 1.5, max_relative = 1e-10);
        }
        assert_relative_eq!(p.q_f().unwrap(), 2.5 / 1.5, max_relative = 1e-8);
    }

    #[test]
    fn sublinear_origin_gives_finite_f0() {
        // f = sqrt(u) near 0 but superlinear later: 1/f integrable at 0
        let nl = Nonlinearity::custom_str("sqrt(u) + u^2", None, 1.0).unwrap();
        let c = build_calculus(&nl, &QuadratureConfig::default()).unwrap();
        let oracle = integrate(|s| 1.0 / (s.sqrt() + s * s), 0.0, 1.0, QuadTol::rel(1e-13)).value
            + integrate_tail(|s| 1.0 / (s.sqrt() + s * s), 1.0, 1.0, TailTol::default()).unwrap().value;
        assert_relative_eq!(c.F0(), oracle, max_relative = 1e-8);
        assert!(c.G0() > 0.0);
        assert_eq!(c.eval_psi_f(0.5 * c.G0()).unwrap(), 0.0);
    }

    #[test]
    fn inverse_identities() {
        for nl in [
            Nonlinearity::power_sum(3.0, 2.0).unwrap(),
            Nonlinearity::exp_n(1, 2.0).unwrap(),
            Nonlinearity::power_log(4.0, 1.0, 3.0).unwrap(),
        ] {
            let c = calc(nl);
            for u in [0.5, 1.0, 5.0, 50.0] {
                let g = c.eval_G(u).unwrap();
                if !g.is_finite() {
                    continue;
                }
                let back = c.eval_psi_f(g).unwrap();
                assert!((back - u).abs() <= 1e-6 * (1.0 + u), "{}: {back} vs {u}", c.nonlinearity().label());
                let s = c.eval_F(u).unwrap();
                if s > 1e-300 {
                    assert_relative_eq!(c.eval_F(c.eval_F_inv(s).unwrap()).unwrap(), s, max_relative = 1e-8);
                }
            }
        }
    }

    #[test]
    fn growth_exponents_and_classes() {
        let c4 = calc(Nonlinearity::power(4.0).unwrap());
        assert_eq!(classify(&c4, 1, 2.0).unwrap().class, Criticality::Supercritical);
        let c2 = calc(Nonlinearity::power(2.0).unwrap());
        assert_eq!(classify(&c2, 1, 2.0).unwrap().class, Criticality::Subcritical);
        let c3 = calc(Nonlinearity::power(3.0).unwrap());
        assert_eq!(classify(&c3, 1, 2.0).unwrap().class, Criticality::Critical);
        let ce = calc(Nonlinearity::exp_n(1, 3.0).unwrap());
        let cl = classify(&ce, 3, 0.5).unwrap();
        assert!(cl.p_f.is_infinite());
        assert_eq!(cl.class, Criticality::Supercritical);
        assert!(classify(&c4, 4, 2.0).is_err());
        assert!(classify(&c4, 1, 2.5).is_err());

        let est = estimate_qf(&calc(Nonlinearity::exp_n(2, 1.0).unwrap()), &QfGrid::default()).unwrap();
        assert!((est.q_hat - 1.0).abs() < 1e-3, "{}", est.q_hat);
    }

    #[test]
    fn oscillating_ratio_has_no_limit() {
        // f'F oscillates with ln u, so there is no limit
        let nl = Nonlinearity::custom_str("u^2 * (2 + sin(log(1 + u)))", None, 1.0).unwrap();
        let c = build_calculus(&nl, &QuadratureConfig::default()).unwrap();
        assert!(matches!(estimate_qf(&c, &QfGrid::default()), Err(Error::NoLimit { .. })));
        assert!(c.q_f().is_err());
    }

    #[test]
    fn sandwich_threshold_exists() {
        let c = calc(Nonlinearity::exp_n(1, 2.0).unwrap());
        let rep = c.check_sandwich(&geomspace(0.1, 30.0, 40)).unwrap();
        let t = rep.threshold.unwrap();
        assert!(t < 2.0, "threshold {t}");
    }
}
