//! The fractional heat kernel `Γ_θ(x, t)` on `ℝ^N`, `N ≤ 3`.
//!
//! `Γ_θ(·, 1)` is radial. For `θ = 2` it is the Gaussian `(4π)^{-N/2} e^{-r²/4}`.
//! For `θ < 2` the profile comes from the radial Fourier inversion
//!
//! ```text
//! Γ(r) = (2π)^{-N/2} r^{1-N/2} ∫_0^∞ e^{-ρ^θ} J_{N/2-1}(rρ) ρ^{N/2} dρ
//! ```
//!
//! integrated panel by panel between the zeros of the oscillatory factor,
//! with Wynn's ε-algorithm on the partial sums when the panels run long.
//! Far out the convergent (θ ≤ 1) or asymptotic (θ > 1) expansion
//! `Σ_k A_k r^{-N-kθ}` takes over; the table stops where that expansion is
//! accurate to about `1e-12`. Near the origin the Taylor series in `r²` is
//! used. Everything else comes from a cubic spline in `(ln r, ln Γ)`.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{invalid, Error, Result};
use crate::numeric::{wynn_epsilon, CubicSpline};
use crate::quadrature::{gauss_legendre, integrate, QuadTol};
use crate::special::bessel_j0;

/// Table construction settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub points_per_decade: usize,
    pub r_min: f64,
    /// table never extends past this radius, whatever the far-field accuracy
    pub r_cap: f64,
    /// relative disagreement tolerated by the panel-halving self-check
    pub check_tol: f64,
    /// every `check_stride`-th radius is recomputed with halved panels
    pub check_stride: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            points_per_decade: 64,
            r_min: 1e-3,
            r_cap: 1e4,
            check_tol: 1e-8,
            check_stride: 8,
        }
    }
}

/// Far-field expansion `Σ_k A_k r^{-N-kθ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FarField {
    coeffs: Vec<f64>,
    /// `|A_k|` without the `sin(kπθ/2)` factor, used to judge truncation
    envelope: Vec<f64>,
}

impl FarField {
    fn new(n: usize, theta: f64) -> Self {
        let nf = n as f64;
        let mut coeffs = Vec::new();
        let mut envelope = Vec::new();
        for k in 1..=120 {
            let kf = k as f64;
            let s = (kf * PI * theta / 2.0).sin();
            let ln_mag = -(nf / 2.0 + 1.0) * PI.ln() - ln_gamma(kf + 1.0)
                + ln_gamma(kf * theta / 2.0 + 1.0)
                + ln_gamma((kf * theta + nf) / 2.0)
                + kf * theta * 2f64.ln();
            if !ln_mag.is_finite() || ln_mag > 600.0 {
                break;
            }
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            coeffs.push(sign * s * ln_mag.exp());
            envelope.push(ln_mag.exp());
        }
        FarField { coeffs, envelope }
    }

    /// Sum with an error estimate; asymptotic series stop at the smallest term.
    fn sum(&self, r: f64, n: usize, theta: f64) -> (f64, f64) {
        let x = r.powf(-theta);
        let mut pw = r.powi(-(n as i32));
        let mut sum = 0.0;
        let mut err = f64::INFINITY;
        let mut prev = f64::INFINITY;
        let mut decreasing = false;
        for (&a, &env) in self.coeffs.iter().zip(&self.envelope) {
            pw *= x;
            let mag = env * pw;
            if decreasing && mag > prev {
                break;
            }
            decreasing = mag < prev;
            prev = mag;
            sum += a * pw;
            err = mag;
            if mag <= 1e-17 * sum.abs() {
                break;
            }
        }
        (sum, err)
    }

    /// `∫_R^∞ Σ A_k r^{-N-kθ} r^{N-1} dr = Σ A_k R^{-kθ}/(kθ)`.
    fn radial_mass(&self, r: f64, theta: f64) -> f64 {
        let x = r.powf(-theta);
        let mut pw = 1.0;
        let mut sum = 0.0;
        let mut prev = f64::INFINITY;
        let mut decreasing = false;
        for (i, (&a, &env)) in self.coeffs.iter().zip(&self.envelope).enumerate() {
            pw *= x;
            let d = (i + 1) as f64 * theta;
            let mag = env * pw / d;
            if decreasing && mag > prev {
                break;
            }
            decreasing = mag < prev;
            prev = mag;
            sum += a * pw / d;
            if mag <= 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Profile {
    Gaussian,
    Table {
        spline: CubicSpline,
        far: FarField,
        /// radial mass inside each knot radius
        cumulative: Vec<f64>,
        /// radial mass beyond `r_max`
        outer: f64,
    },
}

/// Radial profile of `Γ_θ(·, 1)` with the scaling rule for other times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTable {
    n: usize,
    theta: f64,
    r_min: f64,
    r_max: f64,
    /// `Γ(r) ≈ Σ_k small[k] r^{2k}` for `r ≤ r_min`
    small: [f64; 3],
    /// leading far-field coefficient fitted on the last table decade
    tail_coeff: f64,
    profile: Profile,
}

/// Surface area of the unit sphere in `ℝ^N`.
pub fn sphere_area(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

fn small_series(n: usize, theta: f64) -> [f64; 3] {
    let nf = n as f64;
    let mut c = [0.0; 3];
    for (k, ck) in c.iter_mut().enumerate() {
        let kf = k as f64;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *ck = sign * gamma((2.0 * kf + nf) / theta)
            / ((2.0 * PI).powf(nf / 2.0)
                * 2f64.powf(2.0 * kf + nf / 2.0 - 1.0)
                * theta
                * gamma(kf + 1.0)
                * gamma(kf + nf / 2.0));
    }
    c
}

/// Oscillatory radial integral for one `r`; `split` subdivides each panel.
fn radial_integral(n: usize, theta: f64, r: f64, split: usize) -> Result<f64> {
    let a = if n == 1 { 0.0 } else { 1.0 };
    // integrand below e^{-42} beyond rho_max
    let mut rho_max = 42f64.powf(1.0 / theta);
    for _ in 0..5 {
        rho_max = (42.0 + a * rho_max.ln().max(0.0)).powf(1.0 / theta);
    }
    let integrand = |rho: f64| -> f64 {
        let damp = (-rho.powf(theta)).exp();
        match n {
            1 => damp * (r * rho).cos() / PI,
            2 => damp * rho * bessel_j0(r * rho) / (2.0 * PI),
            _ => damp * rho * (r * rho).sin() / (2.0 * PI * PI * r),
        }
    };
    // k-th zero of the oscillatory factor in units of r·rho
    let zero = |k: usize| -> f64 {
        let kf = k as f64;
        match n {
            1 => (kf - 0.5) * PI,
            2 => {
                let b = (kf - 0.25) * PI;
                b + 1.0 / (8.0 * b) - 31.0 / (384.0 * b * b * b)
            }
            _ => kf * PI,
        }
    };
    let tol = QuadTol {
        abs: 0.0,
        rel: 1e-14,
        max_intervals: 400,
    };
    let panel = |lo: f64, hi: f64| -> f64 {
        let w = (hi - lo) / split as f64;
        (0..split)
            .map(|i| integrate(integrand, lo + i as f64 * w, lo + (i + 1) as f64 * w, tol).value)
            .sum()
    };
    const DIRECT: usize = 400;
    let n_panels = (r * rho_max / PI).ceil() as usize + 1;
    let mut partial = Vec::with_capacity(DIRECT.min(n_panels) + 1);
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    let mut lo = 0.0;
    for k in 1.. {
        let hi = (zero(k) / r).min(rho_max);
        let p = panel(lo, hi);
        sum += p;
        abs_sum += p.abs();
        partial.push(sum);
        lo = hi;
        if hi >= rho_max {
            return Ok(sum);
        }
        if k >= 24 && k % 8 == 0 {
            let m = partial.len();
            let e1 = wynn_epsilon(&partial[m - 21..]);
            let e2 = wynn_epsilon(&partial[m - 23..m - 2]);
            if (e1 - e2).abs() <= (1e-13 * e1.abs()).max(1e-16 * abs_sum) {
                return Ok(e1);
            }
            if k >= DIRECT {
                return Err(Error::QuadratureFailure {
                    r,
                    change: (e1 - e2).abs() / e1.abs().max(f64::MIN_POSITIVE),
                });
            }
        }
    }
    unreachable!()
}

/// Builds the unit-time profile of `Γ_θ` in dimension `n`.
pub fn build_kernel(n: usize, theta: f64, cfg: &KernelConfig) -> Result<KernelTable> {
    if !(1..=3).contains(&n) {
        return Err(invalid("N", format!("dimension must be 1, 2 or 3, got {n}")));
    }
    if !(theta > 0.0 && theta <= 2.0) {
        return Err(invalid("theta", format!("must lie in (0, 2], got {theta}")));
    }
    if !(cfg.r_min > 0.0 && cfg.r_cap > 10.0 * cfg.r_min && cfg.points_per_decade >= 8) {
        return Err(invalid("kernel", format!("bad table settings {cfg:?}")));
    }
    let small = small_series(n, theta);
    if theta == 2.0 {
        return Ok(KernelTable {
            n,
            theta,
            r_min: 0.0,
            r_max: f64::INFINITY,
            small,
            tail_coeff: 0.0,
            profile: Profile::Gaussian,
        });
    }
    let far = FarField::new(n, theta);
    let step = 10f64.ln() / cfg.points_per_decade as f64;
    // the Taylor series is only used where its last kept term is negligible
    let r_min = cfg.r_min.min((1e-14 * small[0] / small[2].abs()).powf(0.25));
    // smallest grid radius from which the far-field series is accurate to 1e-12
    let mut log_r = vec![r_min.ln()];
    loop {
        let r = log_r.last().unwrap().exp();
        let (s, e) = far.sum(r, n, theta);
        let (s2, e2) = far.sum(r * 1.5, n, theta);
        let ok = s > 0.0 && e <= 1e-12 * s && s2 > 0.0 && e2 <= 1e-12 * s2;
        if (ok && r >= 10.0 * r_min) || r >= cfg.r_cap {
            break;
        }
        log_r.push(log_r.last().unwrap() + step);
    }
    let rs: Vec<f64> = log_r.iter().map(|l| l.exp()).collect();
    let values: Vec<Result<f64>> = rs
        .par_iter()
        .enumerate()
        .map(|(i, &r)| {
            let v = radial_integral(n, theta, r, 1)?;
            if cfg.check_stride > 0 && (i % cfg.check_stride == 0 || i + 1 == rs.len()) {
                let w = radial_integral(n, theta, r, 2)?;
                let change = (v - w).abs() / v.abs().max(f64::MIN_POSITIVE);
                if change > cfg.check_tol {
                    return Err(Error::QuadratureFailure { r, change });
                }
            }
            if !(v > 0.0) {
                return Err(Error::QuadratureFailure { r, change: f64::NAN });
            }
            Ok(v)
        })
        .collect();
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    let r_max = *rs.last().unwrap();
    let (far_at_max, far_err) = far.sum(r_max, n, theta);
    if r_max < cfg.r_cap {
        let change = (far_at_max - values[values.len() - 1]).abs() / far_at_max;
        if change > 1e-7 {
            return Err(Error::QuadratureFailure { r: r_max, change });
        }
    } else {
        log::warn!("kernel table reached r_cap = {r_max}; far-field series error estimate {far_err:e}");
    }
    // leading tail constant fitted on the last decade of the table
    let last_decade: Vec<f64> = rs
        .iter()
        .zip(&values)
        .filter(|(r, _)| **r >= r_max / 10.0)
        .filter_map(|(r, v)| {
            let (s, e) = far.sum(*r, n, theta);
            (s > 0.0 && e <= 1e-6 * s).then(|| v * far.coeffs[0] / s)
        })
        .collect();
    let tail_coeff = last_decade.iter().sum::<f64>() / last_decade.len() as f64;

    let spline = CubicSpline::new(log_r, values.iter().map(|v| v.ln()).collect());
    let mut table = KernelTable {
        n,
        theta,
        r_min,
        r_max,
        small,
        tail_coeff,
        profile: Profile::Table {
            spline,
            far: far.clone(),
            cumulative: Vec::new(),
            outer: 0.0,
        },
    };
    // cumulative radial mass
    let (gx, gw) = gauss_legendre(8);
    let area = sphere_area(n);
    let inner: f64 = small
        .iter()
        .enumerate()
        .map(|(k, c)| c * r_min.powi(2 * k as i32 + n as i32) / (2 * k + n) as f64)
        .sum::<f64>()
        * area;
    let mut cumulative = Vec::with_capacity(rs.len());
    let mut acc = inner;
    cumulative.push(acc);
    for w in rs.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let seg: f64 = gx
            .iter()
            .zip(&gw)
            .map(|(x, wt)| {
                let r = mid + half * x;
                wt * table.profile_at(r) * r.powi(n as i32 - 1)
            })
            .sum();
        acc += seg * half * area;
        cumulative.push(acc);
    }
    let outer = far.radial_mass(r_max, theta) * area;
    if let Profile::Table {
        cumulative: c, outer: o, ..
    } = &mut table.profile
    {
        *c = cumulative;
        *o = outer;
    }
    Ok(table)
}

impl KernelTable {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    /// Radius beyond which the far-field expansion is used.
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Fitted `c` in `Γ_θ(r, 1) ≈ c r^{-N-θ}`; zero for the Gaussian.
    pub fn tail_coeff(&self) -> f64 {
        self.tail_coeff
    }

    /// Leading far-field constant from the series.
    pub fn tail_coeff_series(&self) -> f64 {
        match &self.profile {
            Profile::Gaussian => 0.0,
            Profile::Table { far, .. } => far.coeffs[0],
        }
    }

    /// `(knots r, values Γ(r,1))` of the table; empty for the Gaussian.
    pub fn table(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.profile {
            Profile::Gaussian => (Vec::new(), Vec::new()),
            Profile::Table { spline, .. } => (
                spline.knots().iter().map(|l| l.exp()).collect(),
                spline.values().iter().map(|l| l.exp()).collect(),
            ),
        }
    }

    fn profile_at(&self, r: f64) -> f64 {
        match &self.profile {
            Profile::Gaussian => (4.0 * PI).powf(-(self.n as f64) / 2.0) * (-r * r / 4.0).exp(),
            Profile::Table { spline, far, .. } => {
                if r <= self.r_min {
                    let r2 = r * r;
                    self.small[0] + r2 * (self.small[1] + r2 * self.small[2])
                } else if r <= self.r_max {
                    spline.eval(r.ln()).exp()
                } else {
                    far.sum(r, self.n, self.theta).0
                }
            }
        }
    }

    /// `Γ_θ(r, 1)` for `r = |x| ≥ 0`.
    pub fn eval_unit(&self, r: f64) -> f64 {
        self.profile_at(r.abs())
    }

    /// `Γ_θ(x, t) = t^{-N/θ} Γ_θ(t^{-1/θ} x, 1)` at radius `r = |x|`.
    pub fn eval_radial(&self, r: f64, t: f64) -> f64 {
        let s = t.powf(-1.0 / self.theta);
        s.powi(self.n as i32) * self.profile_at(r.abs() * s)
    }

    /// `Γ_θ(x, t)` at a point `x ∈ ℝ^N`.
    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.eval_radial(r, t)
    }

    /// Mass of `Γ_θ(·, t)` outside the ball of radius `r`.
    pub fn mass_outside(&self, r: f64, t: f64) -> f64 {
        let r1 = r.max(0.0) * t.powf(-1.0 / self.theta);
        let area = sphere_area(self.n);
        match &self.profile {
            Profile::Gaussian => {
                let h = r1 / 2.0;
                match self.n {
                    1 => erfc(h),
                    2 => (-h * h).exp(),
                    _ => erfc(h) + 2.0 * h / PI.sqrt() * (-h * h).exp(),
                }
            }
            Profile::Table {
                spline,
                far,
                cumulative,
                outer,
            } => {
                if r1 >= self.r_max {
                    return far.radial_mass(r1, self.theta) * area;
                }
                let total = cumulative.last().unwrap() + outer;
                if r1 <= self.r_min {
                    let inner: f64 = self
                        .small
                        .iter()
                        .enumerate()
                        .map(|(k, c)| c * r1.powi(2 * k as i32 + self.n as i32) / (2 * k + self.n) as f64)
                        .sum::<f64>()
                        * area;
                    return (total - inner).max(0.0);
                }
                // integrate from r1 up to the next knot, then use the cumulative table
                let knots = spline.knots();
                let lr = r1.ln();
                let j = knots.partition_point(|&k| k <= lr).min(knots.len() - 1);
                let b = knots[j].exp();
                let (gx, gw) = gauss_legendre(8);
                let mid = 0.5 * (r1 + b);
                let half = 0.5 * (b - r1);
                let seg: f64 = gx
                    .iter()
                    .zip(&gw)
                    .map(|(x, w)| {
                        let rr = mid + half * x;
                        w * self.profile_at(rr) * rr.powi(self.n as i32 - 1)
                    })
                    .sum::<f64>()
                    * half
                    * area;
                (total - cumulative[j] + seg).max(0.0)
            }
        }
    }

    /// Total mass `∫ Γ_θ(x, 1) dx` of the tabulated profile.
    pub fn mass(&self) -> f64 {
        match &self.profile {
            Profile::Gaussian => 1.0,
            Profile::Table { cumulative, outer, .. } => cumulative.last().unwrap() + outer,
        }
    }

    /// Writes the table as JSON.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self).map_err(|e| Error::Cache(e.to_string()))?;
        std::fs::write(path, s).map_err(|e| Error::Cache(format!("{}: {e}", path.display())))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Cache(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&s).map_err(|e| Error::Cache(e.to_string()))
    }
}

/// Fitted constant of the two-sided bound `C⁻¹(1+r)^{-N-θ} ≤ Γ_θ(r,1) ≤ C(1+r)^{-N-θ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundFit {
    pub c: f64,
    /// radius where the constant is attained
    pub r_at: f64,
}

/// Smallest `C` making the two-sided power bound hold on the table and
/// on a stretch of the far field; rejects `θ = 2`.
pub fn check_bounds(k: &KernelTable) -> Result<BoundFit> {
    const LIMIT: f64 = 1e6;
    if k.theta >= 2.0 {
        return Err(invalid("theta", "two-sided power bounds only hold for theta < 2"));
    }
    let (mut rs, _) = k.table();
    rs.insert(0, 0.0);
    let mut r = k.r_max;
    while r < 1e3 * k.r_max.max(1.0) {
        r *= 1.25;
        rs.push(r);
    }
    let mut best = BoundFit { c: 1.0, r_at: 0.0 };
    for r in rs {
        let g = k.eval_unit(r);
        let b = (1.0 + r).powf(-(k.n as f64) - k.theta);
        let c = (g / b).max(b / g);
        if !(c <= best.c) {
            best = BoundFit { c, r_at: r };
        }
    }
    if !(best.c <= LIMIT) {
        return Err(Error::BoundViolation {
            needed: best.c,
            limit: LIMIT,
        });
    }
    Ok(best)
}

/// Grid for [`check_chapman_kolmogorov`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CkGrid {
    pub half_width: f64,
    pub points: usize,
}

/// Largest relative deviation of `∫ Γ(x-y, t-s) Γ(y, s) dy` from `Γ(x, t)`
/// over grid points `x ∈ [-L, L]` where `Γ(x, t) ≥ 1e-6 Γ(0, t)`.
///
/// One-dimensional only. The `y` integral runs over `[-4L, 4L]` with the
/// trapezoid rule at the grid spacing `h = 2L/M`.
pub fn check_chapman_kolmogorov(k: &KernelTable, t: f64, s: f64, grid: &CkGrid) -> Result<f64> {
    use rustfft::{num_complex::Complex, FftPlanner};
    if k.n != 1 {
        return Err(invalid("N", "the Chapman-Kolmogorov check is one-dimensional"));
    }
    if !(0.0 < s && s < t) {
        return Err(invalid("s", format!("need 0 < s < t, got s = {s}, t = {t}")));
    }
    if grid.points < 4 || !(grid.half_width > 0.0) {
        return Err(invalid("grid", format!("{grid:?}")));
    }
    let h = 2.0 * grid.half_width / grid.points as f64;
    let m = (4 * grid.points / 2) as i64; // y_j = j h, |j| ≤ m
    let len = (2 * m + 1) as usize;
    let size = (2 * len).next_power_of_two();
    let mut a = vec![Complex::new(0.0, 0.0); size];
    let mut b = vec![Complex::new(0.0, 0.0); size];
    for j in 0..len {
        let y = (j as i64 - m) as f64 * h;
        a[j].re = k.eval_radial(y, s);
        b[j].re = k.eval_radial(y, t - s);
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= *y;
    }
    inv.process(&mut a);
    let peak = k.eval_radial(0.0, t);
    let half = (grid.points / 2) as i64;
    let mut worst: f64 = 0.0;
    for i in -half..=half {
        // conv index for x = i h is i + 2m
        let idx = (i + 2 * m) as usize;
        let conv = a[idx].re / size as f64 * h;
        let exact = k.eval_radial(i as f64 * h, t);
        if exact >= 1e-6 * peak {
            worst = worst.max((conv - exact).abs() / exact);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::tanh_sinh;

    #[test]
    fn origin_values() {
        let g = build_kernel(1, 2.0, &KernelConfig::default()).unwrap();
        assert!((g.eval_unit(0.0) - (4.0 * PI).powf(-0.5)).abs() < 1e-15);
        let k = build_kernel(1, 1.0, &KernelConfig::default()).unwrap();
        assert!((k.eval_unit(0.0) - 1.0 / PI).abs() < 1e-14);
        assert!((k.tail_coeff() - 1.0 / PI).abs() < 1e-6);
        assert!((k.tail_coeff_series() - 1.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn higher_dimensions_match_gaussian_limit_and_mass() {
        for n in [2, 3] {
            let k = build_kernel(n, 1.0, &KernelConfig::default()).unwrap();
            assert!((k.mass() - 1.0).abs() < 1e-6, "N = {n}: mass {}", k.mass());
            // Cauchy kernel in N dims: c_N / (1 + r²)^{(N+1)/2}
            let c = gamma((n as f64 + 1.0) / 2.0) / PI.powf((n as f64 + 1.0) / 2.0);
            for r in [0.0f64, 0.3, 1.0, 4.0, 30.0] {
                let exact = c * (1.0 + r * r).powf(-(n as f64 + 1.0) / 2.0);
                let got = k.eval_unit(r);
                assert!((got - exact).abs() < 1e-7 * exact, "N = {n}, r = {r}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn radial_integral_against_direct_quadrature() {
        // θ = 0.7: independent evaluation by tanh-sinh over a long truncated range
        let theta = 0.7;
        let k = build_kernel(1, theta, &KernelConfig::default()).unwrap();
        for r in [0.05, 0.5, 2.0] {
            let upper = 60f64.powf(1.0 / theta);
            let pieces = 400;
            let w = upper / pieces as f64;
            let oracle: f64 = (0..pieces)
                .map(|i| {
                    tanh_sinh(
                        |rho| (-rho.powf(theta)).exp() * (r * rho).cos(),
                        i as f64 * w,
                        (i + 1) as f64 * w,
                        1e-14,
                    )
                    .value
                })
                .sum::<f64>()
                / PI;
            let got = k.eval_unit(r);
            assert!((got - oracle).abs() < 1e-8 * oracle, "r = {r}: {got} vs {oracle}");
        }
    }

    #[test]
    fn mass_outside_is_consistent() {
        let k = build_kernel(1, 1.5, &KernelConfig::default()).unwrap();
        assert!((k.mass_outside(0.0, 1.0) - k.mass()).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for r in [0.0005, 0.01, 0.3, 2.0, 7.0, 50.0, 1e3] {
            let m = k.mass_outside(r, 1.0);
            assert!(m <= prev && m >= 0.0);
            prev = m;
        }
        // scaling: mass outside r at time t equals mass outside r t^{-1/θ} at time 1
        assert!((k.mass_outside(2.0, 8.0) - k.mass_outside(2.0 * 8f64.powf(-1.0 / 1.5), 1.0)).abs() < 1e-14);
        let g = build_kernel(3, 2.0, &KernelConfig::default()).unwrap();
        assert!((g.mass_outside(0.0, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let k = build_kernel(1, 1.2, &KernelConfig::default()).unwrap();
        let dir = std::env::temp_dir().join(format!("fracheat-kernel-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("k.json");
        k.save_json(&p).unwrap();
        let back = KernelTable::load_json(&p).unwrap();
        assert_eq!(back.eval_unit(0.7), k.eval_unit(0.7));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_kernel(4, 1.0, &KernelConfig::default()).is_err());
        assert!(build_kernel(1, 2.1, &KernelConfig::default()).is_err());
        assert!(build_kernel(1, 0.0, &KernelConfig::default()).is_err());
        let g = build_kernel(1, 2.0, &KernelConfig::default()).unwrap();
        assert!(check_bounds(&g).is_err());
    }
}
