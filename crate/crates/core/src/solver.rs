//! Mild solutions `u(t) = S(t)μ + ∫₀ᵗ S(t-s) f(u(s)) ds` on a uniform time grid.
//!
//! The Duhamel integral uses the trapezoid rule at the step boundaries with
//! the exact (cell-integrated) kernel at every lag. The lag spectra and the
//! spectra of past source terms are kept, so the history sum is done in
//! frequency space and each step costs one inverse transform. The value at the
//! new time level enters the quadrature with weight `dt/2` and no smoothing, so
//! each step ends with the cellwise fixed point `u = B + (dt/2) f(u)`, found by
//! monotone Picard iteration from below.
//!
//! A constant background `b` is split off and evolved by the same scheme
//! (`S(t)b = b` makes it an ODE), only the compactly supported remainder is
//! convolved.

use rustfft::num_complex::Complex;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::{GridField, GridSpec};
use crate::kernel::KernelTable;
use crate::nonlinearity::Nonlinearity;
use crate::semigroup::{ConvPlan, MAX_LEAK};

/// Largest value of `f` ever used; keeps arithmetic finite past the cap.
const F_SATURATION: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Converged,
    BlowUpEvidence,
    Inconclusive,
}

/// Solver knobs besides the horizon and the time step.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// relative fixed-point tolerance per time level
    pub tol: f64,
    pub cap: f64,
    /// Picard iterations allowed per time level
    pub max_picard: usize,
    /// rerun with `dt/2` and with `2M` when the cap is crossed
    pub refine_on_cap: bool,
    /// also rerun converged solves to fill `refinement_stable`
    pub verify_converged: bool,
    /// keep every time level (needed for order comparisons)
    pub store_fields: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            cap: 1e8,
            max_picard: 100_000,
            refine_on_cap: true,
            verify_converged: false,
            store_fields: false,
        }
    }
}

/// What one refinement rerun found.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementRun {
    pub dt: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub verdict: Verdict,
    pub crossing_time: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MildSolveReport {
    pub verdict: Verdict,
    #[serde(rename = "T_reached")]
    pub t_reached: f64,
    /// `residual_history[m]`: largest relative Picard increment at iteration `m`
    /// over all time levels that ran that many iterations
    pub residual_history: Vec<f64>,
    /// largest final increment over the accepted levels
    pub final_residual: f64,
    pub times: Vec<f64>,
    pub sup_history: Vec<f64>,
    /// background value at each stored time
    pub background_history: Vec<f64>,
    /// `None` when no rerun was made
    pub refinement_stable: Option<bool>,
    pub refinements: Vec<RefinementRun>,
    /// first time level at which the cap was crossed or no fixed point was found
    pub crossing_time: Option<f64>,
    pub nan_encountered: bool,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    pub grid: GridSpec,
    pub options: SolveOptions,
    #[serde(skip)]
    fields: Vec<Vec<f64>>,
    #[serde(skip)]
    last: Vec<f64>,
}

impl MildSolveReport {
    /// The last accepted time level.
    pub fn final_field(&self) -> GridField {
        let b = *self.background_history.last().unwrap_or(&0.0);
        GridField::from_values(self.grid, self.last.clone(), b).expect("solver keeps fields valid")
    }

    /// Stored time levels (empty unless `store_fields` was set).
    pub fn fields(&self) -> &[Vec<f64>] {
        &self.fields
    }
}

enum Stop {
    Done,
    Cap,
    Nan,
    Stalled,
}

struct RunOutput {
    stop: Stop,
    t_reached: f64,
    residual_history: Vec<f64>,
    final_residual: f64,
    times: Vec<f64>,
    sups: Vec<f64>,
    backgrounds: Vec<f64>,
    fields: Vec<Vec<f64>>,
    last: Vec<f64>,
    crossing: Option<f64>,
}

fn f_sat(nl: &Nonlinearity, u: f64, cap: f64) -> f64 {
    let v = nl.f(u.min(cap));
    if v.is_nan() {
        v
    } else {
        v.min(F_SATURATION)
    }
}

/// Solves `u = base + a (f(u) - fb)` by Picard from `u = base`.
/// Returns the iterate, whether it converged, and feeds the increments to `hist`.
fn picard_cell(
    nl: &Nonlinearity,
    base: f64,
    a: f64,
    fb: f64,
    opts: &SolveOptions,
    hist: &mut Vec<f64>,
) -> (f64, Option<Stop>, f64) {
    let mut u = base.max(0.0);
    let mut last_res = 0.0;
    for m in 0..opts.max_picard {
        let next = base + a * (f_sat(nl, u, opts.cap) - fb);
        if next.is_nan() {
            return (u, Some(Stop::Nan), last_res);
        }
        let next = next.max(u);
        let res = (next - u) / next.abs().max(1.0);
        if hist.len() <= m {
            hist.push(res);
        } else if res > hist[m] {
            hist[m] = res;
        }
        u = next;
        last_res = res;
        if u > opts.cap {
            return (u, Some(Stop::Cap), res);
        }
        if res <= opts.tol {
            return (u, None, res);
        }
    }
    (u, Some(Stop::Stalled), last_res)
}

/// Lag spectra below this (the spectrum is 1 at frequency zero) are dropped.
const LAG_CUTOFF: f64 = 1e-14;

/// `(Σ k a, Σ k b)` with independent partial sums.
fn dot2(k: &[f64], a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut sa = [0.0; 4];
    let mut sb = [0.0; 4];
    let mut kc = k.chunks_exact(4);
    let mut ac = a.chunks_exact(4);
    let mut bc = b.chunks_exact(4);
    for ((kk, aa), bb) in (&mut kc).zip(&mut ac).zip(&mut bc) {
        for i in 0..4 {
            sa[i] += kk[i] * aa[i];
            sb[i] += kk[i] * bb[i];
        }
    }
    let (mut ra, mut rb) = ((sa[0] + sa[1]) + (sa[2] + sa[3]), (sb[0] + sb[1]) + (sb[2] + sb[3]));
    for ((kk, aa), bb) in kc.remainder().iter().zip(ac.remainder()).zip(bc.remainder()) {
        ra += kk * aa;
        rb += kk * bb;
    }
    (ra, rb)
}

fn run_once(k: &KernelTable, nl: &Nonlinearity, u0: &GridField, t_end: f64, dt: f64, opts: &SolveOptions) -> Result<RunOutput> {
    let steps = (t_end / dt).round() as usize;
    let spec = *u0.spec();
    let plan = ConvPlan::new(spec)?;
    if k.dim() != spec.n {
        return Err(Error::GridMismatch(format!("kernel dimension {} vs grid dimension {}", k.dim(), spec.n)));
    }
    let cells = spec.len();
    let hl = plan.half_len();
    let b0 = u0.background();
    let pert0: Vec<f64> = u0.values().iter().map(|v| v - b0).collect();
    let active = pert0.iter().any(|&v| v != 0.0);
    // constant data never touch the window
    let leak = k.mass_outside(spec.half_width, t_end);
    if active && leak > MAX_LEAK {
        return Err(Error::WindowTooSmall { leak, t: t_end });
    }

    // frequency-major history, one row of `steps` entries per frequency
    let (mut kern, mut src_re, mut src_im, mut init) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    if active {
        kern = vec![0.0f64; hl * steps];
        src_re = vec![0.0f64; hl * steps];
        src_im = vec![0.0f64; hl * steps];
        init = plan.forward(&pert0);
    }
    // per frequency, the number of lags whose kernel spectrum is still significant
    let mut live = vec![steps; hl];

    let mut u = u0.values().to_vec();
    let mut b = b0;
    let mut out = RunOutput {
        stop: Stop::Done,
        t_reached: 0.0,
        residual_history: Vec::new(),
        final_residual: 0.0,
        times: vec![0.0],
        sups: vec![u0.sup()],
        backgrounds: vec![b0],
        fields: Vec::new(),
        last: Vec::new(),
        crossing: None,
    };
    if opts.store_fields {
        out.fields.push(u.clone());
    }

    let store_source = |j: usize, weight: f64, u: &[f64], b: f64, re: &mut [f64], im: &mut [f64]| {
        let fb = f_sat(nl, b, opts.cap);
        let g: Vec<f64> = u.iter().map(|&v| weight * (f_sat(nl, v, opts.cap) - fb)).collect();
        let s = plan.forward(&g);
        for (kk, c) in s.iter().enumerate() {
            re[kk * steps + j] = c.re;
            im[kk * steps + j] = c.im;
        }
    };
    if active {
        store_source(0, 0.5 * dt, &u, b, &mut src_re, &mut src_im);
    }
    // background quadrature without the new level
    let mut b_hist = b0 + 0.5 * dt * f_sat(nl, b0, opts.cap);
    let a = 0.5 * dt;

    for n in 1..=steps {
        let t = n as f64 * dt;
        // background level
        let (bn, bstop, _) = picard_cell(nl, b_hist, a, 0.0, opts, &mut out.residual_history);
        if let Some(s) = bstop {
            out.stop = s;
            out.crossing = Some(t);
            break;
        }
        let fbn = f_sat(nl, bn, opts.cap);
        let mut base = vec![bn; cells];
        if active {
            let ks = plan.kernel_spectrum(k, t)?;
            // lag n lives at column steps - n, so lags n..1 line up with sources 0..n-1
            for (kk, &v) in ks.spectrum.iter().enumerate() {
                if live[kk] == steps && v.abs() < LAG_CUTOFF {
                    live[kk] = n - 1;
                }
                kern[kk * steps + (steps - n)] = v;
            }
            let mut acc = vec![Complex::new(0.0, 0.0); hl];
            for (kk, slot) in acc.iter_mut().enumerate() {
                let row = kk * steps;
                let lags = n.min(live[kk]);
                let kr = &kern[row + steps - lags..row + steps];
                let gr = &src_re[row + n - lags..row + n];
                let gi = &src_im[row + n - lags..row + n];
                let (sr, si) = dot2(kr, gr, gi);
                *slot = Complex::new(sr, si);
                if lags == n {
                    *slot += init[kk] * kr[0];
                }
            }
            let conv = plan.inverse(&acc);
            for (bv, c) in base.iter_mut().zip(conv) {
                *bv += c;
            }
        }
        let mut stop = None;
        let mut worst = 0.0f64;
        for (ui, &bi) in u.iter_mut().zip(&base) {
            let (v, s, res) = picard_cell(nl, bi, a, fbn, opts, &mut out.residual_history);
            *ui = v;
            worst = worst.max(res);
            if s.is_some() {
                stop = s;
                break;
            }
        }
        if let Some(s) = stop {
            out.stop = s;
            out.crossing = Some(t);
            break;
        }
        b = bn;
        out.final_residual = out.final_residual.max(worst);
        out.t_reached = t;
        out.times.push(t);
        out.sups.push(u.iter().fold(b, |m, &v| m.max(v)));
        out.backgrounds.push(b);
        if opts.store_fields {
            out.fields.push(u.clone());
        }
        // without a perturbation every cell sits exactly on the background
        debug_assert!(active || u.iter().all(|&v| v == b));
        if active && n < steps {
            store_source(n, dt, &u, b, &mut src_re, &mut src_im);
        }
        b_hist += dt * fbn;
    }
    out.last = u;
    Ok(out)
}

/// Mild solution on `[0, t_end]` with step `dt`.
///
/// A crossing of `cap` triggers one rerun with `dt/2` and one on the refined
/// grid; evidence of blow-up requires all three runs to cross.
pub fn mild_solve(
    k: &KernelTable,
    nl: &Nonlinearity,
    u0: &GridField,
    t_end: f64,
    dt: f64,
    opts: &SolveOptions,
) -> Result<MildSolveReport> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(invalid("T", format!("must be positive, got {t_end}")));
    }
    if !(dt > 0.0 && dt <= t_end) {
        return Err(invalid("dt", format!("must lie in (0, T], got {dt}")));
    }
    let steps = (t_end / dt).round();
    if (steps * dt - t_end).abs() > 1e-9 * t_end {
        return Err(invalid("dt", format!("must divide T = {t_end}, got {dt}")));
    }
    if !(opts.cap > u0.sup()) {
        return Err(invalid("cap", format!("must exceed sup u0 = {}", u0.sup())));
    }
    if !(opts.tol > 0.0) {
        return Err(invalid("tol", format!("must be positive, got {}", opts.tol)));
    }
    let base = run_once(k, nl, u0, t_end, dt, opts)?;
    let crossed = matches!(base.stop, Stop::Cap | Stop::Nan);
    let mut verdict = match base.stop {
        Stop::Done => Verdict::Converged,
        Stop::Cap | Stop::Nan => Verdict::BlowUpEvidence,
        Stop::Stalled => Verdict::Inconclusive,
    };
    let mut refinements = Vec::new();
    let mut refinement_stable = None;
    let rerun = (crossed && opts.refine_on_cap) || (verdict == Verdict::Converged && opts.verify_converged);
    if rerun {
        let mut stable = true;
        let fine = u0.refined()?;
        for (field, step) in [(u0.clone(), 0.5 * dt), (fine, dt)] {
            let r = run_once(k, nl, &field, t_end, step, opts)?;
            let v = match r.stop {
                Stop::Done => Verdict::Converged,
                Stop::Cap | Stop::Nan => Verdict::BlowUpEvidence,
                Stop::Stalled => Verdict::Inconclusive,
            };
            stable &= v == verdict;
            refinements.push(RefinementRun {
                dt: step,
                m: field.spec().m,
                verdict: v,
                crossing_time: r.crossing,
            });
        }
        refinement_stable = Some(stable);
        if !stable {
            verdict = Verdict::Inconclusive;
        }
    } else if crossed {
        // a single crossing is not evidence
        verdict = Verdict::Inconclusive;
    }
    Ok(MildSolveReport {
        verdict,
        t_reached: base.t_reached,
        residual_history: base.residual_history,
        final_residual: base.final_residual,
        times: base.times,
        sup_history: base.sups,
        background_history: base.backgrounds,
        refinement_stable,
        refinements,
        crossing_time: base.crossing,
        nan_encountered: matches!(base.stop, Stop::Nan),
        t_end,
        dt,
        grid: *u0.spec(),
        options: opts.clone(),
        fields: base.fields,
        last: base.last,
    })
}

/// Extrapolated time at which the solution crosses the cap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupEstimate {
    pub dts: Vec<f64>,
    /// midpoint of the step in which each run crossed
    pub crossing_times: Vec<f64>,
    /// first-order Richardson values from consecutive pairs
    pub extrapolated: Vec<f64>,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl BlowupEstimate {
    pub fn contains(&self, t: f64) -> bool {
        self.lo <= t && t <= self.hi
    }
}

/// Crossing times for a decreasing sequence of steps, extrapolated to `dt → 0`.
///
/// Each run must end in blow-up evidence. The bracket spans the finest
/// extrapolation and the finest step in which the crossing happened, widened
/// by the change between the last two extrapolations.
pub fn estimate_blowup_time(
    k: &KernelTable,
    nl: &Nonlinearity,
    u0: &GridField,
    t_end: f64,
    dt_seq: &[f64],
    opts: &SolveOptions,
) -> Result<BlowupEstimate> {
    if dt_seq.is_empty() || dt_seq.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("dt_seq", "needs a strictly decreasing, nonempty sequence"));
    }
    let mut crossing = Vec::with_capacity(dt_seq.len());
    for &dt in dt_seq {
        let r = mild_solve(k, nl, u0, t_end, dt, opts)?;
        match (r.verdict, r.crossing_time) {
            (Verdict::BlowUpEvidence, Some(t)) => crossing.push(t - 0.5 * dt),
            _ => return Err(Error::NotBlowingUp { dt }),
        }
    }
    let extrapolated: Vec<f64> = crossing
        .windows(2)
        .zip(dt_seq.windows(2))
        .map(|(c, d)| {
            let r = d[0] / d[1];
            (r * c[1] - c[0]) / (r - 1.0)
        })
        .collect();
    let finest_dt = *dt_seq.last().unwrap();
    let finest = *crossing.last().unwrap();
    let estimate = extrapolated.last().copied().unwrap_or(finest);
    let spread = match extrapolated.len() {
        0 | 1 => 0.0,
        l => (extrapolated[l - 1] - extrapolated[l - 2]).abs(),
    };
    let lo = estimate.min(finest - 0.5 * finest_dt) - spread;
    let hi = estimate.max(finest + 0.5 * finest_dt) + spread;
    Ok(BlowupEstimate {
        dts: dt_seq.to_vec(),
        crossing_times: crossing,
        extrapolated,
        estimate,
        lo,
        hi,
    })
}

/// Checks `u_A(t) ≤ u_B(t)` cellwise at every stored level (relative slack `1e-12`).
pub fn check_order_preservation(a: &MildSolveReport, b: &MildSolveReport) -> Result<bool> {
    if a.grid != b.grid || a.dt != b.dt {
        return Err(Error::GridMismatch("reports use different grids or steps".into()));
    }
    if a.fields.is_empty() || b.fields.is_empty() {
        return Err(invalid("report", "solve with store_fields to compare trajectories"));
    }
    for (fa, fb) in a.fields.iter().zip(&b.fields) {
        if fa.iter().zip(fb).any(|(x, y)| *x > y + 1e-12 * (1.0 + y.abs())) {
            return Ok(false);
        }
    }
    for (x, y) in a.background_history.iter().zip(&b.background_history) {
        if *x > y + 1e-12 * (1.0 + y.abs()) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{discretize, BallIndicator, Constant};
    use crate::kernel::{build_kernel, KernelConfig};
    use crate::semigroup::apply_semigroup;
    use std::sync::Arc;

    fn gauss(n: usize) -> KernelTable {
        build_kernel(n, 2.0, &KernelConfig::default()).unwrap()
    }

    fn ball(spec: GridSpec) -> GridField {
        discretize(
            Arc::new(BallIndicator {
                radius: 1.0,
                value: 1.0,
            }),
            spec,
        )
        .unwrap()
    }

    #[test]
    fn zero_source_is_the_semigroup() {
        let k = gauss(1);
        let spec = GridSpec::new(1, 8.0, 256).unwrap();
        let u0 = ball(spec);
        let zero = Nonlinearity::custom_str("0", Some("0"), 0.0).unwrap();
        let r = mild_solve(&k, &zero, &u0, 0.5, 0.1, &SolveOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Converged);
        assert_eq!(r.residual_history, vec![0.0]);
        let s = apply_semigroup(&k, &u0, 0.5).unwrap();
        for (a, b) in r.final_field().values().iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_source_matches_exponential() {
        let k = gauss(1);
        let spec = GridSpec::new(1, 8.0, 512).unwrap();
        let u0 = ball(spec);
        let lin = Nonlinearity::custom_str("u", Some("1"), 0.0).unwrap();
        let r = mild_solve(&k, &lin, &u0, 0.5, 0.01, &SolveOptions::default()).unwrap();
        let s = apply_semigroup(&k, &u0, 0.5).unwrap();
        let top = s.sup() * 0.5f64.exp();
        let err = r
            .final_field()
            .values()
            .iter()
            .zip(s.values())
            .map(|(a, b)| (a - 0.5f64.exp() * b).abs())
            .fold(0.0, f64::max);
        assert!(err / top < 1e-4, "{}", err / top);
    }

    #[test]
    fn constant_data_follow_the_ode() {
        let k = gauss(1);
        let spec = GridSpec::new(1, 4.0, 64).unwrap();
        let u0 = discretize(Arc::new(Constant(0.5)), spec).unwrap();
        let sq = Nonlinearity::power(2.0).unwrap();
        let r = mild_solve(&k, &sq, &u0, 1.0, 1e-3, &SolveOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Converged);
        // u = 1/(2 - t); trapezoid is second order
        let last = *r.sup_history.last().unwrap();
        assert!((last - 1.0).abs() < 1e-6, "{last}");
        let f = r.final_field();
        assert_eq!(f.values().iter().cloned().fold(f64::INFINITY, f64::min), f.sup());
    }

    #[test]
    fn blowup_time_of_the_square() {
        let k = gauss(1);
        let spec = GridSpec::new(1, 4.0, 64).unwrap();
        let u0 = discretize(Arc::new(Constant(1.0)), spec).unwrap();
        let sq = Nonlinearity::power(2.0).unwrap();
        let e = estimate_blowup_time(&k, &sq, &u0, 1.5, &[1e-2, 5e-3, 2.5e-3], &SolveOptions::default()).unwrap();
        assert!(e.contains(1.0), "{e:?}");
        assert!((e.estimate - 1.0).abs() < 1e-2, "{e:?}");
    }

    #[test]
    fn order_is_preserved() {
        let k = gauss(1);
        let spec = GridSpec::new(1, 6.0, 256).unwrap();
        let u0 = ball(spec);
        let opts = SolveOptions {
            store_fields: true,
            ..Default::default()
        };
        let sq = Nonlinearity::power(2.0).unwrap();
        let lower = mild_solve(&k, &sq, &u0, 0.2, 0.01, &opts).unwrap();
        let shifted: Vec<f64> = u0.values().iter().map(|v| v + 0.1).collect();
        let u1 = GridField::from_values(spec, shifted, 0.1).unwrap();
        let upper = mild_solve(&k, &sq, &u1, 0.2, 0.01, &opts).unwrap();
        assert!(check_order_preservation(&lower, &upper).unwrap());
        assert!(!check_order_preservation(&upper, &lower).unwrap());
        assert!(check_order_preservation(&lower, &lower).unwrap());
    }

    #[test]
    fn rejects_steps_that_do_not_divide() {
        let k = gauss(1);
        let u0 = discretize(Arc::new(Constant(1.0)), GridSpec::new(1, 4.0, 64).unwrap()).unwrap();
        let sq = Nonlinearity::power(2.0).unwrap();
        assert!(mild_solve(&k, &sq, &u0, 1.0, 0.3, &SolveOptions::default()).is_err());
    }
}
