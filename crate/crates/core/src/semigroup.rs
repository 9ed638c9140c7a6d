//! The semigroup `S(t)μ = Γ_θ(·, t) * μ` on grid fields.
//!
//! Data are split as `μ = b + (μ - b)` with the background `b` carried
//! exactly (`S(t)b = b`) and the compactly supported part convolved with the
//! cell integrals of `Γ_θ(·, t)`, linearly, by FFTs on a grid padded to twice
//! the size.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};
use crate::grid::{GridField, GridSpec};
use crate::kernel::KernelTable;
use crate::quadrature::{gauss_legendre, integrate, QuadTol};

/// Largest tolerated fraction of kernel mass outside the window.
pub const MAX_LEAK: f64 = 0.01;

/// Forward/inverse FFTs over the padded grid (`2M` per axis).
#[derive(Clone)]
pub struct ConvPlan {
    spec: GridSpec,
    size: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ConvPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvPlan").field("spec", &self.spec).field("size", &self.size).finish()
    }
}

/// Spectrum of the cell-integrated kernel at one time.
///
/// The weights are real and even, so the spectrum is real and only the half
/// with nonnegative axis-0 frequency is kept (see [`ConvPlan::half_len`]).
#[derive(Debug, Clone)]
pub struct KernelSpectrum {
    pub t: f64,
    /// mass of `Γ_θ(·, t)` outside the ball of radius `L`
    pub leak: f64,
    /// sum of the cell weights inside the padded window
    pub weight_sum: f64,
    pub spectrum: Vec<f64>,
}

impl ConvPlan {
    pub fn new(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let size = 2 * spec.m;
        let mut planner = FftPlanner::new();
        Ok(ConvPlan {
            spec,
            size,
            fwd: planner.plan_fft_forward(size),
            inv: planner.plan_fft_inverse(size),
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn padded_len(&self) -> usize {
        self.size.pow(self.spec.n as u32)
    }

    fn transform(&self, data: &mut [Complex<f64>], inverse: bool) {
        let fft = if inverse { &self.inv } else { &self.fwd };
        let s = self.size;
        let total = data.len();
        let mut stride = 1;
        let mut scratch = Vec::new();
        for _ in 0..self.spec.n {
            if stride == 1 {
                fft.process(data);
            } else {
                let lines = total / s;
                scratch.resize(total, Complex::new(0.0, 0.0));
                let mut line = 0;
                for hi in 0..total / (s * stride) {
                    for lo in 0..stride {
                        let base = hi * s * stride + lo;
                        for k in 0..s {
                            scratch[line * s + k] = data[base + k * stride];
                        }
                        line += 1;
                    }
                }
                debug_assert_eq!(line, lines);
                fft.process(&mut scratch);
                let mut line = 0;
                for hi in 0..total / (s * stride) {
                    for lo in 0..stride {
                        let base = hi * s * stride + lo;
                        for k in 0..s {
                            data[base + k * stride] = scratch[line * s + k];
                        }
                        line += 1;
                    }
                }
            }
            stride *= s;
        }
    }

    fn padded_index(&self, ii: &[usize; 3]) -> usize {
        let mut p = 0;
        for d in (0..self.spec.n).rev() {
            p = p * self.size + ii[d];
        }
        p
    }

    /// Length of a half spectrum: frequencies `0..=M` along axis 0, all along the others.
    pub fn half_len(&self) -> usize {
        (self.spec.m + 1) * self.size.pow(self.spec.n as u32 - 1)
    }

    fn to_half(&self, full: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let rows = self.size.pow(self.spec.n as u32 - 1);
        let w = self.spec.m + 1;
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&full[r * self.size..r * self.size + w]);
        }
        out
    }

    fn expand_half(&self, half: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let s = self.size;
        let n = self.spec.n;
        let w = self.spec.m + 1;
        let mut full = vec![Complex::new(0.0, 0.0); self.padded_len()];
        for (p, slot) in full.iter_mut().enumerate() {
            let k0 = p % s;
            let rest = p / s;
            if k0 < w {
                *slot = half[rest * w + k0];
            } else {
                // Hermitian symmetry: X[k] = conj X[-k]
                let mut r = rest;
                let mut neg_rest = 0;
                let mut mul = 1;
                for _ in 1..n {
                    let kd = r % s;
                    r /= s;
                    neg_rest += ((s - kd) % s) * mul;
                    mul *= s;
                }
                *slot = half[neg_rest * w + (s - k0)].conj();
            }
        }
        full
    }

    /// Half spectrum of grid values (zero padded).
    pub fn forward(&self, values: &[f64]) -> Vec<Complex<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.padded_len()];
        for (idx, &v) in values.iter().enumerate() {
            let ii = self.spec.unravel(idx);
            buf[self.padded_index(&ii)] = Complex::new(v, 0.0);
        }
        self.transform(&mut buf, false);
        self.to_half(&buf)
    }

    /// Inverse of [`forward`](Self::forward), restricted to the grid.
    pub fn inverse(&self, half: &[Complex<f64>]) -> Vec<f64> {
        let mut spectrum = self.expand_half(half);
        self.transform(&mut spectrum, true);
        let norm = 1.0 / spectrum.len() as f64;
        (0..self.spec.len())
            .map(|idx| {
                let ii = self.spec.unravel(idx);
                spectrum[self.padded_index(&ii)].re * norm
            })
            .collect()
    }

    /// Linear convolution of grid values with a kernel spectrum.
    pub fn convolve(&self, values: &[f64], kernel: &KernelSpectrum) -> Vec<f64> {
        let mut s = self.forward(values);
        for (a, b) in s.iter_mut().zip(&kernel.spectrum) {
            *a *= *b;
        }
        self.inverse(&s)
    }

    /// Real half spectrum of an even real array given on the padded grid.
    fn even_spectrum(&self, mut buf: Vec<Complex<f64>>) -> Vec<f64> {
        self.transform(&mut buf, false);
        self.to_half(&buf).into_iter().map(|c| c.re).collect()
    }

    /// Cell-integrated kernel at time `t`, transformed.
    pub fn kernel_spectrum(&self, k: &KernelTable, t: f64) -> Result<KernelSpectrum> {
        if k.dim() != self.spec.n {
            return Err(Error::GridMismatch(format!(
                "kernel dimension {} vs grid dimension {}",
                k.dim(),
                self.spec.n
            )));
        }
        if !(t > 0.0) {
            return Err(invalid("t", format!("must be positive, got {t}")));
        }
        let leak = k.mass_outside(self.spec.half_width, t);
        if leak > MAX_LEAK {
            return Err(Error::WindowTooSmall { leak, t });
        }
        let w = cell_weights(k, &self.spec, t);
        let m = self.spec.m;
        let n = self.spec.n;
        let mut buf = vec![Complex::new(0.0, 0.0); self.padded_len()];
        let mut weight_sum = 0.0;
        // mirror the nonnegative orthant into all sign patterns
        for (idx, &wv) in w.iter().enumerate() {
            let ii = self.spec.unravel(idx);
            for signs in 0..(1usize << n) {
                let mut skip = false;
                let mut p = [0usize; 3];
                for d in 0..n {
                    let neg = signs >> d & 1 == 1;
                    if neg && ii[d] == 0 {
                        skip = true;
                        break;
                    }
                    p[d] = if neg { self.size - ii[d] } else { ii[d] };
                }
                if skip {
                    continue;
                }
                buf[self.padded_index(&p)] = Complex::new(wv, 0.0);
                weight_sum += wv;
            }
        }
        debug_assert!(m < self.size);
        Ok(KernelSpectrum {
            t,
            leak,
            weight_sum,
            spectrum: self.even_spectrum(buf),
        })
    }
}

/// One-dimensional Gaussian mass of `[a, b]` for variance `2t`.
fn gauss_interval(a: f64, b: f64, t: f64) -> f64 {
    let s = 2.0 * t.sqrt();
    if a >= 0.0 {
        0.5 * (erfc(a / s) - erfc(b / s))
    } else if b <= 0.0 {
        0.5 * (erfc(-b / s) - erfc(-a / s))
    } else {
        1.0 - 0.5 * (erfc(-a / s) + erfc(b / s))
    }
}

/// Weights `W_d = ∫_{cell d} Γ_θ(z, t) dz` for `d` in the nonnegative orthant `[0, M)^N`.
fn cell_weights(k: &KernelTable, spec: &GridSpec, t: f64) -> Vec<f64> {
    let n = spec.n;
    let h = spec.h();
    let m = spec.m;
    let theta = k.theta();
    if theta == 2.0 {
        let axis: Vec<f64> = (0..m)
            .map(|d| gauss_interval((d as f64 - 0.5) * h, (d as f64 + 0.5) * h, t))
            .collect();
        return (0..spec.len())
            .map(|idx| {
                let ii = spec.unravel(idx);
                (0..n).map(|d| axis[ii[d]]).product()
            })
            .collect();
    }
    let scale = t.powf(1.0 / theta);
    let (gx, gw) = gauss_legendre(5);
    let mut w: Vec<f64> = (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            let ii = spec.unravel(idx);
            if n == 1 {
                let a = (ii[0] as f64 - 0.5) * h;
                let b = (ii[0] as f64 + 0.5) * h;
                if ii[0] == 0 {
                    // symmetric: twice the half cell
                    return 2.0 * integrate(|z| k.eval_radial(z, t), 0.0, b, QuadTol::rel(1e-12)).value;
                }
                return integrate(|z| k.eval_radial(z, t), a, b, QuadTol::rel(1e-12)).value;
            }
            let mut dist2 = 0.0;
            for &i in &ii[..n] {
                let near = (i as f64 - 0.5).max(0.0) * h;
                dist2 += near * near;
            }
            let local = scale.max(dist2.sqrt());
            let sub = ((2.0 * h / local).ceil() as usize).clamp(1, 8);
            let sh = h / sub as f64;
            let q = gx.len() * sub;
            let mut total = 0.0;
            let mut x = [0.0; 3];
            for flat in 0..q.pow(n as u32) {
                let mut rem = flat;
                let mut wt = 1.0;
                for xd in x.iter_mut().take(n).enumerate() {
                    let (d, xv) = xd;
                    let j = rem % q;
                    rem /= q;
                    let (cell, node) = (j / gx.len(), j % gx.len());
                    let lo = (ii[d] as f64 - 0.5) * h + cell as f64 * sh;
                    *xv = lo + 0.5 * sh * (1.0 + gx[node]);
                    wt *= 0.5 * sh * gw[node];
                }
                let r = x[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
                total += wt * k.eval_radial(r, t);
            }
            total
        })
        .collect();
    if scale < h {
        // peaked inside the origin cell: take its weight from the mass defect
        let mut others = 0.0;
        for (idx, &v) in w.iter().enumerate().skip(1) {
            let ii = spec.unravel(idx);
            let copies = (0..n).filter(|&d| ii[d] > 0).count();
            others += v * (1usize << copies) as f64;
        }
        let outside = k.mass_outside((m as f64 - 0.5) * h, t);
        w[0] = (1.0 - others - outside).max(0.0);
    }
    w
}

/// `S(t) u0`.
pub fn apply_semigroup(k: &KernelTable, u0: &GridField, t: f64) -> Result<GridField> {
    let b = u0.background();
    if u0.values().iter().all(|&v| v == b) {
        if !(t > 0.0) {
            return Err(invalid("t", format!("must be positive, got {t}")));
        }
        return Ok(u0.with_values(u0.values().to_vec(), b));
    }
    let plan = ConvPlan::new(*u0.spec())?;
    let ks = plan.kernel_spectrum(k, t)?;
    Ok(apply_with(&plan, &ks, u0))
}

/// `S(t) u0` with a precomputed kernel spectrum.
pub fn apply_with(plan: &ConvPlan, ks: &KernelSpectrum, u0: &GridField) -> GridField {
    let b = u0.background();
    let pert: Vec<f64> = u0.values().iter().map(|v| v - b).collect();
    if pert.iter().all(|&v| v == 0.0) {
        return u0.with_values(vec![b; pert.len()], b);
    }
    let conv = plan.convolve(&pert, ks);
    // roundoff can leave tiny negative values where the field is zero
    let out = conv.into_iter().map(|v| (b + v).max(0.0)).collect();
    u0.with_values(out, b)
}

/// Fitted constant of the decay estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    /// smallest `C` with `‖S(t)μ‖_∞ ≤ C t^{-N/θ} sup_x ∫_{B(x, t^{1/θ})} μ` on the `t` grid
    pub c: f64,
    /// `(t, ‖S(t)μ‖_∞, sup of ball integrals, ratio)`
    pub rows: Vec<(f64, f64, f64, f64)>,
}

/// Sliding ball integrals `∫_{B(x_i, ρ)} μ` at every cell centre.
pub fn ball_integrals(u: &GridField, rho: f64) -> Vec<f64> {
    let spec = *u.spec();
    let h = spec.h();
    let vals = u.values();
    if spec.n == 1 {
        let m = spec.m;
        let mut prefix = vec![0.0; m + 1];
        for i in 0..m {
            prefix[i + 1] = prefix[i] + vals[i] * h;
        }
        // integral of the piecewise-constant field from -L to y
        let cum = |y: f64| -> f64 {
            let s = ((y + spec.half_width) / h).clamp(0.0, m as f64);
            let j = (s.floor() as usize).min(m - 1);
            prefix[j] + (s - j as f64) * vals[j] * h
        };
        return (0..m)
            .map(|i| {
                let x = spec.center(i);
                cum(x + rho) - cum(x - rho)
            })
            .collect();
    }
    // N ≥ 2: convolve with the ball mask, cell coverage by 4^N sub-samples
    let plan = ConvPlan::new(spec).expect("validated grid");
    let reach = ((rho / h).ceil() as usize + 1).min(spec.m - 1);
    let sub: usize = 4;
    let mut buf = vec![Complex::new(0.0, 0.0); plan.padded_len()];
    let n = spec.n;
    let side = 2 * reach + 1;
    for flat in 0..side.pow(n as u32) {
        let mut rem = flat;
        let mut off = [0i64; 3];
        for o in off.iter_mut().take(n) {
            *o = (rem % side) as i64 - reach as i64;
            rem /= side;
        }
        let mut inside = 0usize;
        for s in 0..sub.pow(n as u32) {
            let mut r2 = 0.0;
            let mut sr = s;
            for o in off.iter().take(n) {
                let frac = ((sr % sub) as f64 + 0.5) / sub as f64 - 0.5;
                sr /= sub;
                let y = (*o as f64 + frac) * h;
                r2 += y * y;
            }
            if r2 <= rho * rho {
                inside += 1;
            }
        }
        if inside == 0 {
            continue;
        }
        let mut p = [0usize; 3];
        for d in 0..n {
            p[d] = if off[d] >= 0 {
                off[d] as usize
            } else {
                (plan.size as i64 + off[d]) as usize
            };
        }
        let w = inside as f64 / sub.pow(n as u32) as f64 * h.powi(n as i32);
        buf[plan.padded_index(&p)] = Complex::new(w, 0.0);
    }
    let ks = KernelSpectrum {
        t: 0.0,
        leak: 0.0,
        weight_sum: 0.0,
        spectrum: plan.even_spectrum(buf),
    };
    plan.convolve(vals, &ks)
}

/// Fits the constant of `‖S(t)μ‖_∞ ≤ C t^{-N/θ} sup_x ∫_{B(x,t^{1/θ})} μ`.
pub fn check_decay_estimate(k: &KernelTable, u0: &GridField, t_grid: &[f64]) -> Result<DecayFit> {
    if u0.background() != 0.0 {
        return Err(invalid("u0", "decay estimate needs compactly supported data (zero background)"));
    }
    let plan = ConvPlan::new(*u0.spec())?;
    let n = u0.spec().n as f64;
    let mut rows = Vec::with_capacity(t_grid.len());
    let mut c: f64 = 0.0;
    for &t in t_grid {
        let ks = plan.kernel_spectrum(k, t)?;
        let sup = apply_with(&plan, &ks, u0).sup();
        let rho = t.powf(1.0 / k.theta());
        let ball = ball_integrals(u0, rho).into_iter().fold(0.0, f64::max);
        let ratio = if sup == 0.0 { 0.0 } else { sup * t.powf(n / k.theta()) / ball };
        c = c.max(ratio);
        rows.push((t, sup, ball, ratio));
    }
    Ok(DecayFit { c, rows })
}

/// Outcome of the grid Jensen check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JensenReport {
    pub t: f64,
    /// largest `Φ(S(t)μ) - S(t)Φ(μ)` scaled by `1 + |values|`
    pub worst: f64,
    pub holds: bool,
}

/// Checks `Φ(S(t)μ) ≤ S(t)Φ(μ)` cellwise for a convex `Φ` (tolerance `1e-8 (1 + |values|)`).
pub fn check_jensen<P: Fn(f64) -> f64>(k: &KernelTable, u0: &GridField, t: f64, phi: P) -> Result<JensenReport> {
    let plan = ConvPlan::new(*u0.spec())?;
    let ks = plan.kernel_spectrum(k, t)?;
    let su = apply_with(&plan, &ks, u0);
    let phi_vals: Vec<f64> = u0.values().iter().map(|&v| phi(v)).collect();
    let phi_b = phi(u0.background());
    if let Some(v) = phi_vals.iter().find(|v| !v.is_finite()) {
        return Err(invalid("phi", format!("Φ(μ) is not finite ({v})")));
    }
    let pert: Vec<f64> = phi_vals.iter().map(|v| v - phi_b).collect();
    let sphi: Vec<f64> = plan.convolve(&pert, &ks).into_iter().map(|v| v + phi_b).collect();
    let mut worst = f64::NEG_INFINITY;
    for (a, b) in su.values().iter().zip(&sphi) {
        let lhs = phi(*a);
        let scale = 1.0 + lhs.abs().max(b.abs());
        worst = worst.max((lhs - b) / scale);
    }
    Ok(JensenReport {
        t,
        worst,
        holds: worst <= 1e-8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{discretize, BallIndicator, Constant};
    use crate::kernel::{build_kernel, KernelConfig};

    #[test]
    fn constant_is_preserved_exactly() {
        let k = build_kernel(1, 1.0, &KernelConfig::default()).unwrap();
        let spec = GridSpec::new(1, 4.0, 256).unwrap();
        let u = discretize(Arc::new(Constant(2.5)), spec).unwrap();
        let s = apply_semigroup(&k, &u, 0.1).unwrap();
        assert!(s.values().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn gaussian_ball_matches_erf() {
        let k = build_kernel(1, 2.0, &KernelConfig::default()).unwrap();
        let spec = GridSpec::new(1, 8.0, 1024).unwrap();
        let u = discretize(
            Arc::new(BallIndicator {
                radius: 1.0,
                value: 1.0,
            }),
            spec,
        )
        .unwrap();
        let t = 0.3;
        let s = apply_semigroup(&k, &u, t).unwrap();
        for (i, v) in s.values().iter().enumerate() {
            let x = spec.center(i);
            let exact = gauss_interval(x - 1.0, x + 1.0, t);
            assert!((v - exact).abs() < 1e-12, "x = {x}: {v} vs {exact}");
        }
    }

    #[test]
    fn two_dimensional_gaussian_is_separable() {
        let k = build_kernel(2, 2.0, &KernelConfig::default()).unwrap();
        let spec = GridSpec::new(2, 4.0, 64).unwrap();
        let mut vals = vec![0.0; spec.len()];
        vals[32 + 64 * 32] = 1.0;
        let u = GridField::from_values(spec, vals, 0.0).unwrap();
        let s = apply_semigroup(&k, &u, 0.2).unwrap();
        let h = spec.h();
        for idx in [32 + 64 * 32, 35 + 64 * 30, 10 + 64 * 50] {
            let ii = spec.unravel(idx);
            let a = gauss_interval((ii[0] as f64 - 32.5) * h, (ii[0] as f64 - 31.5) * h, 0.2);
            let b = gauss_interval((ii[1] as f64 - 32.5) * h, (ii[1] as f64 - 31.5) * h, 0.2);
            assert!((s.values()[idx] - a * b).abs() < 1e-14);
        }
    }

    #[test]
    fn three_dimensional_point_mass() {
        let k = build_kernel(3, 2.0, &KernelConfig::default()).unwrap();
        let spec = GridSpec::new(3, 2.0, 16).unwrap();
        let mut vals = vec![0.0; spec.len()];
        let src = 8 + 16 * 8 + 256 * 8;
        vals[src] = 1.0;
        let u = GridField::from_values(spec, vals, 0.0).unwrap();
        let s = apply_semigroup(&k, &u, 0.05).unwrap();
        let h = spec.h();
        let w = |d: i64| gauss_interval((d as f64 - 0.5) * h, (d as f64 + 0.5) * h, 0.05);
        for idx in [src, src + 1, src - 16 * 3 + 2, 3 + 16 * 12 + 256 * 5] {
            let ii = spec.unravel(idx);
            let exact = w(ii[0] as i64 - 8) * w(ii[1] as i64 - 8) * w(ii[2] as i64 - 8);
            assert!((s.values()[idx] - exact).abs() < 1e-14, "{} vs {exact}", s.values()[idx]);
        }
    }

    #[test]
    fn fractional_weights_sum_to_one() {
        for n in [1, 2] {
            let k = build_kernel(n, 1.5, &KernelConfig::default()).unwrap();
            let m = if n == 1 { 512 } else { 64 };
            let spec = GridSpec::new(n, 6.0, m).unwrap();
            let plan = ConvPlan::new(spec).unwrap();
            for t in [1e-4, 0.02, 0.1] {
                let ks = plan.kernel_spectrum(&k, t).unwrap();
                let outside = k.mass_outside((m as f64 - 0.5) * spec.h(), t);
                // box vs ball leaves a little slack for N = 2
                let tol = if n == 1 { 1e-8 } else { 2.0 * outside + 1e-6 };
                assert!((ks.weight_sum + outside - 1.0).abs() < tol, "N = {n}, t = {t}: {}", ks.weight_sum);
            }
        }
    }

    #[test]
    fn window_leak_is_rejected() {
        let k = build_kernel(1, 1.0, &KernelConfig::default()).unwrap();
        let spec = GridSpec::new(1, 1.0, 64).unwrap();
        let u = GridField::from_values(spec, vec![1.0; 64], 0.0).unwrap();
        assert!(matches!(apply_semigroup(&k, &u, 1.0), Err(Error::WindowTooSmall { .. })));
    }

    #[test]
    fn ball_integrals_in_one_and_two_dimensions() {
        let spec = GridSpec::new(1, 4.0, 256).unwrap();
        let u = GridField::from_values(spec, vec![1.0; 256], 0.0).unwrap();
        let b = ball_integrals(&u, 0.5);
        assert!((b[128] - 1.0).abs() < 1e-12);
        let spec2 = GridSpec::new(2, 4.0, 128).unwrap();
        let u2 = GridField::from_values(spec2, vec![1.0; 128 * 128], 0.0).unwrap();
        let b2 = ball_integrals(&u2, 1.0);
        let mid = 64 + 128 * 64;
        assert!((b2[mid] - std::f64::consts::PI).abs() < 0.01, "{}", b2[mid]);
    }
}
