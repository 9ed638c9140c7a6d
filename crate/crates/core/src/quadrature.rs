//! Quadrature rules used across the crate.
//!
//! * [`integrate`]: globally adaptive 21-point Gauss–Kronrod on a finite interval.
//! * [`tanh_sinh`]: double-exponential rule for integrable endpoint singularities.
//! * [`integrate_tail`]: integrals over `[a, ∞)` by geometrically growing segments
//!   with extrapolation of the remaining geometric tail.
//! * [`gauss_legendre`]: fixed Gauss–Legendre nodes on `[-1, 1]`.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077958109831074,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

/// Outcome of an adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
}

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadTol {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for QuadTol {
    fn default() -> Self {
        QuadTol {
            abs: 0.0,
            rel: 1e-12,
            max_intervals: 2000,
        }
    }
}

impl QuadTol {
    pub fn rel(rel: f64) -> Self {
        QuadTol {
            rel,
            ..Default::default()
        }
    }
}

/// One 21-point Kronrod panel; returns (kronrod estimate, |kronrod - gauss|).
pub fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = fc * WGK[10];
    let mut resg = 0.0;
    for (j, (&x, &w)) in XGK[..10].iter().zip(&WGK[..10]).enumerate() {
        let dx = h * x;
        let s = f(c - dx) + f(c + dx);
        resk += w * s;
        if j % 2 == 1 {
            resg += WG[j / 2] * s;
        }
    }
    (resk * h, ((resk - resg) * h).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod quadrature of `f` over `[a, b]`.
///
/// Never evaluates `f` at the endpoints, so integrable endpoint singularities
/// are tolerated (at the cost of more subdivisions).
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: QuadTol) -> Quad {
    if a == b {
        return Quad {
            value: 0.0,
            error: 0.0,
            evals: 0,
        };
    }
    let (v, e) = gk21(&mut f, a, b);
    let mut evals = 21;
    let mut total = v;
    let mut total_err = e;
    let mut heap = BinaryHeap::new();
    heap.push(Panel {
        a,
        b,
        value: v,
        error: e,
    });
    while total_err > tol.abs.max(tol.rel * total.abs()) && heap.len() < tol.max_intervals {
        let worst = match heap.pop() {
            Some(p) => p,
            None => break,
        };
        let m = 0.5 * (worst.a + worst.b);
        if m <= worst.a || m >= worst.b {
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk21(&mut f, worst.a, m);
        let (v2, e2) = gk21(&mut f, m, worst.b);
        evals += 42;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Panel {
            a: worst.a,
            b: m,
            value: v1,
            error: e1,
        });
        heap.push(Panel {
            a: m,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    // re-sum to shed accumulated cancellation in the running totals
    let mut value = 0.0;
    let mut error = 0.0;
    for p in heap.iter() {
        value += p.value;
        error += p.error;
    }
    Quad {
        value,
        error,
        evals,
    }
}

/// Tanh–sinh quadrature on `[a, b]`, suited to integrands with algebraic or
/// logarithmic endpoint singularities. `f` is never evaluated at `a` or `b`.
pub fn tanh_sinh<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64) -> Quad {
    use std::f64::consts::FRAC_PI_2;
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut evals = 0usize;
    // node at offset t; returns weighted contribution of the symmetric pair
    let pair = |t: f64, f: &mut F| -> f64 {
        let s = FRAC_PI_2 * t.sinh();
        let cs = s.cosh();
        let w = FRAC_PI_2 * t.cosh() / (cs * cs);
        // distance from each endpoint, computed without cancellation
        let d = 2.0 * half / (1.0 + (2.0 * s).exp());
        let mut acc = 0.0;
        if t == 0.0 {
            return w * f(mid);
        }
        let xl = a + d;
        let xr = b - d;
        if d > 0.0 && xl > a && xl < b {
            acc += f(xl);
        }
        if d > 0.0 && xr < b && xr > a {
            acc += f(xr);
        }
        w * acc
    };
    let tmax = 6.5;
    let mut h = 0.5;
    let mut sum = pair(0.0, &mut f);
    evals += 1;
    let mut k = 1;
    while (k as f64) * h <= tmax {
        sum += pair(k as f64 * h, &mut f);
        evals += 2;
        k += 1;
    }
    let mut estimate = sum * h * half;
    let mut error = f64::INFINITY;
    for _level in 0..12 {
        h *= 0.5;
        let mut k = 1;
        while (k as f64) * h <= tmax {
            sum += pair(k as f64 * h, &mut f);
            evals += 2;
            k += 2;
        }
        let next = sum * h * half;
        error = (next - estimate).abs();
        estimate = next;
        if error <= rel_tol * estimate.abs() {
            break;
        }
    }
    Quad {
        value: estimate,
        error,
        evals,
    }
}

/// Result of [`integrate_tail`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tail {
    pub value: f64,
    /// extrapolated contribution of `[upper, ∞)`
    pub remainder: f64,
    /// last integrated abscissa
    pub upper: f64,
}

/// Settings for [`integrate_tail`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailTol {
    pub rel: f64,
    /// largest abscissa reached before declaring divergence
    pub u_max: f64,
    pub max_segments: usize,
}

impl Default for TailTol {
    fn default() -> Self {
        TailTol {
            rel: 1e-12,
            u_max: 1e300,
            max_segments: 1200,
        }
    }
}

/// Integrates a nonnegative, eventually decreasing `f` over `[a, ∞)`.
///
/// Segments `[a + w0(2^k - 1), a + w0(2^{k+1} - 1)]` are integrated in turn;
/// once successive segment integrals shrink geometrically with ratio `r < 1`,
/// the tail is extrapolated as `d r / (1 - r)`. Fails with `TailDivergent`
/// when the ratio does not drop below one before `u_max`.
pub fn integrate_tail<F: FnMut(f64) -> f64>(mut f: F, a: f64, w0: f64, tol: TailTol) -> Result<Tail> {
    let w0 = if w0.is_finite() && w0 > 0.0 { w0 } else { 1.0 };
    let qtol = QuadTol::rel(tol.rel * 0.1);
    let mut lo = a;
    let mut width = w0;
    let mut sum = 0.0;
    let mut prev_d: Option<f64> = None;
    let mut prev_est: Option<f64> = None;
    let mut last_remainder = f64::INFINITY;
    for _ in 0..tol.max_segments {
        let hi = lo + width;
        let d = integrate(&mut f, lo, hi, qtol).value;
        sum += d;
        if d == 0.0 || d <= 1e-18 * sum {
            return Ok(Tail {
                value: sum,
                remainder: 0.0,
                upper: hi,
            });
        }
        if let Some(pd) = prev_d {
            let r = d / pd;
            if r > 0.0 && r < 1.0 - 1e-9 {
                let rem = d * r / (1.0 - r);
                let est = sum + rem;
                last_remainder = rem;
                if let Some(pe) = prev_est {
                    if (est - pe).abs() <= tol.rel * est.abs() {
                        return Ok(Tail {
                            value: est,
                            remainder: rem,
                            upper: hi,
                        });
                    }
                }
                prev_est = Some(est);
            } else {
                prev_est = None;
            }
        }
        prev_d = Some(d);
        lo = hi;
        if lo > tol.u_max {
            break;
        }
        width *= 2.0;
    }
    Err(Error::TailDivergent {
        from: a,
        remainder: last_remainder,
    })
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Newton iteration on `P_n`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_weights_sum_to_two() {
        let sk: f64 = 2.0 * WGK[..10].iter().sum::<f64>() + WGK[10];
        let sg: f64 = 2.0 * WG.iter().sum::<f64>();
        assert!((sk - 2.0).abs() < 1e-14);
        assert!((sg - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gk21_exact_for_high_degree_polynomials() {
        let mut f = |x: f64| x.powi(30) + 3.0 * x.powi(7) + 1.0;
        let (v, _) = gk21(&mut f, -1.0, 1.0);
        assert!((v - (2.0 / 31.0 + 2.0)).abs() < 1e-13);
    }

    #[test]
    fn adaptive_handles_peaks_and_singularities() {
        let q = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, QuadTol::rel(1e-12));
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((q.value - exact).abs() < 1e-9 * exact);
        let q = integrate(|x| x.powf(-0.5), 0.0, 1.0, QuadTol::rel(1e-10));
        assert!((q.value - 2.0).abs() < 1e-8);
    }

    #[test]
    fn tanh_sinh_endpoint_singularity() {
        let q = tanh_sinh(|x| x.powf(-0.9), 0.0, 1.0, 1e-12);
        assert!((q.value - 10.0).abs() < 1e-8, "{q:?}");
        let q = tanh_sinh(|x: f64| -x.ln(), 0.0, 1.0, 1e-13);
        assert!((q.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tail_extrapolation_exact_for_powers() {
        let t = integrate_tail(|s| s.powi(-3), 2.0, 2.0, TailTol::default()).unwrap();
        assert!((t.value - 0.125).abs() < 1e-13);
        let t = integrate_tail(|s: f64| (-s).exp(), 0.5, 1.0, TailTol::default()).unwrap();
        assert!((t.value - (-0.5f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn tail_divergence_detected() {
        let r = integrate_tail(
            |s| 1.0 / s,
            1.0,
            1.0,
            TailTol {
                u_max: 1e30,
                ..Default::default()
            },
        );
        assert!(matches!(r, Err(Error::TailDivergent { .. })));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1, 2, 4, 7, 12] {
            let (x, w) = gauss_legendre(n);
            let deg = 2 * n - 1;
            let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((s - exact).abs() < 1e-13, "n = {n}");
        }
    }
}
