//! Small numerical utilities: grids, bracketing, splines, series acceleration
//! and tiny least-squares fits.

/// `n` points geometrically spaced from `a` to `b` inclusive.
pub fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > 0.0 && n >= 2);
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                b
            } else {
                (la + (lb - la) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// `n` points evenly spaced from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Outcome of [`invert_increasing`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inversion {
    Found(f64),
    /// `g(hi) < target` even at the cap
    AboveCap,
    /// `g(lo) > target` even at the floor
    BelowFloor,
}

/// Solves `g(u) = target` for a nondecreasing `g` on `(0, ∞)` by bisection with
/// an expanding bracket. Brackets grow geometrically from `guess`; bisection
/// runs on `ln u` while the bracket spans more than a factor two, then on `u`.
pub fn invert_increasing<G: FnMut(f64) -> f64>(
    mut g: G,
    target: f64,
    guess: f64,
    floor: f64,
    cap: f64,
    max_iter: usize,
) -> Inversion {
    let guess = guess.clamp(floor, cap);
    let mut lo = guess;
    let mut hi = guess;
    let g0 = g(guess);
    if g0 == target {
        return Inversion::Found(guess);
    }
    if g0 < target {
        loop {
            lo = hi;
            if hi >= cap {
                return Inversion::AboveCap;
            }
            hi = (hi * 4.0).min(cap);
            if g(hi) >= target {
                break;
            }
        }
    } else {
        loop {
            hi = lo;
            if lo <= floor {
                return Inversion::BelowFloor;
            }
            lo = (lo / 4.0).max(floor);
            if g(lo) <= target {
                break;
            }
        }
    }
    for _ in 0..max_iter {
        let mid = if hi > 2.0 * lo && lo > 0.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Inversion::Found(0.5 * (lo + hi))
}

/// Natural-ish cubic spline with not-a-knot end conditions.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>, // second derivatives at the knots
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 4 && y.len() == n);
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        // tridiagonal-with-corners system for M (second derivatives); not-a-knot
        // closes rows 0 and n-1, which we eliminate into rows 1 and n-2.
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 1..n - 1 {
            a[i] = h[i - 1];
            b[i] = 2.0 * (h[i - 1] + h[i]);
            c[i] = h[i];
            d[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
        }
        // not-a-knot: M0 = ((h0+h1) M1 - h0 M2) / h1
        let r0 = (h[0] + h[1]) / h[1];
        let s0 = -h[0] / h[1];
        b[1] += a[1] * r0;
        c[1] += a[1] * s0;
        a[1] = 0.0;
        let k = n - 2;
        let rn = (h[k] + h[k - 1]) / h[k - 1];
        let sn = -h[k] / h[k - 1];
        b[k] += c[k] * rn;
        a[k] += c[k] * sn;
        c[k] = 0.0;
        // Thomas algorithm on rows 1..=n-2
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        cp[1] = c[1] / b[1];
        dp[1] = d[1] / b[1];
        for i in 2..=k {
            let den = b[i] - a[i] * cp[i - 1];
            cp[i] = c[i] / den;
            dp[i] = (d[i] - a[i] * dp[i - 1]) / den;
        }
        let mut m = vec![0.0; n];
        m[k] = dp[k];
        for i in (1..k).rev() {
            m[i] = dp[i] - cp[i] * m[i + 1];
        }
        m[0] = r0 * m[1] + s0 * m[2];
        m[n - 1] = rn * m[k] + sn * m[k - 1];
        CubicSpline { x, y, m }
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    /// Evaluates the spline; extrapolates with the end cubic outside the knots.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    /// First derivative of the spline.
    pub fn derivative(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        (self.y[i + 1] - self.y[i]) / h
            + (-(3.0 * a * a - 1.0) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]) * h / 6.0
    }
}

/// Wynn epsilon acceleration of a sequence of partial sums; returns the
/// best available estimate from the last column computed.
pub fn wynn_epsilon(partial: &[f64]) -> f64 {
    let n = partial.len();
    if n < 3 {
        return *partial.last().unwrap_or(&0.0);
    }
    let mut prev = vec![0.0; n + 1]; // eps_{-1}
    let mut cur: Vec<f64> = partial.to_vec(); // eps_0
    let mut best = partial[n - 1];
    let mut k = 0;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let diff = cur[i + 1] - cur[i];
            let v = if diff == 0.0 || !diff.is_finite() {
                f64::INFINITY
            } else {
                prev[i + 1] + 1.0 / diff
            };
            next.push(v);
        }
        k += 1;
        if k % 2 == 0 {
            if let Some(&v) = next.last() {
                if v.is_finite() {
                    best = v;
                } else {
                    break;
                }
            }
        }
        prev = cur;
        cur = next;
    }
    best
}

/// Least-squares polynomial fit `y ≈ Σ c_k x^k`, `k < degree + 1`, by normal
/// equations on centred and scaled abscissae. Returns coefficients in the
/// original variable evaluated only through [`poly_fit_at`].
pub fn poly_fit(x: &[f64], y: &[f64], degree: usize) -> (Vec<f64>, f64, f64) {
    let n = degree + 1;
    assert!(x.len() >= n && x.len() == y.len());
    let xmin = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if xmax > xmin { xmax - xmin } else { 1.0 };
    let shift = xmin;
    let mut ata = vec![vec![0.0; n]; n];
    let mut aty = vec![0.0; n];
    for (&xi, &yi) in x.iter().zip(y) {
        let z = (xi - shift) / scale;
        let pw: Vec<f64> = (0..n).map(|k| z.powi(k as i32)).collect();
        for r in 0..n {
            aty[r] += pw[r] * yi;
            for c in 0..n {
                ata[r][c] += pw[r] * pw[c];
            }
        }
    }
    let coef = solve_dense(ata, aty);
    (coef, shift, scale)
}

/// Evaluates a fit produced by [`poly_fit`] at `x`.
pub fn poly_fit_at(fit: &(Vec<f64>, f64, f64), x: f64) -> f64 {
    let (c, shift, scale) = fit;
    let z = (x - shift) / scale;
    c.iter().rev().fold(0.0, |acc, &ck| acc * z + ck)
}

/// Gaussian elimination with partial pivoting for small dense systems.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let p = a[col][col];
        if p == 0.0 {
            continue;
        }
        let pivot = a[col].clone();
        for row in col + 1..n {
            let factor = a[row][col] / p;
            if factor == 0.0 {
                continue;
            }
            for (dst, src) in a[row][col..].iter_mut().zip(&pivot[col..]) {
                *dst -= factor * src;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = if a[row][row] != 0.0 { s / a[row][row] } else { 0.0 };
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inversion_of_monotone_maps() {
        match invert_increasing(|u| u * u * u, 27.0, 1.0, 1e-300, 1e300, 200) {
            Inversion::Found(u) => assert!((u - 3.0).abs() < 1e-13),
            other => panic!("{other:?}"),
        }
        match invert_increasing(|u| u.ln(), -50.0, 1.0, 1e-300, 1e300, 200) {
            Inversion::Found(u) => assert!((u.ln() + 50.0).abs() < 1e-10),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            invert_increasing(|u| u.min(5.0), 6.0, 1.0, 1e-10, 1e10, 200),
            Inversion::AboveCap
        );
    }

    #[test]
    fn spline_reproduces_cubics() {
        let x = linspace(0.0, 3.0, 9);
        let y: Vec<f64> = x.iter().map(|t| t * t * t - 2.0 * t + 1.0).collect();
        let s = CubicSpline::new(x, y);
        for t in [0.1, 0.77, 1.5, 2.93] {
            let exact = t * t * t - 2.0 * t + 1.0;
            assert!((s.eval(t) - exact).abs() < 1e-12, "t = {t}");
            assert!((s.derivative(t) - (3.0 * t * t - 2.0)).abs() < 1e-11);
        }
    }

    #[test]
    fn wynn_accelerates_alternating_series() {
        // ln 2 = 1 - 1/2 + 1/3 - ...
        let mut partial = Vec::new();
        let mut s = 0.0;
        for k in 1..=20 {
            s += if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
            partial.push(s);
        }
        assert!((wynn_epsilon(&partial) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn polyfit_recovers_quadratic() {
        let x = linspace(0.0, 1e-3, 10);
        let y: Vec<f64> = x.iter().map(|h| 1.5 - 3.0 * h + 7.0 * h * h).collect();
        let fit = poly_fit(&x, &y, 2);
        assert!((poly_fit_at(&fit, 0.0) - 1.5).abs() < 1e-12);
    }
}
