//! Special functions not covered by `statrs`.

/// `exp` composed `n` times; `exp_0` is the identity.
pub fn exp_n(n: u32, u: f64) -> f64 {
    (0..n).fold(u, |acc, _| acc.exp())
}

/// Inverse of [`exp_n`] on `[e_n, ∞)`; `log_0` is the identity.
pub fn log_n(n: u32, u: f64) -> f64 {
    (0..n).fold(u, |acc, _| acc.ln())
}

/// `e_n = exp_n(0)`.
pub fn e_n(n: u32) -> f64 {
    exp_n(n, 0.0)
}

/// Bessel function of the first kind of order zero.
pub fn bessel_j0(z: f64) -> f64 {
    let z = z.abs();
    if z < 12.0 {
        let q = -0.25 * z * z;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..80 {
            term *= q / (k * k) as f64;
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        return sum;
    }
    // Hankel asymptotic expansion, truncated at its smallest term.
    let mut p = 0.0;
    let mut q = 0.0;
    let mut a = 1.0; // a_k / z^k
    let mut last = f64::INFINITY;
    for k in 0..60 {
        if k > 0 {
            let odd = (2 * k - 1) as f64;
            a *= -(odd * odd) / (k as f64 * 8.0 * z);
        }
        if a.abs() > last {
            break;
        }
        last = a.abs();
        match k % 4 {
            0 => p += a,
            1 => q += a,
            2 => p -= a,
            _ => q -= a,
        }
        if a.abs() < 1e-17 {
            break;
        }
    }
    let chi = z - std::f64::consts::FRAC_PI_4;
    (2.0 / (std::f64::consts::PI * z)).sqrt() * (p * chi.cos() - q * chi.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iterated_exp_and_log_are_inverse() {
        assert_eq!(e_n(0), 0.0);
        assert_eq!(e_n(1), 1.0);
        assert!((e_n(2) - std::f64::consts::E).abs() < 1e-15);
        for n in 0..3 {
            for u in [0.3, 1.0, 2.0] {
                assert!((log_n(n, exp_n(n, u)) - u).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn j0_against_quadrature_representation() {
        // J0(z) = (1/π) ∫_0^π cos(z sin t) dt; trapezoid is spectrally accurate here
        for z in [0.0, 0.5, 2.404825557695773, 7.3, 11.99, 12.01, 30.0, 150.5] {
            let m = 400 + 2 * z as usize;
            let h = std::f64::consts::PI / m as f64;
            let mut s = 0.5 * (1.0 + (z * 0.0f64.sin()).cos());
            for i in 1..m {
                s += (z * (i as f64 * h).sin()).cos();
            }
            let reference = s * h / std::f64::consts::PI;
            assert!(
                (bessel_j0(z) - reference).abs() < 2e-12,
                "z = {z}: {} vs {reference}",
                bessel_j0(z)
            );
        }
    }
}
