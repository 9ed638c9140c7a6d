//! Grid verifiers for the growth bounds on `f(F⁻¹(σ))` and for convexity of
//! `σ ↦ F⁻¹(σ^k)` near zero.

use serde::Serialize;

use super::Calculus;
use crate::error::{invalid, Result};

/// Fitted constant of the growth bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthFitReport {
    pub eps: f64,
    pub q_f: f64,
    /// smallest `C ≥ 1` for which all three bounds hold on the grid
    pub c: f64,
    /// `ln C` required by each bound separately (lower, upper, inverse)
    pub ln_c_parts: [f64; 3],
    pub finite: bool,
}

/// Smallest `C ≥ 1` with
/// `C⁻¹σ^{ε-q} ≤ f(F⁻¹(σ)) ≤ Cσ^{-ε-q}` and `F⁻¹(σ) ≤ Cσ^{1-q-ε}` on the grid.
pub fn verify_lemma41(calc: &Calculus, eps: f64, sigma_grid: &[f64]) -> Result<GrowthFitReport> {
    let q = calc.q_f()?;
    if !(eps > 0.0 && eps < q) {
        return Err(invalid("eps", format!("must lie in (0, q_f = {q}), got {eps}")));
    }
    let nl = calc.nonlinearity();
    let mut parts = [0.0f64; 3];
    for &s in sigma_grid {
        let u = calc.eval_F_inv(s)?;
        let lf = nl.ln_f(u);
        let ls = s.ln();
        parts[0] = parts[0].max((eps - q) * ls - lf);
        parts[1] = parts[1].max(lf + (eps + q) * ls);
        parts[2] = parts[2].max(u.ln() - (1.0 - q - eps) * ls);
    }
    let ln_c = parts.iter().cloned().fold(0.0, f64::max);
    let c = ln_c.exp();
    Ok(GrowthFitReport {
        eps,
        q_f: q,
        c,
        ln_c_parts: parts,
        finite: ln_c.is_finite() && ln_c < 700.0,
    })
}

/// Convexity of `g(σ) = F⁻¹(σ^k)` from the origin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub k: f64,
    /// largest grid point up to which every second difference is nonnegative within tolerance
    pub sigma_star: f64,
    /// smallest normalized second difference seen below `sigma_star`
    pub min_curvature: f64,
    pub grid_max: f64,
}

/// Scans second differences of `g(σ) = F⁻¹(σ^k)` upward from the smallest
/// grid point and reports where convexity first fails.
pub fn verify_lemma42(calc: &Calculus, k: f64, sigma_grid: &[f64]) -> Result<ConvexityReport> {
    if !(k > 0.0) {
        return Err(invalid("k", format!("must be positive, got {k}")));
    }
    let mut grid: Vec<f64> = sigma_grid.iter().copied().filter(|&s| s > 0.0).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() < 3 {
        return Err(invalid("sigma_grid", "need at least three positive points"));
    }
    let grid_max = *grid.last().unwrap();
    let mut pts = Vec::with_capacity(grid.len());
    for &s in &grid {
        match calc.eval_F_inv(s.powf(k)) {
            Ok(g) => pts.push((s, g)),
            Err(_) => break,
        }
    }
    let mut sigma_star = pts.first().map_or(0.0, |p| p.0);
    let mut min_curv = f64::INFINITY;
    if pts.len() >= 2 {
        sigma_star = pts[1].0;
    }
    for w in pts.windows(3) {
        let ((x1, g1), (x2, g2), (x3, g3)) = (w[0], w[1], w[2]);
        let d2 = 2.0 * ((g3 - g2) / (x3 - x2) - (g2 - g1) / (x2 - x1)) / (x3 - x1);
        let scale = (g1.abs() + g2.abs() + g3.abs()) / ((x3 - x2) * (x2 - x1));
        let tol = 1e-9 * scale;
        if d2 < -tol {
            break;
        }
        min_curv = min_curv.min(d2 / scale.max(f64::MIN_POSITIVE));
        sigma_star = x3;
    }
    Ok(ConvexityReport {
        k,
        sigma_star,
        min_curvature: min_curv,
        grid_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::{build_calculus, Nonlinearity, QuadratureConfig};
    use crate::numeric::geomspace;

    fn calc(nl: Nonlinearity) -> Calculus {
        build_calculus(&nl, &QuadratureConfig::default()).unwrap()
    }

    #[test]
    fn growth_bounds_trivial_cases() {
        let grid = geomspace(1e-8, 0.5, 40);
        let r = verify_lemma41(&calc(Nonlinearity::power(2.0).unwrap()), 0.5, &grid).unwrap();
        assert_eq!(r.c, 1.0);
        let grid = geomspace(1e-8, 0.1, 40);
        let r = verify_lemma41(&calc(Nonlinearity::exp()), 0.5, &grid).unwrap();
        assert_eq!(r.c, 1.0);
        let r = verify_lemma41(&calc(Nonlinearity::exp_n(1, 2.0).unwrap()), 0.5, &geomspace(1e-6, 0.1, 30)).unwrap();
        assert!(r.finite && r.c >= 1.0);
        assert!(verify_lemma41(&calc(Nonlinearity::exp()), 1.5, &grid).is_err());
    }

    #[test]
    fn convexity_near_zero() {
        let grid = geomspace(1e-4, 1.0, 60);
        let r = verify_lemma42(&calc(Nonlinearity::power(2.0).unwrap()), 1.0, &grid).unwrap();
        assert_eq!(r.sigma_star, r.grid_max);
        let grid = geomspace(1e-4, 0.99, 60);
        let r = verify_lemma42(&calc(Nonlinearity::exp()), 2.0, &grid).unwrap();
        assert_eq!(r.sigma_star, r.grid_max);
        let r = verify_lemma42(&calc(Nonlinearity::exp_n(1, 2.0).unwrap()), 2.0, &geomspace(1e-3, 0.5, 40)).unwrap();
        assert!(r.sigma_star > 0.0);
    }
}
