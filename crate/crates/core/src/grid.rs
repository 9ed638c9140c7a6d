//! Uniform cell grids on `[-L, L]^N` and the data that live on them.
//!
//! Cell `i` along an axis is `[-L + i h, -L + (i+1) h]` with `h = 2L/M`, so the
//! origin sits on a cell corner and the `2^N` cells touching it are the ones
//! that see a singularity at the origin.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expr::Expr;
use crate::quadrature::{gauss_legendre, tanh_sinh};

/// Cells within this many cell widths of a declared singularity get cell averages.
pub const NEAR_SINGULAR_CELLS: f64 = 16.0;

/// Shape of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "M")]
    pub m: usize,
}

impl GridSpec {
    pub fn new(n: usize, half_width: f64, m: usize) -> Result<Self> {
        let g = GridSpec { n, half_width, m };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n) {
            return Err(invalid("N", format!("dimension must be 1, 2 or 3, got {}", self.n)));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(invalid("L", format!("half width must be positive, got {}", self.half_width)));
        }
        if self.m < 2 || !self.m.is_power_of_two() {
            return Err(invalid("M", format!("points per axis must be a power of two, got {}", self.m)));
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.m as f64
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinate of cell centre `i` along one axis.
    pub fn center(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.h()
    }

    /// Multi-index of a flat index; axis 0 varies fastest.
    pub fn unravel(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for o in out.iter_mut().take(self.n) {
            *o = idx % self.m;
            idx /= self.m;
        }
        out
    }

    pub fn point(&self, idx: usize) -> [f64; 3] {
        let ii = self.unravel(idx);
        let mut x = [0.0; 3];
        for d in 0..self.n {
            x[d] = self.center(ii[d]);
        }
        x
    }

    /// Same domain with twice as many cells per axis.
    pub fn refined(&self) -> GridSpec {
        GridSpec {
            m: 2 * self.m,
            ..*self
        }
    }
}

/// Initial data that can be evaluated pointwise.
pub trait PointwiseData: Send + Sync + fmt::Debug {
    /// Value at `x` (length `N`).
    fn eval(&self, x: &[f64]) -> f64;

    /// Exponent `a` if the data behave like `|x|^{-a}` at the origin.
    fn singular_exponent(&self) -> Option<f64> {
        None
    }

    /// Exact average over the box `[lo, hi]`, if known.
    fn cell_average(&self, _lo: &[f64], _hi: &[f64]) -> Option<f64> {
        None
    }

    /// Value far away; the part `μ - background` must vanish outside the window.
    fn background(&self) -> f64 {
        0.0
    }
}

/// `μ ≡ c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl PointwiseData for Constant {
    fn eval(&self, _x: &[f64]) -> f64 {
        self.0
    }
    fn cell_average(&self, _lo: &[f64], _hi: &[f64]) -> Option<f64> {
        Some(self.0)
    }
    fn background(&self) -> f64 {
        self.0
    }
}

fn norm(x: &[f64]) -> f64 {
    // scaled so that tiny quadrature nodes next to the origin do not underflow
    let big = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if big == 0.0 {
        return 0.0;
    }
    big * x.iter().map(|v| (v / big) * (v / big)).sum::<f64>().sqrt()
}

/// `coef |x|^{-a}` on `|x| < radius`, zero outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialPower {
    pub coef: f64,
    pub exponent: f64,
    pub radius: f64,
}

impl PointwiseData for RadialPower {
    fn eval(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        if r < self.radius {
            self.coef * r.powf(-self.exponent)
        } else {
            0.0
        }
    }
    fn singular_exponent(&self) -> Option<f64> {
        Some(self.exponent)
    }
    fn cell_average(&self, lo: &[f64], hi: &[f64]) -> Option<f64> {
        // one-dimensional cells with an endpoint at the origin, inside the support
        if lo.len() != 1 || self.exponent >= 1.0 {
            return None;
        }
        let (a, b) = (lo[0], hi[0]);
        let h = b - a;
        let far = a.abs().max(b.abs());
        if (a == 0.0 || b == 0.0) && far <= self.radius {
            Some(self.coef * h.powf(-self.exponent) / (1.0 - self.exponent))
        } else {
            None
        }
    }
}

/// `value · χ_{B_radius}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallIndicator {
    pub radius: f64,
    pub value: f64,
}

impl PointwiseData for BallIndicator {
    fn eval(&self, x: &[f64]) -> f64 {
        if norm(x) < self.radius {
            self.value
        } else {
            0.0
        }
    }
}

/// Radial data given by an expression in `r = |x|`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialExpr {
    pub expr: Expr,
    pub singular: Option<f64>,
    pub background: f64,
}

impl PointwiseData for RadialExpr {
    fn eval(&self, x: &[f64]) -> f64 {
        self.expr.eval(norm(x))
    }
    fn singular_exponent(&self) -> Option<f64> {
        self.singular
    }
    fn background(&self) -> f64 {
        self.background
    }
}

/// `inner + c`.
#[derive(Debug, Clone)]
pub struct Offset {
    pub inner: Arc<dyn PointwiseData>,
    pub c: f64,
}

impl PointwiseData for Offset {
    fn eval(&self, x: &[f64]) -> f64 {
        self.inner.eval(x) + self.c
    }
    fn singular_exponent(&self) -> Option<f64> {
        self.inner.singular_exponent()
    }
    fn cell_average(&self, lo: &[f64], hi: &[f64]) -> Option<f64> {
        self.inner.cell_average(lo, hi).map(|v| v + self.c)
    }
    fn background(&self) -> f64 {
        self.inner.background() + self.c
    }
}

/// A nonnegative field on a [`GridSpec`], constant (`background`) outside the window.
#[derive(Clone)]
pub struct GridField {
    spec: GridSpec,
    values: Vec<f64>,
    background: f64,
    /// exponent of a declared origin singularity whose cells hold averages
    singular: Option<f64>,
    source: Option<Arc<dyn PointwiseData>>,
}

impl fmt::Debug for GridField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridField")
            .field("spec", &self.spec)
            .field("background", &self.background)
            .field("singular", &self.singular)
            .field("len", &self.values.len())
            .finish()
    }
}

impl GridField {
    /// Wraps explicit cell values.
    pub fn from_values(spec: GridSpec, values: Vec<f64>, background: f64) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} cells",
                values.len(),
                spec.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid("values", format!("field values must be finite and nonnegative, found {v}")));
        }
        if !(background.is_finite() && background >= 0.0) {
            return Err(invalid("background", format!("must be finite and nonnegative, got {background}")));
        }
        Ok(GridField {
            spec,
            values,
            background,
            singular: None,
            source: None,
        })
    }

    /// Field with every cell equal to `c`.
    pub fn constant(spec: GridSpec, c: f64) -> Result<Self> {
        let mut g = GridField::from_values(spec, vec![c; spec.len()], c)?;
        g.source = Some(Arc::new(Constant(c)));
        Ok(g)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn singular_exponent(&self) -> Option<f64> {
        self.singular
    }

    pub fn source(&self) -> Option<&Arc<dyn PointwiseData>> {
        self.source.as_ref()
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(self.background, f64::max)
    }

    /// `∫ (u - background)` over the window.
    pub fn excess_mass(&self) -> f64 {
        let vol = self.spec.h().powi(self.spec.n as i32);
        self.values.iter().map(|v| v - self.background).sum::<f64>() * vol
    }

    /// Replaces the values, keeping grid and background; values are not re-validated.
    pub(crate) fn with_values(&self, values: Vec<f64>, background: f64) -> GridField {
        GridField {
            spec: self.spec,
            values,
            background,
            singular: None,
            source: None,
        }
    }

    /// The same data on a grid with twice the resolution: re-discretized from
    /// the source when there is one, otherwise split piecewise constantly.
    pub fn refined(&self) -> Result<GridField> {
        let spec = self.spec.refined();
        if let Some(src) = &self.source {
            return discretize(src.clone(), spec);
        }
        let n = self.spec.n;
        let mut values = vec![0.0; spec.len()];
        for (idx, v) in values.iter_mut().enumerate() {
            let ii = spec.unravel(idx);
            let mut parent = 0;
            for d in (0..n).rev() {
                parent = parent * self.spec.m + ii[d] / 2;
            }
            *v = self.values[parent];
        }
        Ok(GridField {
            spec,
            values,
            background: self.background,
            singular: self.singular,
            source: None,
        })
    }

    /// Writes `index, x_1..x_N, value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let axes = ["x1", "x2", "x3"];
        write!(w, "index")?;
        for a in axes.iter().take(self.spec.n) {
            write!(w, ",{a}")?;
        }
        writeln!(w, ",value")?;
        for (idx, v) in self.values.iter().enumerate() {
            let x = self.spec.point(idx);
            write!(w, "{idx}")?;
            for xd in x.iter().take(self.spec.n) {
                write!(w, ",{xd:e}")?;
            }
            writeln!(w, ",{v:e}")?;
        }
        Ok(())
    }
}

/// Nested tanh-sinh average over a box; handles integrable corner singularities.
fn box_average_singular(mu: &dyn PointwiseData, lo: &[f64], hi: &[f64]) -> f64 {
    fn nest(mu: &dyn PointwiseData, lo: &[f64], hi: &[f64], x: &mut [f64; 3], d: usize, n: usize) -> f64 {
        if d == n {
            return mu.eval(&x[..n]);
        }
        let tol = if d + 1 == n { 1e-11 } else { 1e-9 };
        tanh_sinh(
            |s| {
                x[d] = s;
                nest(mu, lo, hi, x, d + 1, n)
            },
            lo[d],
            hi[d],
            tol,
        )
        .value
    }
    let n = lo.len();
    let mut x = [0.0; 3];
    let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
    nest(mu, lo, hi, &mut x, 0, n) / vol
}

/// Tensor Gauss–Legendre average over a box.
fn box_average_gl(mu: &dyn PointwiseData, lo: &[f64], hi: &[f64], nodes: &[f64], weights: &[f64]) -> f64 {
    let n = lo.len();
    let q = nodes.len();
    let mut total = 0.0;
    let mut x = [0.0; 3];
    for flat in 0..q.pow(n as u32) {
        let mut rem = flat;
        let mut w = 1.0;
        for d in 0..n {
            let k = rem % q;
            rem /= q;
            x[d] = 0.5 * (lo[d] + hi[d]) + 0.5 * (hi[d] - lo[d]) * nodes[k];
            w *= 0.5 * weights[k];
        }
        total += w * mu.eval(&x[..n]);
    }
    total
}

/// Samples `mu` on the grid.
///
/// Cells get their centre value, except near a declared singularity at the
/// origin: the `2^N` cells touching it receive their exact (or tanh-sinh)
/// average, and cells within [`NEAR_SINGULAR_CELLS`] cell widths a
/// Gauss–Legendre average.
pub fn discretize(mu: Arc<dyn PointwiseData>, spec: GridSpec) -> Result<GridField> {
    spec.validate()?;
    let n = spec.n;
    let singular = mu.singular_exponent();
    if let Some(a) = singular {
        if !(a < n as f64) {
            return Err(Error::NonIntegrableSingularity { exponent: a, dim: n });
        }
    }
    let h = spec.h();
    let order = if n == 1 { 8 } else { 4 };
    let (nodes, weights) = gauss_legendre(order);
    let mut values = Vec::with_capacity(spec.len());
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for idx in 0..spec.len() {
        let ii = spec.unravel(idx);
        let mut touches = true;
        let mut far: f64 = 0.0;
        for d in 0..n {
            lo[d] = -spec.half_width + ii[d] as f64 * h;
            hi[d] = lo[d] + h;
            touches &= lo[d] == 0.0 || hi[d] == 0.0 || (lo[d].abs() < 1e-12 * h || hi[d].abs() < 1e-12 * h);
            far = far.max(lo[d].abs().min(hi[d].abs()));
        }
        let (lo_s, hi_s) = (&lo[..n], &hi[..n]);
        let v = if let Some(v) = mu.cell_average(lo_s, hi_s) {
            v
        } else if singular.is_some() && touches {
            box_average_singular(mu.as_ref(), lo_s, hi_s)
        } else if singular.is_some() && far <= NEAR_SINGULAR_CELLS * h {
            box_average_gl(mu.as_ref(), lo_s, hi_s, &nodes, &weights)
        } else {
            let x = spec.point(idx);
            mu.eval(&x[..n])
        };
        if !(v.is_finite() && v >= 0.0) {
            return Err(invalid("mu", format!("data value {v} at cell {idx} is not finite and nonnegative")));
        }
        values.push(v);
    }
    let background = mu.background();
    if !(background.is_finite() && background >= 0.0) {
        return Err(invalid("background", format!("must be finite and nonnegative, got {background}")));
    }
    Ok(GridField {
        spec,
        values,
        background,
        singular,
        source: Some(mu),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec1(m: usize) -> GridSpec {
        GridSpec::new(1, 2.0, m).unwrap()
    }

    #[test]
    fn constant_data() {
        let g = discretize(Arc::new(Constant(3.5)), spec1(64)).unwrap();
        assert!(g.values().iter().all(|&v| v == 3.5));
        assert_eq!(g.background(), 3.5);
    }

    #[test]
    fn inverse_square_root_cell_average() {
        let spec = spec1(64);
        let h = spec.h();
        let mu = RadialPower {
            coef: 1.0,
            exponent: 0.5,
            radius: 1.0,
        };
        let g = discretize(Arc::new(mu), spec).unwrap();
        // cell [0, h] is index M/2
        assert!((g.values()[32] - 2.0 / h.sqrt()).abs() < 1e-12);
        assert_eq!(g.values()[31], g.values()[32]);
    }

    #[test]
    fn singular_averages_without_closed_form() {
        // same data through the generic path, in 1D and 2D
        let e = RadialExpr {
            expr: Expr::parse("r^(-0.5)").unwrap(),
            singular: Some(0.5),
            background: 0.0,
        };
        let spec = spec1(64);
        let g = discretize(Arc::new(e.clone()), spec).unwrap();
        assert!((g.values()[32] - 2.0 / spec.h().sqrt()).abs() < 1e-8 * g.values()[32]);
        // 2D: average of |x|^{-1} over [0,h]^2 is 2 ln(1+√2)/h
        let e2 = RadialExpr {
            expr: Expr::parse("1/r").unwrap(),
            singular: Some(1.0),
            background: 0.0,
        };
        let spec2 = GridSpec::new(2, 1.0, 16).unwrap();
        let g2 = discretize(Arc::new(e2), spec2).unwrap();
        let idx = 8 + 16 * 8;
        let exact = 2.0 * (1.0 + 2f64.sqrt()).ln() / spec2.h();
        assert!((g2.values()[idx] - exact).abs() < 1e-7 * exact, "{} vs {exact}", g2.values()[idx]);
    }

    #[test]
    fn non_integrable_singularity_rejected() {
        let mu = RadialPower {
            coef: 1.0,
            exponent: 1.0,
            radius: 1.0,
        };
        assert!(matches!(
            discretize(Arc::new(mu), spec1(16)),
            Err(Error::NonIntegrableSingularity { .. })
        ));
    }

    #[test]
    fn refinement_and_validation() {
        assert!(GridSpec::new(1, 1.0, 100).is_err());
        assert!(GridSpec::new(4, 1.0, 64).is_err());
        let spec = GridSpec::new(2, 1.0, 4).unwrap();
        let vals: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let g = GridField::from_values(spec, vals, 0.0).unwrap();
        let r = g.refined().unwrap();
        assert_eq!(r.spec().m, 8);
        assert_eq!(r.values()[0], 0.0);
        assert_eq!(r.values()[1], 0.0);
        assert_eq!(r.values()[2], 1.0);
        assert_eq!(r.values()[8 * 2], 4.0);
        assert!((r.excess_mass() - g.excess_mass()).abs() < 1e-12);
        assert!(GridField::from_values(spec, vec![-1.0; 16], 0.0).is_err());
        let mut out = Vec::new();
        g.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("index,x1,x2,value\n"));
        assert_eq!(text.lines().count(), 17);
    }
}
