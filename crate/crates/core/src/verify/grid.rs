use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Default points for one-dimensional grids.
pub const GRID_1D_POINTS: usize = 4001;
/// Default points per axis for two-dimensional grids.
pub const GRID_2D_POINTS: usize = 801;
/// Half-width of a covering grid in standard deviations.
pub const COVER_SDS: f64 = 10.0;
/// Allowed deviation of a density's grid integral from one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-8;

/// Uniform trapezoidal grid on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(lo < hi) || points < 3 {
            return Err(Error::Input("grid needs lo < hi and at least 3 points".to_string()));
        }
        Ok(Self { lo, hi, points })
    }

    /// Grid covering `COVER_SDS` standard deviations around every `(mean, variance)`.
    pub fn covering(moments: &[(f64, f64)], points: usize) -> Result<Self> {
        if moments.is_empty() || moments.iter().any(|(m, v)| !m.is_finite() || !(*v > 0.0)) {
            return Err(Error::Domain("covering grid needs finite means and positive variances".to_string()));
        }
        let lo = moments.iter().map(|(m, v)| m - COVER_SDS * math::sqrt(*v)).fold(f64::INFINITY, f64::min);
        let hi = moments.iter().map(|(m, v)| m + COVER_SDS * math::sqrt(*v)).fold(f64::NEG_INFINITY, f64::max);
        Self::new(lo, hi, points)
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step()
    }

    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.points {
            0.5 * self.step()
        } else {
            self.step()
        }
    }

    /// `∫ f` by the trapezoidal rule.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        (0..self.points).map(|i| self.weight(i) * f(self.node(i))).sum()
    }

    /// Same grid with doubled resolution.
    pub fn refined(&self) -> Self {
        Self { points: 2 * self.points - 1, ..self.clone() }
    }
}

/// Tensor trapezoidal grid on a rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub x: Grid1D,
    pub y: Grid1D,
}

impl Grid2D {
    /// Grid covering every `(mean, covariance)` by marginal standard deviations.
    pub fn covering(moments: &[([f64; 2], [[f64; 2]; 2])], points: usize) -> Result<Self> {
        let xs: Vec<(f64, f64)> = moments.iter().map(|(m, c)| (m[0], c[0][0])).collect();
        let ys: Vec<(f64, f64)> = moments.iter().map(|(m, c)| (m[1], c[1][1])).collect();
        Ok(Self { x: Grid1D::covering(&xs, points)?, y: Grid1D::covering(&ys, points)? })
    }

    pub fn integrate<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        let mut total = 0.0;
        for i in 0..self.x.points {
            let (xi, wi) = (self.x.node(i), self.x.weight(i));
            let mut row = 0.0;
            for j in 0..self.y.points {
                row += self.y.weight(j) * f(xi, self.y.node(j));
            }
            total += wi * row;
        }
        total
    }

    pub fn refined(&self) -> Self {
        Self { x: self.x.refined(), y: self.y.refined() }
    }
}

/// Densities below this are treated as numerically absent.
const DENSITY_FLOOR: f64 = 1e-300;

fn kl_integrand(lp: f64, lq: f64) -> Result<f64> {
    let p = math::exp(lp);
    if p <= DENSITY_FLOOR {
        return Ok(0.0);
    }
    if !lq.is_finite() {
        return Err(Error::Domain("reference density vanishes where the first density is positive".to_string()));
    }
    Ok(p * (lp - lq))
}

fn check_normalization(mass: f64) -> Result<()> {
    if (mass - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Domain(format!("grid does not cover the density (mass {mass:.12})")));
    }
    Ok(())
}

/// `∫ p ln(p/q)` on a one-dimensional grid, from log-densities.
pub fn kl_numeric<P, Q>(log_p: P, log_q: Q, grid: &Grid1D) -> Result<f64>
where
    P: Fn(f64) -> f64,
    Q: Fn(f64) -> f64,
{
    check_normalization(grid.integrate(|x| math::exp(log_p(x))))?;
    let mut total = 0.0;
    for i in 0..grid.points {
        let x = grid.node(i);
        total += grid.weight(i) * kl_integrand(log_p(x), log_q(x))?;
    }
    Ok(total)
}

/// Two-dimensional analogue of [`kl_numeric`].
pub fn kl_numeric_2d<P, Q>(log_p: P, log_q: Q, grid: &Grid2D) -> Result<f64>
where
    P: Fn(f64, f64) -> f64,
    Q: Fn(f64, f64) -> f64,
{
    check_normalization(grid.integrate(|x, y| math::exp(log_p(x, y))))?;
    let mut total = 0.0;
    for i in 0..grid.x.points {
        let (x, wx) = (grid.x.node(i), grid.x.weight(i));
        let mut row = 0.0;
        for j in 0..grid.y.points {
            let y = grid.y.node(j);
            row += grid.y.weight(j) * kl_integrand(log_p(x, y), log_q(x, y))?;
        }
        total += wx * row;
    }
    Ok(total)
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log-density of `N(mean, variance)`.
pub fn log_normal_1d(x: f64, mean: f64, variance: f64) -> f64 {
    let z = x - mean;
    -0.5 * (LN_2PI + math::ln(variance)) - 0.5 * z * z / variance
}

/// Log-density of a bivariate normal.
pub fn log_normal_2d(x: f64, y: f64, mean: [f64; 2], cov: [[f64; 2]; 2]) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let (dx, dy) = (x - mean[0], y - mean[1]);
    let q = (cov[1][1] * dx * dx - 2.0 * cov[0][1] * dx * dy + cov[0][0] * dy * dy) / det;
    -LN_2PI - 0.5 * math::ln(det) - 0.5 * q
}

/// `ln Σ_i w_i exp(a_i)` for weights summing to one.
pub fn log_mixture(terms: impl Iterator<Item = (f64, f64)>) -> f64 {
    let terms: Vec<(f64, f64)> = terms.filter(|(w, _)| *w > 0.0).collect();
    let top = terms.iter().map(|(_, a)| *a).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + math::ln(terms.iter().map(|(w, a)| w * math::exp(a - top)).sum())
}
