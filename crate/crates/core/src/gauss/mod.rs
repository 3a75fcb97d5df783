//! Gaussian and covariance algebra.
//!
//! Mahalanobis norms, Gaussian relative entropy, the covariance-comparison
//! cost between an actual and a reference smoothing covariance, third-moment
//! control and precision comparability constants.

mod covariance;

pub use covariance::{Covariance, DenseCov, LowRankCov, PIVOT_TOLERANCE};

use alloc::string::ToString;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::rng::RandomStream;

/// Mean and covariance of a Gaussian law.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    mean: Vec<f64>,
    cov: Covariance,
}

impl GaussianMoments {
    pub fn new(mean: Vec<f64>, cov: Covariance) -> Result<Self> {
        check_dim(cov.dim(), mean.len())?;
        Ok(Self { mean, cov })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Covariance {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `‖x‖²_{Σ⁻¹} = xᵀ Σ⁻¹ x`.
pub fn mahalanobis_sq(x: &[f64], cov: &Covariance) -> Result<f64> {
    cov.mahalanobis_sq(x)
}

/// `KL(N(μp, Σp) ‖ N(μq, Σq))`.
pub fn gaussian_kl(p: &GaussianMoments, q: &GaussianMoments) -> Result<f64> {
    check_dim(q.dim(), p.dim())?;
    if p.cov.is_zero() || q.cov.is_zero() {
        return Err(Error::Domain("Gaussian KL requires positive-definite covariances".to_string()));
    }
    let diff: Vec<f64> = p.mean.iter().zip(&q.mean).map(|(a, b)| a - b).collect();
    let mean_term = q.cov.mahalanobis_sq(&diff)?;
    if p.cov == q.cov {
        return Ok(0.5 * mean_term);
    }
    Ok((0.5 * mean_term + cov_compare_cost(&p.cov, &q.cov)?).max(0.0))
}

/// `½[Tr(Σref⁻¹ Σ) − d + ln(det Σref / det Σ)]`, the KL price of smoothing
/// with `actual` while the reference kernel uses `reference`.
pub fn cov_compare_cost(actual: &Covariance, reference: &Covariance) -> Result<f64> {
    check_dim(reference.dim(), actual.dim())?;
    if actual.is_zero() || reference.is_zero() {
        return Err(Error::Domain("covariance comparison requires positive-definite covariances".to_string()));
    }
    if actual == reference {
        return Ok(0.0);
    }
    let d = actual.dim() as f64;
    let tr = reference.trace_solve(actual)?;
    let cost = 0.5 * (tr - d + reference.logdet() - actual.logdet());
    Ok(cost.max(0.0))
}

/// `count` rows drawn i.i.d. from `N(0, cov)`.
pub fn sample(cov: &Covariance, count: usize, rng: &mut RandomStream) -> Result<DMatrix<f64>> {
    cov.sample(rng, count)
}

/// Upper bound `√3 · Tr(Σ)^{3/2}` on `E‖ζ‖³` for `ζ ~ N(0, Σ)`.
pub fn third_moment_bound(cov: &Covariance) -> f64 {
    let tr = cov.trace();
    math::sqrt(3.0) * tr * math::sqrt(tr)
}

/// Smallest `κ` with `Σref⁻¹ ⪯ κ Σ⁻¹`, i.e. the largest generalized
/// eigenvalue of the pair (largest eigenvalue of `Σref⁻¹ Σ`).
pub fn comparability_kappa(sigma: &Covariance, sigma_ref: &Covariance) -> Result<f64> {
    check_dim(sigma_ref.dim(), sigma.dim())?;
    if sigma_ref.is_zero() {
        return Err(Error::Domain("reference covariance must be positive definite".to_string()));
    }
    if sigma.is_zero() {
        return Ok(0.0);
    }
    if sigma == sigma_ref {
        return Ok(1.0);
    }
    use Covariance::*;
    let ratio_max = |num: &dyn Fn(usize) -> f64, den: &dyn Fn(usize) -> f64, d: usize| {
        (0..d).map(|j| num(j) / den(j)).fold(f64::NEG_INFINITY, f64::max)
    };
    let d = sigma.dim();
    Ok(match (sigma, sigma_ref) {
        (Isotropic { variance: a, .. }, Isotropic { variance: b, .. }) => a / b,
        (Diagonal(s), Isotropic { variance: b, .. }) => ratio_max(&|j| s[j], &|_| *b, d),
        (Isotropic { variance: a, .. }, Diagonal(r)) => ratio_max(&|_| *a, &|j| r[j], d),
        (Diagonal(s), Diagonal(r)) => ratio_max(&|j| s[j], &|j| r[j], d),
        _ => {
            // eigenvalues of Σref⁻¹Σ coincide with those of Lᵀ Σref⁻¹ L, Σ = L Lᵀ
            let l = sigma.dense_factor()?;
            let mut solved = DMatrix::zeros(d, d);
            for j in 0..d {
                let col: Vec<f64> = l.column(j).iter().copied().collect();
                let x = sigma_ref.solve(&col)?;
                for i in 0..d {
                    solved[(i, j)] = x[i];
                }
            }
            let m = l.transpose() * solved;
            let sym = (&m + m.transpose()) * 0.5;
            sym.symmetric_eigenvalues().max()
        }
    })
}
