use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::gauss::Covariance;
use crate::math;
use crate::rng::RandomStream;
use crate::train::{Model, Samples, Subset};

/// `Tr(H Σ)` by exact enumeration with Hessian-vector products.
///
/// Uses `d` products for isotropic, diagonal and dense covariances and
/// `d + r` for low-rank-plus-ridge ones; none for the zero sentinel.
pub fn trace_hessian_cov<F>(hvp: F, sigma: &Covariance) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let d = sigma.dim();
    if sigma.is_zero() {
        return Ok(0.0);
    }
    let mut e = vec![0.0; d];
    let diag_h = |i: usize, e: &mut Vec<f64>| -> Result<f64> {
        e[i] = 1.0;
        let h = hvp(e)?;
        e[i] = 0.0;
        check_dim(d, h.len())?;
        Ok(h[i])
    };
    let quad = |v: &[f64]| -> Result<f64> {
        let h = hvp(v)?;
        check_dim(d, h.len())?;
        Ok(math::dot(v, &h))
    };
    let value = match sigma {
        Covariance::Isotropic { variance, .. } => {
            let mut tr = 0.0;
            for i in 0..d {
                tr += diag_h(i, &mut e)?;
            }
            variance * tr
        }
        Covariance::Diagonal(s) => {
            let mut tr = 0.0;
            for (i, si) in s.iter().enumerate() {
                tr += si * diag_h(i, &mut e)?;
            }
            tr
        }
        Covariance::Dense(c) => {
            let l = c.lower();
            let mut tr = 0.0;
            for k in 0..d {
                let col: Vec<f64> = l.column(k).iter().copied().collect();
                tr += quad(&col)?;
            }
            tr
        }
        Covariance::LowRankRidge(l) => {
            let mut tr = 0.0;
            for i in 0..d {
                tr += diag_h(i, &mut e)?;
            }
            tr *= l.ridge();
            for k in 0..l.rank() {
                let u: Vec<f64> = l.factors().column(k).iter().copied().collect();
                tr += l.weights()[k] * quad(&u)?;
            }
            tr
        }
    };
    if !value.is_finite() {
        return Err(Error::Run { step: 0, reason: "Hessian-vector product produced a non-finite trace".to_string() });
    }
    Ok(value)
}

fn cubic_trace(sigma: &Covariance) -> f64 {
    let tr = sigma.trace();
    tr * math::sqrt(tr)
}

/// `(−½ Tr(H Σ), (√3 ρ / 6) Tr(Σ)^{3/2})`: leading term of the output
/// sensitivity and a bound on its remainder for a `ρ`-Hessian-Lipschitz loss.
pub fn curvature_expansion<F>(hvp: F, sigma: &Covariance, rho: f64) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::Input("rho must be finite and nonnegative".to_string()));
    }
    if sigma.is_zero() {
        return Ok((0.0, 0.0));
    }
    let leading = -0.5 * trace_hessian_cov(hvp, sigma)?;
    let remainder = math::sqrt(3.0) * rho / 6.0 * cubic_trace(sigma);
    Ok((leading, remainder))
}

/// `½ |Tr((H_eval − H_train) Σ)| + (√3/6)(ρ_train + ρ_eval) Tr(Σ)^{3/2}`.
pub fn curvature_mismatch_penalty<F, G>(
    hvp_train: F,
    hvp_eval: G,
    sigma: &Covariance,
    rho_train: f64,
    rho_eval: f64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(rho_train.is_finite() && rho_train >= 0.0 && rho_eval.is_finite() && rho_eval >= 0.0) {
        return Err(Error::Input("rho must be finite and nonnegative".to_string()));
    }
    if sigma.is_zero() {
        return Ok(0.0);
    }
    let diff = |v: &[f64]| -> Result<Vec<f64>> {
        let a = hvp_eval(v)?;
        let b = hvp_train(v)?;
        Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
    };
    let mismatch = 0.5 * trace_hessian_cov(diff, sigma)?.abs();
    Ok(mismatch + math::sqrt(3.0) / 6.0 * (rho_train + rho_eval) * cubic_trace(sigma))
}

fn operator_norm(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
}

/// Heuristic Hessian-Lipschitz constant near `w`:
/// `max ‖H(w + ζ_a) − H(w + ζ_b)‖_op / ‖ζ_a − ζ_b‖` over `pairs` draws
/// `ζ ~ N(0, spread)`. An estimate, not a certificate.
pub fn estimate_hessian_lipschitz(
    model: &Model,
    samples: &Samples,
    w: &[f64],
    spread: &Covariance,
    pairs: usize,
    rng: &mut RandomStream,
) -> Result<f64> {
    check_dim(model.dim(), w.len())?;
    check_dim(spread.dim(), w.len())?;
    if pairs == 0 || spread.is_zero() {
        return Err(Error::Input("Lipschitz estimate needs pairs ≥ 1 and a positive-definite spread".to_string()));
    }
    let d = w.len();
    let mut za = vec![0.0; d];
    let mut zb = vec![0.0; d];
    let mut best: f64 = 0.0;
    for _ in 0..pairs {
        spread.sample_into(rng, &mut za)?;
        spread.sample_into(rng, &mut zb)?;
        let wa: Vec<f64> = w.iter().zip(&za).map(|(w, z)| w + z).collect();
        let wb: Vec<f64> = w.iter().zip(&zb).map(|(w, z)| w + z).collect();
        let dist = math::sqrt(za.iter().zip(&zb).map(|(a, b)| (a - b) * (a - b)).sum());
        if dist == 0.0 {
            continue;
        }
        let ha = model.hessian(&wa, samples, Subset::All)?;
        let hb = model.hessian(&wb, samples, Subset::All)?;
        best = best.max(operator_norm(&(ha - hb)) / dist);
    }
    Ok(best)
}
