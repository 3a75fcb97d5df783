use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gauss::{cov_compare_cost, Covariance};
use crate::rng::RandomStream;
use crate::stats::RunningMoments;
use crate::train::{Model, Samples, Subset};

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_error: 0.0, samples: 0 }
    }

    pub(crate) fn from_moments(m: &RunningMoments) -> Self {
        Self { value: m.mean(), std_error: m.std_error(), samples: m.count() }
    }
}

fn difference(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_dim(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// `‖g_t − ĝ‖²_{W⁻¹}`.
pub fn deviation_proxy(g: &[f64], g_hat: &[f64], weight: &Covariance) -> Result<f64> {
    weight.mahalanobis_sq(&difference(g, g_hat)?)
}

/// Scale applied to `‖g⁽¹⁾ − g⁽²⁾‖²` for subbatch sizes `b1`, `b2`.
///
/// For equal sizes this is `½`. For unequal sizes it is `2 b1 b2 / (b1 + b2)²`,
/// which makes the expectation equal to the weighted trace of the gradient
/// covariance at the mean subbatch size `(b1 + b2) / 2`.
pub fn subbatch_factor(b1: usize, b2: usize) -> Result<f64> {
    if b1 == 0 || b2 == 0 {
        return Err(Error::Input("subbatch sizes must be positive".to_string()));
    }
    let (b1, b2) = (b1 as f64, b2 as f64);
    Ok(2.0 * b1 * b2 / ((b1 + b2) * (b1 + b2)))
}

/// Two-subbatch fluctuation proxy `f(b1, b2) ‖g⁽¹⁾ − g⁽²⁾‖²_{W⁻¹}`.
pub fn fluctuation_proxy(g1: &[f64], g2: &[f64], sizes: (usize, usize), weight: &Covariance) -> Result<f64> {
    Ok(subbatch_factor(sizes.0, sizes.1)? * weight.mahalanobis_sq(&difference(g1, g2)?)?)
}

/// `1/(K − 1) Σ_k ‖g⁽ᵏ⁾ − ḡ_sub‖²_{W⁻¹}` over `K ≥ 2` subbatch gradients.
pub fn fluctuation_proxy_k(grads: &[Vec<f64>], weight: &Covariance) -> Result<f64> {
    let k = grads.len();
    if k < 2 {
        return Err(Error::Input(format!("multi-subbatch proxy needs at least 2 gradients, got {k}")));
    }
    let d = weight.dim();
    let mut mean = vec![0.0; d];
    for g in grads {
        check_dim(d, g.len())?;
        for (m, x) in mean.iter_mut().zip(g) {
            *m += x / k as f64;
        }
    }
    let mut total = 0.0;
    for g in grads {
        total += weight.mahalanobis_sq(&difference(g, &mean)?)?;
    }
    Ok(total / (k - 1) as f64)
}

/// `(1/m) Σ_j ‖g(w + ζ_j, S') − g(w, S')‖²_{W⁻¹}` with `ζ_j ~ N(0, Σ_{1:t})`.
///
/// `None` when there is no evaluation sample; exactly zero for the
/// `Σ_{1:1} = 0` sentinel.
pub fn sensitivity_proxy(
    model: &Model,
    w: &[f64],
    accumulated: &Covariance,
    weight: &Covariance,
    eval: &Samples,
    m: usize,
    rng: &mut RandomStream,
) -> Result<Option<McEstimate>> {
    if m == 0 {
        return Err(Error::Input("sensitivity proxy needs m ≥ 1".to_string()));
    }
    if eval.is_empty() {
        return Ok(None);
    }
    check_dim(accumulated.dim(), w.len())?;
    if accumulated.is_zero() {
        return Ok(Some(McEstimate::exact(0.0)));
    }
    let base = model.grad(w, eval, Subset::All)?;
    let mut zeta = vec![0.0; w.len()];
    let mut point = vec![0.0; w.len()];
    let mut moments = RunningMoments::new();
    for _ in 0..m {
        accumulated.sample_into(rng, &mut zeta)?;
        for ((p, w), z) in point.iter_mut().zip(w).zip(&zeta) {
            *p = w + z;
        }
        let g = model.grad(&point, eval, Subset::All)?;
        moments.push(weight.mahalanobis_sq(&difference(&g, &base)?)?);
    }
    Ok(Some(McEstimate::from_moments(&moments)))
}

/// `C_t` proxy; zero without evaluation when the reference is certified.
pub fn covariance_mismatch_proxy(sigma: &Covariance, sigma_ref: &Covariance, certified: bool) -> Result<f64> {
    if certified {
        check_dim(sigma.dim(), sigma_ref.dim())?;
        return Ok(0.0);
    }
    cov_compare_cost(sigma, sigma_ref)
}

/// `(1/m) Σ_j [L(w, S) − L(w + ζ_j, S)]` with `ζ_j ~ N(0, Σ_{1:T})`; signed.
pub fn output_sensitivity_proxy(
    model: &Model,
    w: &[f64],
    accumulated: &Covariance,
    samples: &Samples,
    m: usize,
    rng: &mut RandomStream,
) -> Result<McEstimate> {
    if m == 0 {
        return Err(Error::Input("output sensitivity proxy needs m ≥ 1".to_string()));
    }
    if samples.is_empty() {
        return Err(Error::Input("output sensitivity needs a nonempty sample".to_string()));
    }
    check_dim(accumulated.dim(), w.len())?;
    if accumulated.is_zero() {
        return Ok(McEstimate::exact(0.0));
    }
    let base = model.loss(w, samples, Subset::All)?;
    let mut zeta = vec![0.0; w.len()];
    let mut point = vec![0.0; w.len()];
    let mut moments = RunningMoments::new();
    for _ in 0..m {
        accumulated.sample_into(rng, &mut zeta)?;
        for ((p, w), z) in point.iter_mut().zip(w).zip(&zeta) {
            *p = w + z;
        }
        let perturbed = model.loss(&point, samples, Subset::All)?;
        if !perturbed.is_finite() {
            return Err(Error::Run { step: 0, reason: "perturbed loss is not finite".to_string() });
        }
        moments.push(base - perturbed);
    }
    Ok(McEstimate::from_moments(&moments))
}

/// `|Δ_eval − Δ_train|`.
pub fn penalty_difference(delta_eval: f64, delta_train: f64) -> f64 {
    (delta_eval - delta_train).abs()
}
