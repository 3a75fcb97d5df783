use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use super::grid::{kl_numeric, log_mixture, log_normal_1d, Grid1D, GRID_1D_POINTS};
use crate::error::{Error, Result};
use crate::gauss::{cov_compare_cost, Covariance};
use crate::math;

/// One point `(x, y)` of a finite coupling with probability `prob`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingAtom {
    pub x: f64,
    pub y: f64,
    pub prob: f64,
}

/// Most atoms accepted per marginal.
pub const MAX_ATOMS: usize = 4;

fn check_probabilities(probs: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    for p in probs {
        if !(p >= 0.0) {
            return Err(Error::Input("probabilities must be nonnegative".to_string()));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Input(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut seen: Vec<f64> = Vec::new();
    for v in values {
        if !seen.contains(&v) {
            seen.push(v);
        }
    }
    seen.len()
}

/// `(KL(X + σZ ‖ Y + σZ), ½ E(X − Y)² / σ²)` for a finite coupling of `X`, `Y`.
pub fn mixture_smoothing_check(coupling: &[CouplingAtom], sigma: f64) -> Result<(f64, f64)> {
    if coupling.is_empty() {
        return Err(Error::Input("coupling is empty".to_string()));
    }
    check_probabilities(coupling.iter().map(|a| a.prob))?;
    if distinct(coupling.iter().map(|a| a.x)) > MAX_ATOMS || distinct(coupling.iter().map(|a| a.y)) > MAX_ATOMS {
        return Err(Error::Input(format!("at most {MAX_ATOMS} atoms per marginal")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain("sigma must be positive".to_string()));
    }
    let v = sigma * sigma;
    let moments: Vec<(f64, f64)> = coupling.iter().flat_map(|a| [(a.x, v), (a.y, v)]).collect();
    let grid = Grid1D::covering(&moments, GRID_1D_POINTS)?;
    let log_p = |t: f64| log_mixture(coupling.iter().map(|a| (a.prob, log_normal_1d(t, a.x, v))));
    let log_q = |t: f64| log_mixture(coupling.iter().map(|a| (a.prob, log_normal_1d(t, a.y, v))));
    let lhs = kl_numeric(log_p, log_q, &grid)?;
    let rhs = coupling.iter().map(|a| a.prob * (a.x - a.y) * (a.x - a.y)).sum::<f64>() / (2.0 * v);
    Ok((lhs, rhs))
}

/// `(KL(Σ_i p_i N(x_i, s²) ‖ N(m, r²)), ½ E(X − m)²/r² + C(s², r²))`.
pub fn mismatch_lemma_check(atoms: &[(f64, f64)], m: f64, variance: f64, variance_ref: f64) -> Result<(f64, f64)> {
    if atoms.is_empty() || atoms.len() > MAX_ATOMS {
        return Err(Error::Input(format!("need 1..={MAX_ATOMS} atoms")));
    }
    check_probabilities(atoms.iter().map(|a| a.1))?;
    let cost = cov_compare_cost(&Covariance::isotropic(1, variance)?, &Covariance::isotropic(1, variance_ref)?)?;
    let mut moments: Vec<(f64, f64)> = atoms.iter().map(|a| (a.0, variance)).collect();
    moments.push((m, variance_ref));
    let grid = Grid1D::covering(&moments, GRID_1D_POINTS)?;
    let log_p = |t: f64| log_mixture(atoms.iter().map(|(x, p)| (*p, log_normal_1d(t, *x, variance))));
    let log_q = |t: f64| log_normal_1d(t, m, variance_ref);
    let lhs = kl_numeric(log_p, log_q, &grid)?;
    let rhs = atoms.iter().map(|(x, p)| p * (x - m) * (x - m)).sum::<f64>() / (2.0 * variance_ref) + cost;
    Ok((lhs, rhs))
}

/// One step `W ← W − η (a W + b s) + ε`, `ε ~ N(0, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainStep {
    pub eta: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
}

/// Noisy linear chain started at `W_1 = 0`, driven by a uniform sign `s ∈ {−1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyChainSpec {
    pub steps: Vec<ChainStep>,
}

impl ToyChainSpec {
    /// `W_2 = −η s + ε`.
    pub fn one_step(eta: f64, sigma: f64) -> Self {
        Self { steps: alloc::vec![ChainStep { eta, sigma, a: 0.0, b: 1.0 }] }
    }

    /// Conditional mean given `s = +1` and the common variance of the final iterate.
    pub fn final_law(&self) -> (f64, f64) {
        let (mut mean, mut var) = (0.0, 0.0);
        for st in &self.steps {
            let keep = 1.0 - st.eta * st.a;
            mean = keep * mean - st.eta * st.b;
            var = keep * keep * var + st.sigma * st.sigma;
        }
        (mean, var)
    }
}

/// `(I(W_T; s), Σ_t E KL(actual kernel ‖ s-averaged kernel))` in nats.
///
/// The mutual information is integrated on a grid; the chain sum is
/// `Σ_t η_t² b_t² / (2σ_t²)` since the reference drops the `b s` drift.
pub fn toy_chain_mi(spec: &ToyChainSpec) -> Result<(f64, f64)> {
    if spec.steps.is_empty() {
        return Err(Error::Input("chain needs at least one step".to_string()));
    }
    if spec.steps.iter().any(|s| !(s.sigma > 0.0) || !s.eta.is_finite()) {
        return Err(Error::Domain("chain noise must be positive".to_string()));
    }
    let (mean, var) = spec.final_law();
    let grid = Grid1D::covering(&[(mean, var), (-mean, var)], GRID_1D_POINTS)?;
    let log_mix =
        |t: f64| log_mixture([(0.5, log_normal_1d(t, mean, var)), (0.5, log_normal_1d(t, -mean, var))].into_iter());
    let plus = kl_numeric(|t| log_normal_1d(t, mean, var), log_mix, &grid)?;
    let minus = kl_numeric(|t| log_normal_1d(t, -mean, var), log_mix, &grid)?;
    let mi = 0.5 * plus + 0.5 * minus;
    let bound = spec.steps.iter().map(|s| s.eta * s.eta * s.b * s.b / (2.0 * s.sigma * s.sigma)).sum();
    Ok((mi, bound))
}

/// `(KL(P∘f⁻¹ ‖ Q∘f⁻¹), KL(P ‖ Q))` on a finite space, `f` given as cell labels.
pub fn conditioning_compression_check(p: &[f64], q: &[f64], cells: &[usize]) -> Result<(f64, f64)> {
    if p.len() != q.len() || p.len() != cells.len() || p.is_empty() {
        return Err(Error::Input("p, q and cells must have equal nonzero length".to_string()));
    }
    check_probabilities(p.iter().copied())?;
    check_probabilities(q.iter().copied())?;
    let kl = |p: &[f64], q: &[f64]| -> Result<f64> {
        let mut total = 0.0;
        for (a, b) in p.iter().zip(q) {
            if *a > 0.0 {
                if *b == 0.0 {
                    return Err(Error::Domain("Q vanishes where P is positive".to_string()));
                }
                total += a * math::ln(a / b);
            }
        }
        Ok(total)
    };
    let n_cells = cells.iter().max().map_or(0, |m| m + 1);
    let mut pc = alloc::vec![0.0; n_cells];
    let mut qc = alloc::vec![0.0; n_cells];
    for ((a, b), c) in p.iter().zip(q).zip(cells) {
        pc[*c] += a;
        qc[*c] += b;
    }
    Ok((kl(&pc, &qc)?, kl(p, q)?))
}
