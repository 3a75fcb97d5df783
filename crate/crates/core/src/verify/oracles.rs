use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gauss::Covariance;
use crate::rng::{purpose, stream_id, RandomStream};
use crate::schedule::{make_history_view, replay, ScheduleSpec, ScheduleState};
use crate::train::Trajectory;

/// `E|ζ|³ = 2√(2/π) σ³` for `ζ ~ N(0, σ²)`.
pub fn third_moment_oracle_1d(sigma: f64) -> f64 {
    2.0 * libm::sqrt(2.0 / core::f64::consts::PI) * sigma * sigma * sigma
}

/// `−½ Tr(A Σ)`: exact output sensitivity of a quadratic loss.
pub fn quadratic_delta_oracle(a: &DMatrix<f64>, sigma: &Covariance) -> f64 {
    -0.5 * (a * sigma.to_dense()).trace()
}

/// Re-derives every `Σ_t` after corrupting the step-`t` gradient, batch and
/// subbatch gradients; `true` when nothing changes and all values are finite.
pub fn predictability_sentinel(trajectory: &Trajectory, spec: &ScheduleSpec) -> Result<bool> {
    for t in 1..trajectory.horizon() {
        let clean = next_after_replay(trajectory, spec, t)?;
        let mut corrupted = trajectory.clone();
        let step = &mut corrupted.steps[t - 1];
        let d = step.g.len();
        step.g = vec![f64::NAN; d];
        step.batch = vec![usize::MAX];
        step.g_sub = Some(vec![vec![f64::INFINITY; d]; 2]);
        let dirty = next_after_replay(&corrupted, spec, t)?;
        if clean != dirty || !dirty.trace().is_finite() {
            return Ok(false);
        }
    }
    Ok(true)
}

fn next_after_replay(trajectory: &Trajectory, spec: &ScheduleSpec, t: usize) -> Result<Covariance> {
    let mut state = replay(spec, trajectory, t - 1)?;
    state.next_covariance(&make_history_view(trajectory, t)?)
}

/// Empirical covariance of `ξ_t = Σ_{k<t} ε_k` against `Σ_{1:t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedCovCheck {
    pub empirical: DMatrix<f64>,
    pub target: DMatrix<f64>,
    /// Per-entry standard error of the empirical second moments.
    pub std_error: DMatrix<f64>,
}

impl AccumulatedCovCheck {
    /// Largest `|empirical − target| / SE` over entries with positive SE.
    pub fn max_z(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, se) in self.std_error.iter().enumerate() {
            let gap = (self.empirical[i] - self.target[i]).abs();
            if *se > 0.0 {
                worst = worst.max(gap / se);
            } else if gap > 0.0 {
                return f64::INFINITY;
            }
        }
        worst
    }
}

/// Draws `replications` virtual-noise sequences `ε_1 … ε_{t−1}`, `ε_k ~ N(0, Σ_k)`,
/// along a fixed trajectory and compares the second moments of `ξ_t` with `Σ_{1:t}`.
pub fn accumulated_cov_check(
    spec: &ScheduleSpec,
    trajectory: &Trajectory,
    t: usize,
    replications: usize,
    seed: u64,
) -> Result<AccumulatedCovCheck> {
    if replications < 100 {
        return Err(Error::Input("accumulated covariance check needs at least 100 replications".to_string()));
    }
    let d = spec.dim;
    let state: ScheduleState = replay(spec, trajectory, t.saturating_sub(1))?;
    let per_step = state.emitted();
    let mut sum = DMatrix::<f64>::zeros(d, d);
    let mut sum_sq = DMatrix::<f64>::zeros(d, d);
    let mut xi = vec![0.0; d];
    let mut eps = vec![0.0; d];
    for r in 0..replications {
        let mut rng = RandomStream::new(seed, stream_id(purpose::VIRTUAL_NOISE, r as u64));
        xi.iter_mut().for_each(|x| *x = 0.0);
        for cov in per_step {
            cov.sample_into(&mut rng, &mut eps)?;
            for (x, e) in xi.iter_mut().zip(&eps) {
                *x += e;
            }
        }
        for i in 0..d {
            for j in 0..d {
                let v = xi[i] * xi[j];
                sum[(i, j)] += v;
                sum_sq[(i, j)] += v * v;
            }
        }
    }
    let n = replications as f64;
    let empirical = &sum / n;
    let std_error = DMatrix::from_fn(d, d, |i, j| {
        let mean = empirical[(i, j)];
        let var = (sum_sq[(i, j)] / n - mean * mean).max(0.0) * n / (n - 1.0);
        libm::sqrt(var / n)
    });
    let target = if state.accumulated().is_zero() { DMatrix::zeros(d, d) } else { state.accumulated().to_dense() };
    Ok(AccumulatedCovCheck { empirical, target, std_error })
}

/// Log-log slope of replicate standard deviations against sample sizes.
///
/// `estimate(m, r)` returns replicate `r` of an estimator using `m` draws.
pub fn mc_convergence_slope<F>(sample_sizes: &[usize], replicates: usize, mut estimate: F) -> Result<f64>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    if sample_sizes.len() < 2 || replicates < 2 {
        return Err(Error::Input("need at least two sample sizes and two replicates".to_string()));
    }
    let mut xs = Vec::with_capacity(sample_sizes.len());
    let mut ys = Vec::with_capacity(sample_sizes.len());
    for &m in sample_sizes {
        let moments: crate::stats::RunningMoments =
            (0..replicates).map(|r| estimate(m, r)).collect::<Result<Vec<f64>>>()?.into_iter().collect();
        let sd = libm::sqrt(moments.variance());
        if !(sd > 0.0) {
            return Err(Error::Domain("estimator has zero spread".to_string()));
        }
        xs.push(libm::log(m as f64));
        ys.push(libm::log(sd));
    }
    Ok(crate::stats::ols_slope(&xs, &ys))
}
