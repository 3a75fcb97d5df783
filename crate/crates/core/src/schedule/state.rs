use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::history::{make_history_view, HistoryView};
use super::spec::{ScheduleKind, ScheduleSpec, Statistic};
use crate::error::{check_dim, Error, Result};
use crate::gauss::Covariance;
use crate::math;
use crate::rng::{purpose, stream_id, RandomStream};
use crate::train::Trajectory;

/// Evolving state of a covariance rule: step counter, Adam-like second
/// moment `v_t`, accumulated covariance `Σ_{1:t}` and the emitted `Σ_k`.
#[derive(Debug, Clone)]
pub struct ScheduleState {
    spec: ScheduleSpec,
    t: usize,
    v: Option<Vec<f64>>,
    accumulated: Covariance,
    emitted: Vec<Covariance>,
    pending: Option<Covariance>,
}

/// `q̂` for a public statistic: one uniform draw per step from the public stream.
pub fn public_statistic(seed: u64, t: usize) -> f64 {
    RandomStream::new(seed, stream_id(purpose::PUBLIC, t as u64)).uniform()
}

impl ScheduleState {
    /// State at `t = 1`: `v_1 = 0`, `Σ_{1:1} = 0`.
    pub fn new(spec: ScheduleSpec) -> Self {
        let d = spec.dim;
        let v = spec.adam_beta().map(|_| vec![0.0; d]);
        Self { spec, t: 1, v, accumulated: Covariance::zero(d), emitted: Vec::new(), pending: None }
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn step(&self) -> usize {
        self.t
    }

    pub fn second_moment(&self) -> Option<&[f64]> {
        self.v.as_deref()
    }

    /// `Σ_{1:t}`.
    pub fn accumulated(&self) -> &Covariance {
        &self.accumulated
    }

    /// `Σ_1 … Σ_{t−1}`.
    pub fn emitted(&self) -> &[Covariance] {
        &self.emitted
    }

    /// Computes `Σ_t` from the history view; must be followed by [`advance`](Self::advance)
    /// before the next step's covariance can be requested.
    pub fn next_covariance(&mut self, view: &HistoryView<'_>) -> Result<Covariance> {
        if self.pending.is_some() {
            return Err(Error::Sequencing(format!("Σ_{} already emitted; advance first", self.t)));
        }
        if view.step() != self.t {
            return Err(Error::Sequencing(format!(
                "history view is for step {} but the schedule is at step {}",
                view.step(),
                self.t
            )));
        }
        check_dim(self.spec.dim, view.dim())?;
        let cov = self.compute(view)?;
        self.pending = Some(cov.clone());
        Ok(cov)
    }

    /// Commits the emitted `Σ_t` into `Σ_{1:t+1}` and folds `G_t` into the
    /// second moment for step `t + 1`.
    pub fn advance(&mut self, g_prev: Option<&[f64]>) -> Result<()> {
        let cov = self
            .pending
            .take()
            .ok_or_else(|| Error::Sequencing(format!("advance at step {} before Σ_{} was emitted", self.t, self.t)))?;
        if let Some(g) = g_prev {
            check_dim(self.spec.dim, g.len())?;
        }
        self.accumulated = self.accumulated.add(&cov)?;
        self.emitted.push(cov);
        if let (Some(beta), Some(v), Some(g)) = (self.spec.adam_beta(), self.v.as_mut(), g_prev) {
            for (v, g) in v.iter_mut().zip(g) {
                *v = beta * *v + (1.0 - beta) * g * g;
            }
        }
        self.t += 1;
        Ok(())
    }

    fn compute(&self, view: &HistoryView<'_>) -> Result<Covariance> {
        let d = self.spec.dim;
        match &self.spec.kind {
            ScheduleKind::FixedIsotropic { sigma } => Covariance::isotropic(d, sigma * sigma),
            ScheduleKind::FixedDense { covariances } => {
                let idx = if covariances.len() == 1 { 0 } else { self.t - 1 };
                covariances.get(idx).cloned().ok_or_else(|| {
                    Error::Input(format!(
                        "fixed schedule lists {} matrices, step {} requested",
                        covariances.len(),
                        self.t
                    ))
                })
            }
            ScheduleKind::AdaptiveScalar { sigma0, c, stat } => {
                let q = match stat {
                    Statistic::History(name) => match view.stat(name) {
                        Some(q) => q,
                        None if self.t == 1 => 0.0,
                        None => return Err(Error::Input(format!("history view lacks statistic \"{name}\""))),
                    },
                    Statistic::Public { seed } => public_statistic(*seed, self.t),
                };
                if !(q.is_finite() && q >= 0.0) {
                    return Err(Error::Input(format!("statistic must be finite and nonnegative, got {q}")));
                }
                Covariance::isotropic(d, sigma0 * sigma0 * (1.0 + c * q))
            }
            ScheduleKind::AdaptiveDiagonal { sigma0, c, beta } => {
                let mut u = vec![0.0; d];
                for g in view.past_gradients() {
                    for (u, g) in u.iter_mut().zip(g) {
                        *u = beta * *u + (1.0 - beta) * g * g;
                    }
                }
                Covariance::diagonal(u.iter().map(|u| sigma0 * sigma0 * (1.0 + c * u)).collect())
            }
            ScheduleKind::AdamProportional { rho, eps, lambda0, .. } => {
                let v = self.v.as_ref().expect("Adam-like state carries v");
                Covariance::diagonal(v.iter().map(|v| rho * rho * (math::sqrt(*v) + eps) + lambda0).collect())
            }
            ScheduleKind::AdamInverse { rho, eps, lambda0, .. } => {
                let v = self.v.as_ref().expect("Adam-like state carries v");
                Covariance::diagonal(v.iter().map(|v| rho * rho / (math::sqrt(*v) + eps) + lambda0).collect())
            }
            ScheduleKind::LowRankRidge { rank, lambda0, rho } => {
                let columns: Vec<Vec<f64>> = view
                    .past_gradients()
                    .rev()
                    .filter_map(|g| {
                        let n = math::sqrt(math::norm_sq(g));
                        (n.is_finite() && n > 0.0).then(|| g.iter().map(|x| x / n).collect())
                    })
                    .take((*rank).min(d - 1))
                    .collect();
                if columns.is_empty() {
                    return Covariance::isotropic(d, *lambda0);
                }
                let r = columns.len();
                let factors = DMatrix::from_fn(d, r, |i, k| columns[k][i]);
                Covariance::low_rank_ridge(*lambda0, factors, vec![rho * rho; r])
            }
        }
    }
}

/// Replays the schedule along a recorded trajectory and returns the final
/// state, holding `Σ_1 … Σ_{upto}` and `Σ_{1:upto+1}`.
pub fn replay(spec: &ScheduleSpec, trajectory: &Trajectory, upto: usize) -> Result<ScheduleState> {
    check_dim(spec.dim, trajectory.dim())?;
    let mut state = ScheduleState::new(spec.clone());
    for t in 1..=upto {
        let view = make_history_view(trajectory, t)?;
        state.next_covariance(&view)?;
        state.advance(Some(&trajectory.steps[t - 1].g))?;
    }
    Ok(state)
}
