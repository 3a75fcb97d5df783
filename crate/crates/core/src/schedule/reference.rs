use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use super::history::make_history_view;
use super::spec::ScheduleSpec;
use super::state::ScheduleState;
use crate::error::{check_dim, Error, Result};
use crate::gauss::Covariance;
use crate::train::Trajectory;

/// How the reference kernel chooses `Σ_t^ref`.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceMode {
    /// `Σ_t^ref = Σ_t` for a data-independent schedule.
    SynchronizedDeterministic,
    /// `Σ_t^ref = Σ_t` when `Σ_t` depends only on public randomness `U`.
    SynchronizedPublic { seed: u64 },
    /// `Σ_t^ref = Σ_t` when `Σ_t` is a function of the virtual prefix.
    PrefixObservable,
    /// `Σ_t^ref` is the same rule applied to an independent ghost run.
    Ghost,
    /// User-supplied deterministic references, one per step or one for all.
    Explicit(Vec<Covariance>),
}

/// Admissibility argument backing a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Certificate {
    Deterministic,
    PublicPredictable,
    PrefixObservable,
    GhostAdaptive,
    ExplicitDeterministic,
}

impl Certificate {
    pub fn name(self) -> &'static str {
        match self {
            Certificate::Deterministic => "deterministic",
            Certificate::PublicPredictable => "public_predictable",
            Certificate::PrefixObservable => "prefix_observable",
            Certificate::GhostAdaptive => "ghost_adaptive",
            Certificate::ExplicitDeterministic => "explicit_deterministic",
        }
    }

    /// Whether the certificate makes the covariance-comparison cost vanish.
    pub fn is_synchronized(self) -> bool {
        matches!(self, Certificate::Deterministic | Certificate::PublicPredictable | Certificate::PrefixObservable)
    }
}

/// A reference mode paired with the certificate that admits it for a given
/// schedule. Only obtainable through [`ReferenceSpec::certify`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSpec {
    mode: ReferenceMode,
    certificate: Certificate,
}

impl ReferenceSpec {
    /// Checks that `mode` is admissible for `schedule`.
    ///
    /// Synchronizing with a covariance that reads the training sample is
    /// rejected: a predictable schedule is not automatically admissible.
    pub fn certify(mode: ReferenceMode, schedule: &ScheduleSpec) -> Result<Self> {
        let deterministic = schedule.is_deterministic();
        let certificate = match &mode {
            ReferenceMode::SynchronizedDeterministic if deterministic => Certificate::Deterministic,
            ReferenceMode::SynchronizedPublic { seed } if deterministic || schedule.public_seed() == Some(*seed) => {
                Certificate::PublicPredictable
            }
            ReferenceMode::PrefixObservable if deterministic => Certificate::PrefixObservable,
            ReferenceMode::Ghost => Certificate::GhostAdaptive,
            ReferenceMode::Explicit(list) => {
                if list.is_empty() {
                    return Err(Error::Input("explicit reference list is empty".to_string()));
                }
                for c in list {
                    check_dim(schedule.dim, c.dim())?;
                    if c.is_zero() {
                        return Err(Error::Domain(
                            "explicit reference covariance must be positive definite".to_string(),
                        ));
                    }
                }
                Certificate::ExplicitDeterministic
            }
            _ => {
                return Err(Error::Admissibility(format!(
                    "{} schedule cannot be synchronized under {:?}; its covariance depends on the training sample",
                    schedule.kind_name(),
                    mode
                )))
            }
        };
        Ok(Self { mode, certificate })
    }

    pub fn mode(&self) -> &ReferenceMode {
        &self.mode
    }

    pub fn certificate(&self) -> Certificate {
        self.certificate
    }

    pub fn is_synchronized(&self) -> bool {
        self.certificate.is_synchronized()
    }

    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            ReferenceMode::SynchronizedDeterministic => "synchronized_deterministic",
            ReferenceMode::SynchronizedPublic { .. } => "synchronized_public",
            ReferenceMode::PrefixObservable => "prefix_observable",
            ReferenceMode::Ghost => "ghost",
            ReferenceMode::Explicit(_) => "explicit",
        }
    }
}

/// The schedule replayed along an independent ghost trajectory.
#[derive(Debug, Clone)]
pub struct GhostReplay<'a> {
    trajectory: &'a Trajectory,
    state: ScheduleState,
}

impl<'a> GhostReplay<'a> {
    pub fn new(spec: &ScheduleSpec, trajectory: &'a Trajectory) -> Result<Self> {
        check_dim(spec.dim, trajectory.dim())?;
        Ok(Self { trajectory, state: ScheduleState::new(spec.clone()) })
    }

    /// `Φ_t(H°_{t−1})`; steps must be requested in order.
    pub fn covariance_at(&mut self, t: usize) -> Result<Covariance> {
        let view = make_history_view(self.trajectory, t)?;
        let cov = self.state.next_covariance(&view)?;
        self.state.advance(Some(&self.trajectory.steps[t - 1].g))?;
        Ok(cov)
    }

    pub fn state(&self) -> &ScheduleState {
        &self.state
    }
}

/// `(Σ_t^ref, cost_is_zero_certified)` for step `t`.
pub fn reference_covariance(
    reference: &ReferenceSpec,
    actual: &Covariance,
    t: usize,
    ghost: Option<&mut GhostReplay<'_>>,
) -> Result<(Covariance, bool)> {
    match &reference.mode {
        ReferenceMode::SynchronizedDeterministic
        | ReferenceMode::SynchronizedPublic { .. }
        | ReferenceMode::PrefixObservable => Ok((actual.clone(), true)),
        ReferenceMode::Ghost => {
            let ghost = ghost.ok_or_else(|| Error::Input("ghost reference requires a ghost replay".to_string()))?;
            let cov = ghost.covariance_at(t)?;
            check_dim(actual.dim(), cov.dim())?;
            Ok((cov, false))
        }
        ReferenceMode::Explicit(list) => {
            let cov = if list.len() == 1 {
                list[0].clone()
            } else {
                list.get(t.wrapping_sub(1)).cloned().ok_or_else(|| {
                    Error::Input(format!("explicit reference lists {} matrices, step {t} requested", list.len()))
                })?
            };
            check_dim(actual.dim(), cov.dim())?;
            let equal = cov == *actual || cov.to_dense() == actual.to_dense();
            Ok((cov, equal))
        }
    }
}
