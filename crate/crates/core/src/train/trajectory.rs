use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::data::DatasetSpec;
use super::model::ModelSpec;
use super::sgd::{EtaSchedule, RunConfig, SgdPolicy};
use crate::error::{Error, Result};

/// Current on-disk trajectory format version.
pub const TRAJECTORY_VERSION: u32 = 1;

/// Run-level metadata stored in the trajectory header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub version: u32,
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
    pub seed: u64,
    pub eta: EtaSchedule,
    pub sgd: SgdPolicy,
}

impl TrajectoryMeta {
    /// The run configuration that produced the trajectory.
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            model: self.model.clone(),
            dataset: self.dataset.clone(),
            horizon: self.horizon,
            eta: self.eta,
            policy: self.sgd.clone(),
            seed: self.seed,
        }
    }
}

/// One SGD update `w_{t+1} = w_t − η_t g_t` with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub t: usize,
    pub w: Vec<f64>,
    pub eta: f64,
    pub batch: Vec<usize>,
    pub g: Vec<f64>,
    pub g_sub: Option<Vec<Vec<f64>>>,
    pub loss_train: f64,
    pub loss_eval: Option<f64>,
}

/// Recorded SGD run: `T − 1` step records for iterates `W_1 … W_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub steps: Vec<StepRecord>,
}

/// The SGD update used both when training and when replaying.
#[inline]
pub fn sgd_update(w: &[f64], eta: f64, g: &[f64]) -> Vec<f64> {
    w.iter().zip(g).map(|(w, g)| w - eta * g).collect()
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.meta.d
    }

    /// Number of iterates `T`.
    pub fn horizon(&self) -> usize {
        self.meta.horizon
    }

    /// Step record `t` (1-based, `1 ≤ t ≤ T − 1`).
    pub fn step(&self, t: usize) -> Result<&StepRecord> {
        if t == 0 || t > self.steps.len() {
            return Err(Error::Input(format!("step {t} outside 1..={}", self.steps.len())));
        }
        Ok(&self.steps[t - 1])
    }

    /// Final output `W_T`, recomputed from the last record.
    pub fn final_iterate(&self) -> Vec<f64> {
        let last = self.steps.last().expect("validated trajectories have at least one step");
        sgd_update(&last.w, last.eta, &last.g)
    }

    /// Iterate `W_t` for `1 ≤ t ≤ T`.
    pub fn iterate(&self, t: usize) -> Result<Vec<f64>> {
        if t == self.horizon() {
            Ok(self.final_iterate())
        } else {
            Ok(self.step(t)?.w.clone())
        }
    }

    /// Largest absolute deviation from the recorded update identity.
    pub fn replay_defect(&self) -> f64 {
        self.steps
            .windows(2)
            .map(|pair| {
                let next = sgd_update(&pair[0].w, pair[0].eta, &pair[0].g);
                next.iter().zip(&pair[1].w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Structural consistency: step count, numbering and vector lengths.
    pub fn validate(&self) -> Result<()> {
        if self.meta.version != TRAJECTORY_VERSION {
            return Err(Error::Input(format!("unsupported trajectory version {}", self.meta.version)));
        }
        if self.meta.horizon < 2 || self.steps.len() + 1 != self.meta.horizon {
            return Err(Error::Input(format!(
                "trajectory with T = {} must hold {} step records, found {}",
                self.meta.horizon,
                self.meta.horizon.saturating_sub(1),
                self.steps.len()
            )));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if s.t != i + 1 {
                return Err(Error::Input(format!("step record {} is numbered {}", i + 1, s.t)));
            }
            if s.w.len() != self.meta.d || s.g.len() != self.meta.d {
                return Err(Error::Input(format!("step {} has wrong vector length", s.t)));
            }
            if s.batch.is_empty() {
                return Err(Error::Input(format!("step {} has an empty batch", s.t)));
            }
            if let Some(sub) = &s.g_sub {
                if sub.iter().any(|g| g.len() != self.meta.d) {
                    return Err(Error::Input(format!("step {} has a malformed subbatch gradient", s.t)));
                }
            }
        }
        Ok(())
    }

    pub fn has_subbatches(&self) -> bool {
        !self.steps.is_empty() && self.steps.iter().all(|s| s.g_sub.as_ref().is_some_and(|g| g.len() >= 2))
    }
}
