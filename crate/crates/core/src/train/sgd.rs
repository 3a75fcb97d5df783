use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::data::{Dataset, DatasetSpec};
use super::model::{Model, ModelSpec, Subset};
use super::trajectory::{sgd_update, StepRecord, Trajectory, TrajectoryMeta, TRAJECTORY_VERSION};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{purpose, stream_id, RandomStream};

/// Iterates whose Euclidean norm exceeds this abort the run.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaSchedule {
    Constant {
        eta: f64,
    },
    /// `η_t = eta0 / t`.
    InverseT {
        eta0: f64,
    },
}

impl EtaSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            EtaSchedule::Constant { eta } => *eta,
            EtaSchedule::InverseT { eta0 } => eta0 / t as f64,
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match self {
            EtaSchedule::Constant { eta } => *eta,
            EtaSchedule::InverseT { eta0 } => *eta0,
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::Configuration("step size must be positive".to_string()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    WithReplacement,
    WithoutReplacement,
    /// Every training record, in order, at every step.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    Zeros,
    Explicit { w: Vec<f64> },
    Gaussian { scale: f64 },
}

/// Minibatch and initialization policy recorded with the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdPolicy {
    pub batch: usize,
    pub sampling: Sampling,
    /// Number of disjoint subbatches recorded per step (0 disables).
    pub subbatches: usize,
    pub init: Init,
}

/// Everything `run_sgd` needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
    /// Number of iterates `T`; the run performs `T − 1` updates.
    pub horizon: usize,
    pub eta: EtaSchedule,
    pub policy: SgdPolicy,
    pub seed: u64,
}

impl RunConfig {
    /// Same configuration on an independent ghost sample with independent
    /// minibatch randomness.
    pub fn ghost(&self, ghost_seed: u64) -> Self {
        Self { dataset: self.dataset.ghost(ghost_seed), seed: ghost_seed, ..self.clone() }
    }

    pub fn meta(&self, d: usize) -> TrajectoryMeta {
        TrajectoryMeta {
            version: TRAJECTORY_VERSION,
            d,
            horizon: self.horizon,
            model: self.model.clone(),
            dataset: self.dataset.clone(),
            seed: self.seed,
            eta: self.eta,
            sgd: self.policy.clone(),
        }
    }
}

/// Sizes of `k` contiguous subbatches of a batch of size `b`; earlier
/// subbatches take the remainder, so for `k = 2` the first has `⌈b/2⌉`.
pub fn subbatch_sizes(b: usize, k: usize) -> Vec<usize> {
    let base = b / k;
    let rem = b % k;
    (0..k).map(|i| base + usize::from(i < rem)).collect()
}

fn initial_point(init: &Init, d: usize, seed: u64) -> Result<Vec<f64>> {
    match init {
        Init::Zeros => Ok(vec![0.0; d]),
        Init::Explicit { w } => {
            if w.len() != d {
                return Err(Error::Configuration(format!("sgd.init has length {}, model needs {d}", w.len())));
            }
            Ok(w.clone())
        }
        Init::Gaussian { scale } => {
            let mut rng = RandomStream::new(seed, stream_id(purpose::INIT, 0));
            Ok((0..d).map(|_| scale * rng.standard_normal()).collect())
        }
    }
}

fn draw_batch(policy: &SgdPolicy, n: usize, seed: u64, t: usize) -> Result<Vec<usize>> {
    let mut rng = RandomStream::new(seed, stream_id(purpose::MINIBATCH, t as u64));
    match policy.sampling {
        Sampling::Full => Ok((0..n).collect()),
        Sampling::WithReplacement => Ok((0..policy.batch).map(|_| rng.index(n)).collect()),
        Sampling::WithoutReplacement => {
            if policy.batch > n {
                return Err(Error::Configuration(format!(
                    "batch size {} exceeds training size {n} without replacement",
                    policy.batch
                )));
            }
            Ok(rng.distinct_indices(n, policy.batch))
        }
    }
}

/// Gradients on the `k` contiguous subbatches of `batch`.
pub fn subbatch_gradients(
    model: &Model,
    w: &[f64],
    data: &super::data::Samples,
    batch: &[usize],
    k: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut start = 0;
    subbatch_sizes(batch.len(), k)
        .into_iter()
        .map(|size| {
            let part = &batch[start..start + size];
            start += size;
            model.grad(w, data, Subset::Indices(part))
        })
        .collect()
}

/// Runs vanilla SGD and records every step. No virtual noise enters the
/// update.
pub fn run_sgd(config: &RunConfig) -> Result<Trajectory> {
    let model = Model::from_spec(&config.model)?;
    let data = config.dataset.generate(&model)?;
    run_sgd_on(config, &model, &data)
}

/// As [`run_sgd`], reusing an already generated dataset.
pub fn run_sgd_on(config: &RunConfig, model: &Model, data: &Dataset) -> Result<Trajectory> {
    if config.horizon < 2 {
        return Err(Error::Configuration("sgd.T must be at least 2".to_string()));
    }
    config.eta.validate()?;
    let policy = &config.policy;
    let n = data.train.len();
    let batch_size = if policy.sampling == Sampling::Full { n } else { policy.batch };
    if batch_size == 0 {
        return Err(Error::Configuration("sgd.batch must be positive".to_string()));
    }
    if policy.subbatches == 1 || (policy.subbatches > 1 && batch_size < policy.subbatches) {
        return Err(Error::Configuration(format!("sgd.subbatches = {} needs 0 or 2..=batch size", policy.subbatches)));
    }
    let d = model.dim();
    let mut w = initial_point(&policy.init, d, config.seed)?;
    let mut steps = Vec::with_capacity(config.horizon - 1);
    for t in 1..config.horizon {
        let eta = config.eta.at(t);
        let batch = draw_batch(policy, n, config.seed, t)?;
        let g = model.grad(&w, &data.train, Subset::Indices(&batch))?;
        let g_sub = if policy.subbatches >= 2 {
            Some(subbatch_gradients(model, &w, &data.train, &batch, policy.subbatches)?)
        } else {
            None
        };
        let loss_train = model.loss(&w, &data.train, Subset::All)?;
        let loss_eval = if data.eval.is_empty() { None } else { Some(model.loss(&w, &data.eval, Subset::All)?) };
        let next = sgd_update(&w, eta, &g);
        let norm = math::sqrt(math::norm_sq(&next));
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Run { step: t, reason: format!("iterate diverged (‖w‖ = {norm:e})") });
        }
        steps.push(StepRecord { t, w, eta, batch, g, g_sub, loss_train, loss_eval });
        w = next;
    }
    Ok(Trajectory { meta: config.meta(d), steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::data::Generator;

    fn quadratic_config(horizon: usize, sampling: Sampling, eta: f64) -> RunConfig {
        RunConfig {
            model: ModelSpec::Quadratic { a: vec![vec![1.0, 0.0], vec![0.0, 1.0]] },
            dataset: DatasetSpec {
                n_train: 1,
                n_eval: 1,
                seed: 0,
                generator: Generator::GaussianCenters { mean: vec![0.0, 0.0], std: vec![0.0, 0.0] },
            },
            horizon,
            eta: EtaSchedule::Constant { eta },
            policy: SgdPolicy { batch: 1, sampling, subbatches: 0, init: Init::Explicit { w: vec![1.0, 0.0] } },
            seed: 0,
        }
    }

    #[test]
    fn one_full_batch_step_by_hand() {
        let traj = run_sgd(&quadratic_config(2, Sampling::Full, 0.5)).unwrap();
        assert_eq!(traj.steps.len(), 1);
        assert_eq!(traj.final_iterate(), vec![0.5, 0.0]);
    }

    #[test]
    fn deterministic_and_replay_consistent() {
        let mut cfg = quadratic_config(20, Sampling::WithReplacement, 0.1);
        cfg.dataset.n_train = 30;
        cfg.dataset.generator = Generator::GaussianCenters { mean: vec![1.0, -1.0], std: vec![1.0, 2.0] };
        cfg.policy.batch = 6;
        cfg.policy.subbatches = 2;
        let a = run_sgd(&cfg).unwrap();
        let b = run_sgd(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replay_defect(), 0.0);
        a.validate().unwrap();
        assert!(a.has_subbatches());
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let cfg = quadratic_config(50, Sampling::Full, 3.5);
        match run_sgd(&cfg) {
            Err(Error::Run { step, .. }) => assert!(step > 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn subbatch_split_sizes() {
        assert_eq!(subbatch_sizes(7, 2), vec![4, 3]);
        assert_eq!(subbatch_sizes(8, 2), vec![4, 4]);
        assert_eq!(subbatch_sizes(10, 3), vec![4, 3, 3]);
    }

    #[test]
    fn without_replacement_batches_are_distinct() {
        let mut cfg = quadratic_config(30, Sampling::WithoutReplacement, 0.1);
        cfg.dataset.n_train = 40;
        cfg.policy.batch = 15;
        let traj = run_sgd(&cfg).unwrap();
        for s in &traj.steps {
            let mut b = s.batch.clone();
            b.sort_unstable();
            b.dedup();
            assert_eq!(b.len(), 15);
        }
    }

    #[test]
    fn horizon_below_two_is_rejected() {
        assert!(matches!(run_sgd(&quadratic_config(1, Sampling::Full, 0.1)), Err(Error::Configuration(_))));
    }
}
