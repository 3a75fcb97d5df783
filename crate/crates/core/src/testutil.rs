use alloc::vec;
use alloc::vec::Vec;

use crate::train::{
    run_sgd, DatasetSpec, EtaSchedule, Generator, Init, ModelSpec, RunConfig, Sampling, SgdPolicy, Trajectory,
};

pub fn quadratic_config(d: usize, horizon: usize, seed: u64) -> RunConfig {
    let a = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 + i as f64 * 0.5 } else { 0.0 }).collect()).collect();
    RunConfig {
        model: ModelSpec::Quadratic { a },
        dataset: DatasetSpec {
            n_train: 40,
            n_eval: 40,
            seed,
            generator: Generator::GaussianCenters { mean: vec![0.5; d], std: vec![1.0; d] },
        },
        horizon,
        eta: EtaSchedule::Constant { eta: 0.1 },
        policy: SgdPolicy { batch: 8, sampling: Sampling::WithReplacement, subbatches: 2, init: Init::Zeros },
        seed,
    }
}

pub fn quadratic_run(d: usize, horizon: usize, seed: u64) -> Trajectory {
    run_sgd(&quadratic_config(d, horizon, seed)).unwrap()
}

pub fn corrupt_step(trajectory: &Trajectory, t: usize) -> Trajectory {
    let mut out = trajectory.clone();
    let step = &mut out.steps[t - 1];
    step.g = vec![f64::NAN; step.g.len()];
    step.batch = Vec::new();
    step.g_sub = Some(vec![vec![f64::NAN; step.g.len()]; 2]);
    out
}
