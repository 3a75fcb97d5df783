use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::algorithm::{
    base_metadata, finish, gamma_stream, subbatch_pair_sizes, CheckpointRecord, DeviationMode, ProxyOptions,
    ProxyReport,
};
use super::estimators::{subbatch_factor, McEstimate};
use crate::error::{Error, Result};
use crate::gauss::Covariance;
use crate::math;
use crate::schedule::ScheduleConfig;
use crate::stats::RunningMoments;
use crate::train::{Experiment, Subset, Trajectory};

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Proxies for a constant isotropic schedule `Σ_t = σ² I` with synchronized
/// references, computed with scalar variances throughout.
pub fn run_fixed_isotropic(
    exp: &Experiment,
    trajectory: &Trajectory,
    sigma: f64,
    options: &ProxyOptions,
) -> Result<ProxyReport> {
    trajectory.validate()?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Configuration("schedule.sigma must be positive".to_string()));
    }
    let checkpoints = options.validate(trajectory)?;
    let d = trajectory.dim();
    let variance = sigma * sigma;
    let mut tau2 = 0.0;
    let mut records = Vec::with_capacity(checkpoints.len());
    let mut next_checkpoint = checkpoints.iter().peekable();
    let mode = options.deviation_mode;
    let eval = &exp.data.eval;
    for t in 1..trajectory.horizon() {
        let step = &trajectory.steps[t - 1];
        if next_checkpoint.peek() == Some(&&t) {
            next_checkpoint.next();
            let v_hat = match mode {
                DeviationMode::Dev | DeviationMode::DevRef => {
                    let g_hat = exp.population_gradient(&step.w)?;
                    math::norm_sq(&diff(&step.g, &g_hat.value)) / variance
                }
                DeviationMode::Fluc | DeviationMode::FlucRef if step.g_sub.as_ref().unwrap().len() == 2 => {
                    let sub = step.g_sub.as_ref().unwrap();
                    let (b1, b2) = subbatch_pair_sizes(step);
                    subbatch_factor(b1, b2)? * (math::norm_sq(&diff(&sub[0], &sub[1])) / variance)
                }
                _ => {
                    let sub = step.g_sub.as_ref().unwrap();
                    let k = sub.len();
                    let mut mean = vec![0.0; d];
                    for g in sub {
                        for (m, x) in mean.iter_mut().zip(g) {
                            *m += x / k as f64;
                        }
                    }
                    let mut total = 0.0;
                    for g in sub {
                        total += math::norm_sq(&diff(g, &mean)) / variance;
                    }
                    total / (k - 1) as f64
                }
            };
            let gamma = if eval.is_empty() {
                None
            } else if tau2 == 0.0 {
                Some(McEstimate::exact(0.0))
            } else {
                let mut rng = gamma_stream(options.seed, t);
                let base = exp.model.grad(&step.w, eval, Subset::All)?;
                let scale = math::sqrt(tau2);
                let mut point = vec![0.0; d];
                let mut moments = RunningMoments::new();
                for _ in 0..options.mc_samples {
                    for (p, w) in point.iter_mut().zip(&step.w) {
                        *p = w + scale * rng.standard_normal();
                    }
                    let g = exp.model.grad(&point, eval, Subset::All)?;
                    moments.push(math::norm_sq(&diff(&g, &base)) / variance);
                }
                Some(McEstimate::from_moments(&moments))
            };
            records.push(CheckpointRecord {
                t,
                eta: step.eta,
                v_hat,
                v_mode: mode,
                gamma_hat: gamma.map(|g| g.value),
                gamma_std_error: gamma.map(|g| g.std_error),
                c_hat: 0.0,
                cost_certified: true,
                kappa: 1.0,
                tr_sigma_t: d as f64 * variance,
                tr_sigma_1t: d as f64 * tau2,
            });
        }
        tau2 += variance;
    }
    let accumulated = Covariance::Isotropic { dim: d, variance: tau2 };
    let schedule = ScheduleConfig { kind: "fixed_isotropic".to_string(), sigma: Some(sigma), ..Default::default() };
    let metadata = base_metadata(exp, options, schedule, "synchronized_deterministic", "deterministic", true);
    finish(exp, trajectory, &accumulated, records, options, metadata)
}
