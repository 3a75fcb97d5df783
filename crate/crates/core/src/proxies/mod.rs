//! Proxy estimators for the bound terms and the loop that runs them along a
//! recorded trajectory.
//!
//! Per step: the gradient-deviation proxy `V̂_t` (population/eval gradient or
//! subbatch fluctuation), the gradient-sensitivity proxy `Γ̂_t`, and the
//! covariance-comparison proxy `Ĉ_t`. At the end: output sensitivities `Δ̂` on
//! the training and evaluation samples, their gap `R̂` and the summary `B̂`.

mod algorithm;
mod estimators;
mod fixed;

pub use algorithm::{
    bound_proxy_sum, estimate_proxies, CheckpointRecord, DeviationMode, ProxyOptions, ProxyReport, ReportMetadata,
    TerminalProxies,
};
pub use estimators::{
    covariance_mismatch_proxy, deviation_proxy, fluctuation_proxy, fluctuation_proxy_k, output_sensitivity_proxy,
    penalty_difference, sensitivity_proxy, subbatch_factor, McEstimate,
};
pub use fixed::run_fixed_isotropic;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::gauss::Covariance;
    use crate::rng::{purpose, stream_id, RandomStream};
    use crate::schedule::{ReferenceMode, ReferenceSpec, ScheduleKind, ScheduleSpec, Statistic, GRAD_SQ_EMA};
    use crate::stats::RunningMoments;
    use crate::testutil::quadratic_config;
    use crate::train::{run_sgd, Experiment, Generator, Model, ModelSpec, Samples};
    use alloc::string::ToString;
    use alloc::vec;
    use alloc::vec::Vec;

    fn rng(i: u64) -> RandomStream {
        RandomStream::new(77, stream_id(purpose::ORACLE, i))
    }

    #[test]
    fn deviation_examples() {
        let w = Covariance::diagonal(vec![1.0, 4.0]).unwrap();
        assert_eq!(deviation_proxy(&[1.0, 2.0], &[1.0, 2.0], &w).unwrap(), 0.0);
        assert_eq!(deviation_proxy(&[2.0, 2.0], &[1.0, 0.0], &w).unwrap(), 2.0);
        assert!(matches!(deviation_proxy(&[1.0], &[1.0, 2.0], &w), Err(Error::Dimension { .. })));
    }

    #[test]
    fn fluctuation_examples() {
        let iso = Covariance::isotropic(2, 1.0).unwrap();
        assert_eq!(fluctuation_proxy(&[1.0, 1.0], &[1.0, 1.0], (3, 3), &iso).unwrap(), 0.0);
        assert_eq!(fluctuation_proxy(&[2.0, 0.0], &[0.0, 0.0], (4, 4), &iso).unwrap(), 2.0);
        let k2 = fluctuation_proxy_k(&[vec![2.0, 0.0], vec![0.0, 0.0]], &iso).unwrap();
        assert!((k2 - 2.0).abs() < 1e-15);
        assert!(matches!(fluctuation_proxy_k(&[vec![1.0, 0.0]], &iso), Err(Error::Input(_))));
        assert_eq!(subbatch_factor(5, 5).unwrap(), 0.5);
        assert!(subbatch_factor(3, 5).unwrap() < 0.5);
    }

    #[test]
    fn penalty_difference_examples() {
        assert_eq!(penalty_difference(-0.3, -0.3), 0.0);
        assert_eq!(penalty_difference(-1.0, -1.5), 0.5);
    }

    fn quadratic_1d(a: f64, centers: &[f64]) -> (Model, Samples) {
        let model = Model::from_spec(&ModelSpec::Quadratic { a: vec![vec![a]] }).unwrap();
        let samples = Samples::new(1, centers.to_vec(), vec![0.0; centers.len()]).unwrap();
        (model, samples)
    }

    #[test]
    fn sensitivity_degenerate_and_absent_cases() {
        let (model, eval) = quadratic_1d(2.0, &[0.0, 1.0]);
        let w = Covariance::isotropic(1, 1.0).unwrap();
        let zero = sensitivity_proxy(&model, &[0.0], &Covariance::zero(1), &w, &eval, 10, &mut rng(0)).unwrap();
        assert_eq!(zero.unwrap().value, 0.0);
        let none = sensitivity_proxy(&model, &[0.0], &w, &w, &Samples::empty(1), 10, &mut rng(0)).unwrap();
        assert!(none.is_none());
        assert!(sensitivity_proxy(&model, &[0.0], &w, &w, &eval, 0, &mut rng(0)).is_err());
        let tiny = Covariance::isotropic(1, 1e-20).unwrap();
        let small = sensitivity_proxy(&model, &[0.0], &tiny, &w, &eval, 50, &mut rng(1)).unwrap().unwrap();
        assert!(small.value < 1e-18);
    }

    #[test]
    fn sensitivity_matches_linear_gradient_oracle() {
        // ḡ(w + ζ) − ḡ(w) = aζ, so E = a² τ² / s².
        let (a, tau2, s2) = (1.7, 0.3, 0.05);
        let (model, eval) = quadratic_1d(a, &[0.2, -0.4, 1.0]);
        let acc = Covariance::isotropic(1, tau2).unwrap();
        let weight = Covariance::isotropic(1, s2).unwrap();
        let est = sensitivity_proxy(&model, &[0.5], &acc, &weight, &eval, 20_000, &mut rng(2)).unwrap().unwrap();
        let exact = a * a * tau2 / s2;
        assert!((est.value - exact).abs() <= 3.0 * est.std_error, "{} vs {exact} ± {}", est.value, est.std_error);
    }

    #[test]
    fn output_sensitivity_quadratic_exact_value() {
        let model = Model::from_spec(&ModelSpec::Quadratic {
            a: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        })
        .unwrap();
        let samples = Samples::new(3, vec![0.0; 6], vec![0.0; 2]).unwrap();
        let sigma = Covariance::isotropic(3, 1.0).unwrap();
        let est = output_sensitivity_proxy(&model, &[0.0; 3], &sigma, &samples, 50_000, &mut rng(3)).unwrap();
        assert!((est.value + 1.5).abs() <= 3.0 * est.std_error);
        let zero = output_sensitivity_proxy(&model, &[0.0; 3], &Covariance::zero(3), &samples, 5, &mut rng(3)).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    // Batch-gradient covariance for a quadratic with sampling with replacement:
    // Cov(G) = A C_emp A / b, with C_emp the empirical center covariance.
    fn empirical_center_cov(samples: &Samples) -> Vec<Vec<f64>> {
        let n = samples.len();
        let p = samples.feature_dim();
        let mean: Vec<f64> = (0..p).map(|k| (0..n).map(|i| samples.features(i)[k]).sum::<f64>() / n as f64).collect();
        (0..p)
            .map(|r| {
                (0..p)
                    .map(|c| {
                        (0..n)
                            .map(|i| (samples.features(i)[r] - mean[r]) * (samples.features(i)[c] - mean[c]))
                            .sum::<f64>()
                            / n as f64
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn deviation_and_fluctuation_match_batch_covariance_oracle() {
        let cfg = quadratic_config(2, 2, 11);
        let exp = Experiment::new(&cfg.model, &cfg.dataset).unwrap();
        let Model::Quadratic { a } = &exp.model else { unreachable!() };
        let train = &exp.data.train;
        let n = train.len();
        let c = empirical_center_cov(train);
        let weight = Covariance::diagonal(vec![0.5, 2.0]).unwrap();
        let b = 8;
        // Tr(W⁻¹ A C A) with diagonal A and W.
        let per_sample: f64 = (0..2).map(|j| a[(j, j)] * a[(j, j)] * c[j][j] / [0.5, 2.0][j]).sum();
        let w = [0.3, -0.2];
        let mean_center: Vec<f64> =
            (0..2).map(|k| (0..n).map(|i| train.features(i)[k]).sum::<f64>() / n as f64).collect();
        let cond_mean: Vec<f64> = (0..2).map(|j| a[(j, j)] * (w[j] - mean_center[j])).collect();
        let mut dev = RunningMoments::new();
        let mut fluc = RunningMoments::new();
        let mut r = rng(4);
        for _ in 0..10_000 {
            let batch: Vec<usize> = (0..b).map(|_| r.index(n)).collect();
            let g = exp.model.grad(&w, train, crate::train::Subset::Indices(&batch)).unwrap();
            dev.push(deviation_proxy(&g, &cond_mean, &weight).unwrap());
            let g1 = exp.model.grad(&w, train, crate::train::Subset::Indices(&batch[..4])).unwrap();
            let g2 = exp.model.grad(&w, train, crate::train::Subset::Indices(&batch[4..])).unwrap();
            fluc.push(fluctuation_proxy(&g1, &g2, (4, 4), &weight).unwrap());
        }
        let dev_target = per_sample / b as f64;
        let fluc_target = per_sample / 4.0;
        assert!((dev.mean() - dev_target).abs() <= 4.0 * dev.std_error(), "{} vs {dev_target}", dev.mean());
        assert!((fluc.mean() - fluc_target).abs() <= 4.0 * fluc.std_error(), "{} vs {fluc_target}", fluc.mean());
    }

    fn fixed_spec(d: usize, sigma: f64) -> ScheduleSpec {
        ScheduleSpec::new(ScheduleKind::FixedIsotropic { sigma }, d).unwrap()
    }

    #[test]
    fn fixed_synchronized_run_assembles_by_hand() {
        let cfg = quadratic_config(2, 4, 5);
        let traj = run_sgd(&cfg).unwrap();
        let exp = Experiment::from_meta(&traj.meta).unwrap();
        let spec = fixed_spec(2, 0.2);
        let reference = ReferenceSpec::certify(ReferenceMode::SynchronizedDeterministic, &spec).unwrap();
        let options = ProxyOptions::every_step(4, 200, 500, DeviationMode::Dev, 3);
        let report = estimate_proxies(&exp, &traj, &spec, &reference, None, &options).unwrap();
        assert_eq!(report.checkpoints.len(), 3);
        let Generator::GaussianCenters { mean, .. } = &cfg.dataset.generator else { unreachable!() };
        let Model::Quadratic { a } = &exp.model else { unreachable!() };
        let mut hand = 0.0;
        for rec in &report.checkpoints {
            assert_eq!(rec.c_hat, 0.0);
            assert!(rec.cost_certified);
            let step = &traj.steps[rec.t - 1];
            let v: f64 = (0..2)
                .map(|j| {
                    let g_bar = a[(j, j)] * (step.w[j] - mean[j]);
                    (step.g[j] - g_bar) * (step.g[j] - g_bar) / 0.04
                })
                .sum();
            assert!((rec.v_hat - v).abs() <= 1e-12 * v.max(1.0));
            assert!((rec.tr_sigma_1t - 2.0 * 0.04 * (rec.t - 1) as f64).abs() < 1e-15);
            hand += 2.0 * step.eta * step.eta * (rec.v_hat + rec.gamma_hat.unwrap());
        }
        assert_eq!(report.checkpoints[0].gamma_hat, Some(0.0));
        hand += report.terminal.r_hat.unwrap();
        assert!((report.terminal.b_hat - hand).abs() <= 1e-12 * hand);
        let again = estimate_proxies(&exp, &traj, &spec, &reference, None, &options).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn empty_checkpoints_leave_only_penalty() {
        let traj = run_sgd(&quadratic_config(2, 5, 1)).unwrap();
        let exp = Experiment::from_meta(&traj.meta).unwrap();
        let spec = fixed_spec(2, 0.1);
        let reference = ReferenceSpec::certify(ReferenceMode::SynchronizedDeterministic, &spec).unwrap();
        let mut options = ProxyOptions::every_step(5, 10, 100, DeviationMode::Fluc, 0);
        options.checkpoints.clear();
        let report = estimate_proxies(&exp, &traj, &spec, &reference, None, &options).unwrap();
        assert_eq!(report.terminal.b_hat, report.terminal.r_hat.unwrap());
    }

    #[test]
    fn fixed_path_matches_general_path_bitwise() {
        let traj = run_sgd(&quadratic_config(3, 8, 2)).unwrap();
        let exp = Experiment::from_meta(&traj.meta).unwrap();
        let spec = fixed_spec(3, 0.15);
        let reference = ReferenceSpec::certify(ReferenceMode::SynchronizedDeterministic, &spec).unwrap();
        for mode in [DeviationMode::Dev, DeviationMode::Fluc, DeviationMode::FlucK, DeviationMode::DevRef] {
            let options = ProxyOptions::every_step(8, 64, 256, mode, 9);
            let general = estimate_proxies(&exp, &traj, &spec, &reference, None, &options).unwrap();
            let fixed = run_fixed_isotropic(&exp, &traj, 0.15, &options).unwrap();
            assert_eq!(general.checkpoints, fixed.checkpoints);
            assert_eq!(general.terminal, fixed.terminal);
        }
    }

    #[test]
    fn fluctuation_mode_requires_subbatches() {
        let mut cfg = quadratic_config(2, 4, 1);
        cfg.policy.subbatches = 0;
        let traj = run_sgd(&cfg).unwrap();
        let exp = Experiment::from_meta(&traj.meta).unwrap();
        let spec = fixed_spec(2, 0.1);
        let reference = ReferenceSpec::certify(ReferenceMode::SynchronizedDeterministic, &spec).unwrap();
        let options = ProxyOptions::every_step(4, 10, 10, DeviationMode::Fluc, 0);
        let err = estimate_proxies(&exp, &traj, &spec, &reference, None, &options).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
    }

    #[test]
    fn missing_eval_sample_leaves_gamma_absent() {
        let mut cfg = quadratic_config(2, 4, 1);
        cfg.dataset.n_eval = 0;
        let traj = run_sgd(&cfg).unwrap();
        let exp = Experiment::from_meta(&traj.meta).unwrap();
        let spec = fixed_spec(2, 0.1);
        let reference = ReferenceSpec::certify(ReferenceMode::SynchronizedDeterministic, &spec).unwrap();
        let options = ProxyOptions::every_step(4, 10, 10, DeviationMode::Dev, 0);
        let report = estimate_proxies(&exp, &traj, &spec, &reference, None, &options).unwrap();
        assert!(report.checkpoints.iter().all(|r| r.gamma_hat.is_none()));
        assert!(report.terminal.r_hat.is_none());
        assert!(!report.metadata.notes.is_empty());
        let hand: f64 = report.checkpoints.iter().map(|r| 2.0 * r.eta * r.eta * r.v_hat).sum();
        assert!((report.terminal.b_hat - hand).abs() <= 1e-12 * hand);
    }

    #[test]
    fn ghost_reference_costs_and_precision_comparability() {
        let cfg = quadratic_config(3, 12, 4);
        let traj = run_sgd(&cfg).unwrap();
        let ghost = run_sgd(&cfg.ghost(1004)).unwrap();
        let exp = Experiment::from_meta(&traj.meta).unwrap();
        let spec = ScheduleSpec::new(ScheduleKind::AdaptiveDiagonal { sigma0: 0.1, c: 5.0, beta: 0.8 }, 3).unwrap();
        let reference = ReferenceSpec::certify(ReferenceMode::Ghost, &spec).unwrap();
        let sync = ProxyOptions::every_step(12, 100, 100, DeviationMode::Dev, 1);
        let refd = ProxyOptions { deviation_mode: DeviationMode::DevRef, ..sync.clone() };
        let a = estimate_proxies(&exp, &traj, &spec, &reference, Some(&ghost), &sync).unwrap();
        let b = estimate_proxies(&exp, &traj, &spec, &reference, Some(&ghost), &refd).unwrap();
        assert!(a.checkpoints.iter().all(|r| r.c_hat >= 0.0 && !r.cost_certified));
        assert!(a.checkpoints.iter().any(|r| r.c_hat > 0.0));
        for (s, r) in a.checkpoints.iter().zip(&b.checkpoints) {
            assert!(r.v_hat <= s.kappa * s.v_hat * (1.0 + 1e-12));
            assert!(r.gamma_hat.unwrap() <= s.kappa * s.gamma_hat.unwrap() * (1.0 + 1e-12) + 1e-300);
        }
        assert!(matches!(estimate_proxies(&exp, &traj, &spec, &reference, None, &sync), Err(Error::Configuration(_))));
    }

    #[test]
    fn adaptive_schedule_rejects_synchronization_before_running() {
        let spec = ScheduleSpec::new(
            ScheduleKind::AdaptiveScalar { sigma0: 0.1, c: 1.0, stat: Statistic::History(GRAD_SQ_EMA.to_string()) },
            2,
        )
        .unwrap();
        assert!(matches!(
            ReferenceSpec::certify(ReferenceMode::SynchronizedDeterministic, &spec),
            Err(Error::Admissibility(_))
        ));
    }

    #[test]
    fn checkpoint_validation() {
        let traj = run_sgd(&quadratic_config(2, 4, 1)).unwrap();
        let mut o = ProxyOptions::every_step(4, 1, 1, DeviationMode::Dev, 0);
        o.checkpoints = vec![1, 4];
        assert!(o.validate(&traj).is_err());
        o.checkpoints = vec![2, 2];
        assert!(o.validate(&traj).is_err());
        o.checkpoints = vec![3, 1];
        assert_eq!(o.validate(&traj).unwrap(), vec![1, 3]);
    }
}
