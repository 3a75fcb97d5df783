//! Predictable covariance schedules and admissible references.
//!
//! A schedule maps the past of the optimization path to the next virtual
//! perturbation covariance `Σ_t`. Rules only ever see a [`HistoryView`],
//! which has no access to the current gradient or batch. A
//! [`ReferenceSpec`] pairs a reference-kernel mode with the certificate that
//! admits it; synchronizing with a data-dependent schedule fails with
//! [`Error::Admissibility`](crate::Error::Admissibility).

mod history;
mod reference;
mod spec;
mod state;

pub use history::{make_history_view, HistoryView, GRAD_NORM_EMA, GRAD_SQ_EMA, LAST_FLUCTUATION, STAT_DECAY};
pub use reference::{reference_covariance, Certificate, GhostReplay, ReferenceMode, ReferenceSpec};
pub use spec::{ScheduleConfig, ScheduleKind, ScheduleSpec, Statistic, DEFAULT_BETA, DEFAULT_EPS, DEFAULT_LAMBDA0};
pub use state::{public_statistic, replay, ScheduleState};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::gauss::{cov_compare_cost, Covariance};
    use crate::testutil::{corrupt_step, quadratic_run};
    use crate::train::StepRecord;
    use alloc::string::ToString;
    use alloc::vec;
    use alloc::vec::Vec;
    use nalgebra::DMatrix;

    fn spec(kind: ScheduleKind, d: usize) -> ScheduleSpec {
        ScheduleSpec::new(kind, d).unwrap()
    }

    fn all_kinds(d: usize) -> Vec<ScheduleSpec> {
        vec![
            spec(ScheduleKind::FixedIsotropic { sigma: 0.1 }, d),
            spec(
                ScheduleKind::FixedDense {
                    covariances: vec![Covariance::dense(DMatrix::from_fn(
                        d,
                        d,
                        |i, j| if i == j { 0.02 } else { 0.005 },
                    ))
                    .unwrap()],
                },
                d,
            ),
            spec(
                ScheduleKind::AdaptiveScalar { sigma0: 0.1, c: 1.0, stat: Statistic::History(GRAD_SQ_EMA.to_string()) },
                d,
            ),
            spec(ScheduleKind::AdaptiveDiagonal { sigma0: 0.1, c: 2.0, beta: 0.9 }, d),
            spec(ScheduleKind::AdamProportional { beta: 0.9, rho: 0.1, eps: 1e-8, lambda0: 1e-3 }, d),
            spec(ScheduleKind::AdamInverse { beta: 0.9, rho: 0.1, eps: 1e-2, lambda0: 1e-3 }, d),
            spec(ScheduleKind::LowRankRidge { rank: 2, lambda0: 1e-3, rho: 0.1 }, d),
        ]
    }

    fn record(t: usize, g: Vec<f64>) -> StepRecord {
        StepRecord {
            t,
            w: vec![0.0; g.len()],
            eta: 0.1,
            batch: vec![0],
            g,
            g_sub: None,
            loss_train: 0.0,
            loss_eval: None,
        }
    }

    #[test]
    fn fixed_isotropic_emits_sigma_squared() {
        let mut state = ScheduleState::new(spec(ScheduleKind::FixedIsotropic { sigma: 0.1 }, 3));
        let w = [0.0; 3];
        let view = HistoryView::new(1, &[], &w).unwrap();
        let cov = state.next_covariance(&view).unwrap();
        assert_eq!(cov, Covariance::Isotropic { dim: 3, variance: 0.1f64 * 0.1 });
    }

    #[test]
    fn adaptive_scalar_with_zero_statistic_is_sigma0_squared() {
        let s = spec(
            ScheduleKind::AdaptiveScalar { sigma0: 1.0, c: 1.0, stat: Statistic::History(GRAD_SQ_EMA.to_string()) },
            2,
        );
        let mut state = ScheduleState::new(s);
        let w = [0.0; 2];
        let view = HistoryView::new(1, &[], &w).unwrap();
        assert_eq!(view.stat(GRAD_SQ_EMA), Some(0.0));
        assert_eq!(state.next_covariance(&view).unwrap(), Covariance::isotropic(2, 1.0).unwrap());
    }

    #[test]
    fn adam_inverse_hand_example() {
        // v = (4, 0) after one step with β = 0.5 and g = (√8, 0).
        let s = spec(ScheduleKind::AdamInverse { beta: 0.5, rho: 1.0, eps: 1.0, lambda0: 0.1 }, 2);
        let mut state = ScheduleState::new(s);
        let w = [0.0; 2];
        let v1 = HistoryView::new(1, &[], &w).unwrap();
        state.next_covariance(&v1).unwrap();
        state.advance(Some(&[libm::sqrt(8.0), 0.0])).unwrap();
        assert!((state.second_moment().unwrap()[0] - 4.0).abs() < 1e-12);
        let past = [record(1, vec![libm::sqrt(8.0), 0.0])];
        let v2 = HistoryView::new(2, &past, &w).unwrap();
        let Covariance::Diagonal(s) = state.next_covariance(&v2).unwrap() else { panic!("expected diagonal") };
        assert!((s[0] - (1.0 / 3.0 + 0.1)).abs() < 1e-12);
        assert!((s[1] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn one_ema_step_of_second_moment() {
        let s = spec(ScheduleKind::AdamProportional { beta: 0.9, rho: 1.0, eps: 1e-8, lambda0: 1e-3 }, 3);
        let mut state = ScheduleState::new(s);
        let w = [0.0; 3];
        state.next_covariance(&HistoryView::new(1, &[], &w).unwrap()).unwrap();
        state.advance(Some(&[2.0, -2.0, 2.0])).unwrap();
        for v in state.second_moment().unwrap() {
            assert!((v - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_emission_accumulates() {
        let mut state = ScheduleState::new(spec(ScheduleKind::FixedIsotropic { sigma: 0.1 }, 2));
        let w = [0.0; 2];
        let mut past = Vec::new();
        for t in 1..=4 {
            let view = HistoryView::new(t, &past, &w).unwrap();
            state.next_covariance(&view).unwrap();
            state.advance(None).unwrap();
            past.push(record(t, vec![0.0; 2]));
        }
        assert_eq!(state.step(), 5);
        let Covariance::Isotropic { variance, .. } = *state.accumulated() else { panic!() };
        assert!((variance - 0.04).abs() < 1e-15);
    }

    #[test]
    fn first_advance_without_gradient_keeps_v() {
        let s = spec(ScheduleKind::AdamInverse { beta: 0.9, rho: 1.0, eps: 1e-8, lambda0: 1e-3 }, 2);
        let mut state = ScheduleState::new(s);
        assert!(state.accumulated().is_zero());
        let w = [0.0; 2];
        let cov = state.next_covariance(&HistoryView::new(1, &[], &w).unwrap()).unwrap();
        state.advance(None).unwrap();
        assert_eq!(state.second_moment().unwrap(), &[0.0, 0.0]);
        assert_eq!(state.accumulated(), &cov);
    }

    #[test]
    fn sequencing_is_enforced() {
        let mut state = ScheduleState::new(spec(ScheduleKind::FixedIsotropic { sigma: 1.0 }, 1));
        assert!(matches!(state.advance(Some(&[1.0])), Err(Error::Sequencing(_))));
        let w = [0.0];
        let view = HistoryView::new(1, &[], &w).unwrap();
        state.next_covariance(&view).unwrap();
        assert!(matches!(state.next_covariance(&view), Err(Error::Sequencing(_))));
        state.advance(None).unwrap();
        assert!(matches!(state.next_covariance(&view), Err(Error::Sequencing(_))));
    }

    #[test]
    fn history_view_counts_and_range() {
        let traj = quadratic_run(2, 6, 1);
        let v1 = make_history_view(&traj, 1).unwrap();
        assert_eq!(v1.past_gradients().len(), 0);
        assert_eq!(v1.stat(GRAD_SQ_EMA), Some(0.0));
        let v3 = make_history_view(&traj, 3).unwrap();
        assert_eq!(v3.past_gradients().len(), 2);
        assert_eq!(v3.past_iterates().count(), 3);
        assert_eq!(v3.current_iterate(), traj.steps[2].w.as_slice());
        assert!(matches!(make_history_view(&traj, 0), Err(Error::Input(_))));
        assert!(matches!(make_history_view(&traj, 6), Err(Error::Input(_))));
    }

    #[test]
    fn corrupting_the_current_step_never_changes_sigma() {
        let traj = quadratic_run(3, 12, 7);
        for s in all_kinds(3) {
            for t in 1..traj.horizon() {
                let clean = replay(&s, &traj, t - 1).unwrap();
                let bad_traj = corrupt_step(&traj, t);
                let bad = replay(&s, &bad_traj, t - 1).unwrap();
                let mut a = clean.clone();
                let mut b = bad.clone();
                let ca = a.next_covariance(&make_history_view(&traj, t).unwrap()).unwrap();
                let cb = b.next_covariance(&make_history_view(&bad_traj, t).unwrap()).unwrap();
                assert_eq!(ca, cb, "{} at t={t}", s.kind_name());
                assert!(cb.trace().is_finite());
            }
        }
    }

    #[test]
    fn accumulated_trace_is_running_sum_and_ridge_floor_holds() {
        let traj = quadratic_run(3, 15, 3);
        for s in all_kinds(3) {
            let state = replay(&s, &traj, traj.horizon() - 1).unwrap();
            let sum: f64 = state.emitted().iter().map(|c| c.trace()).sum();
            assert!((state.accumulated().trace() - sum).abs() <= 1e-12 * state.emitted().len() as f64 * sum.max(1.0));
            if let ScheduleKind::AdamProportional { lambda0, .. }
            | ScheduleKind::AdamInverse { lambda0, .. }
            | ScheduleKind::LowRankRidge { lambda0, .. } = s.kind
            {
                for c in state.emitted() {
                    assert!(c.min_eigenvalue() >= lambda0 * (1.0 - 1e-12));
                }
            }
            let again = replay(&s, &traj, traj.horizon() - 1).unwrap();
            assert_eq!(state.emitted(), again.emitted());
        }
    }

    #[test]
    fn synchronized_deterministic_returns_actual() {
        let s = spec(ScheduleKind::FixedIsotropic { sigma: 0.3 }, 2);
        let r = ReferenceSpec::certify(ReferenceMode::SynchronizedDeterministic, &s).unwrap();
        let actual = Covariance::isotropic(2, 0.09).unwrap();
        let (cov, certified) = reference_covariance(&r, &actual, 1, None).unwrap();
        assert_eq!(cov, actual);
        assert!(certified);
        assert_eq!(cov_compare_cost(&actual, &cov).unwrap(), 0.0);
    }

    #[test]
    fn training_dependent_schedule_cannot_synchronize() {
        let s = spec(
            ScheduleKind::AdaptiveScalar { sigma0: 1.0, c: 1.0, stat: Statistic::History(GRAD_SQ_EMA.to_string()) },
            2,
        );
        for mode in [
            ReferenceMode::SynchronizedDeterministic,
            ReferenceMode::SynchronizedPublic { seed: 3 },
            ReferenceMode::PrefixObservable,
        ] {
            assert!(matches!(ReferenceSpec::certify(mode, &s), Err(Error::Admissibility(_))));
        }
        assert_eq!(ReferenceSpec::certify(ReferenceMode::Ghost, &s).unwrap().certificate(), Certificate::GhostAdaptive);
    }

    #[test]
    fn public_statistic_schedule_synchronizes_with_matching_seed() {
        let s = spec(ScheduleKind::AdaptiveScalar { sigma0: 1.0, c: 1.0, stat: Statistic::Public { seed: 9 } }, 2);
        let r = ReferenceSpec::certify(ReferenceMode::SynchronizedPublic { seed: 9 }, &s).unwrap();
        assert_eq!(r.certificate(), Certificate::PublicPredictable);
        assert!(ReferenceSpec::certify(ReferenceMode::SynchronizedPublic { seed: 8 }, &s).is_err());
        assert!(ReferenceSpec::certify(ReferenceMode::SynchronizedDeterministic, &s).is_err());
    }

    #[test]
    fn ghost_reference_cost_example() {
        // Actual history has one gradient with ‖G‖² = 10 so q̂ = 1; ghost has zero gradient.
        let s = spec(
            ScheduleKind::AdaptiveScalar { sigma0: 1.0, c: 1.0, stat: Statistic::History(GRAD_SQ_EMA.to_string()) },
            1,
        );
        let w = [0.0];
        let past = [record(1, vec![libm::sqrt(10.0)])];
        let view = HistoryView::new(2, &past, &w).unwrap();
        assert!((view.stat(GRAD_SQ_EMA).unwrap() - 1.0).abs() < 1e-12);
        let mut actual_state = replay_fixed(&s, &past);
        let actual = actual_state.next_covariance(&view).unwrap();

        let mut ghost = quadratic_run(1, 4, 5);
        for step in &mut ghost.steps {
            step.g = vec![0.0];
        }
        let r = ReferenceSpec::certify(ReferenceMode::Ghost, &s).unwrap();
        let mut replay_g = GhostReplay::new(&s, &ghost).unwrap();
        reference_covariance(&r, &actual, 1, Some(&mut replay_g)).unwrap();
        let (reference, certified) = reference_covariance(&r, &actual, 2, Some(&mut replay_g)).unwrap();
        assert!(!certified);
        assert_eq!(reference, Covariance::isotropic(1, 1.0).unwrap());
        let cost = cov_compare_cost(&actual, &reference).unwrap();
        assert!((cost - 0.5 * (2.0 - 1.0 + libm::log(0.5))).abs() < 1e-12);
    }

    fn replay_fixed(s: &ScheduleSpec, past: &[StepRecord]) -> ScheduleState {
        let mut state = ScheduleState::new(s.clone());
        for (k, rec) in past.iter().enumerate() {
            state.next_covariance(&HistoryView::new(k + 1, &past[..k], &rec.w).unwrap()).unwrap();
            state.advance(Some(&rec.g)).unwrap();
        }
        state
    }

    #[test]
    fn explicit_reference_certified_only_when_equal() {
        let s = spec(ScheduleKind::FixedIsotropic { sigma: 1.0 }, 2);
        let listed = Covariance::isotropic(2, 1.0).unwrap();
        let r = ReferenceSpec::certify(ReferenceMode::Explicit(vec![listed.clone()]), &s).unwrap();
        assert!(reference_covariance(&r, &listed, 1, None).unwrap().1);
        let other = Covariance::isotropic(2, 2.0).unwrap();
        assert!(!reference_covariance(&r, &other, 1, None).unwrap().1);
    }

    #[test]
    fn config_round_trip_and_validation() {
        for s in all_kinds(3) {
            let back = ScheduleSpec::from_config(&s.to_config(), 3).unwrap();
            assert_eq!(back, s);
        }
        let cfg =
            ScheduleConfig { kind: "adam_inverse".to_string(), rho: Some(1.0), beta: Some(1.0), ..Default::default() };
        assert!(matches!(ScheduleSpec::from_config(&cfg, 2), Err(Error::Configuration(_))));
        let cfg = ScheduleConfig { kind: "fixed_isotropic".to_string(), ..Default::default() };
        assert!(matches!(ScheduleSpec::from_config(&cfg, 2), Err(Error::Configuration(_))));
    }
}
