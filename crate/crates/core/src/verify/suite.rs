use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::grid::{
    kl_numeric, kl_numeric_2d, log_normal_1d, log_normal_2d, Grid1D, Grid2D, GRID_1D_POINTS, GRID_2D_POINTS,
};
use super::lemmas::{
    conditioning_compression_check, mismatch_lemma_check, mixture_smoothing_check, toy_chain_mi, CouplingAtom,
    ToyChainSpec,
};
use super::oracles::{
    accumulated_cov_check, mc_convergence_slope, predictability_sentinel, quadratic_delta_oracle,
    third_moment_oracle_1d,
};
use crate::bound::{comparable_bound, general_bound, synchronized_bound, BoundInputs, PenaltyControl, StepTerms};
use crate::error::Result;
use crate::gauss::{cov_compare_cost, gaussian_kl, third_moment_bound, Covariance, GaussianMoments};
use crate::math;
use crate::proxies::{
    estimate_proxies, output_sensitivity_proxy, run_fixed_isotropic, sensitivity_proxy, DeviationMode, ProxyOptions,
};
use crate::rng::{purpose, stream_id, RandomStream};
use crate::schedule::{ReferenceMode, ReferenceSpec, ScheduleKind, ScheduleSpec, Statistic, GRAD_SQ_EMA};
use crate::stats::RunningMoments;
use crate::train::{
    run_sgd, DatasetSpec, EtaSchedule, Experiment, Generator, Init, Model, ModelSpec, RunConfig, Samples, Sampling,
    SgdPolicy,
};

/// Outcome of one property check; `margin ≥ 0` exactly when it passed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, margin: f64, detail: String) -> Self {
        Self { name: name.to_string(), passed: margin >= 0.0, margin, detail }
    }

    fn failed(name: &str, err: crate::Error) -> Self {
        Self { name: name.to_string(), passed: false, margin: f64::NEG_INFINITY, detail: format!("error: {err}") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Sweep sizes of the verification suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteScale {
    Full,
    /// Smaller sweeps for smoke runs.
    Quick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    pub scale: SuiteScale,
}

impl SuiteOptions {
    fn count(&self, full: usize) -> usize {
        match self.scale {
            SuiteScale::Full => full,
            SuiteScale::Quick => (full / 10).max(2),
        }
    }

    fn rng(&self, check: u64) -> RandomStream {
        RandomStream::new(self.seed, stream_id(purpose::ORACLE, check))
    }
}

fn run(name: &str, f: impl FnOnce() -> Result<CheckResult>) -> CheckResult {
    f().unwrap_or_else(|e| CheckResult::failed(name, e))
}

/// Runs every property check.
pub fn run_suite(options: &SuiteOptions) -> VerificationReport {
    let checks = vec![
        run("gaussian_kl_vs_grid", || gaussian_kl_vs_grid(options)),
        run("mixture_smoothing_inequality", || mixture_smoothing(options)),
        run("canonical_reference_inequality", || canonical_reference(options)),
        run("covariance_cost_identities", || covariance_cost_identities(options)),
        run("toy_chain_information", || toy_chain(options)),
        run("quadratic_output_sensitivity", || quadratic_output_sensitivity(options)),
        run("third_moment_control", || third_moment(options)),
        run("accumulated_covariance", || accumulated_covariance(options)),
        run("predictability_sentinel", || sentinel(options)),
        run("bound_assembly_identities", || bound_identities(options)),
        run("fixed_noise_recovery", || fixed_noise_recovery(options)),
        run("monte_carlo_convergence", || mc_convergence(options)),
        run("conditioning_compression", || conditioning_compression(options)),
    ];
    VerificationReport { seed: options.seed, checks }
}

pub(crate) fn random_spd(d: usize, rng: &mut RandomStream) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.standard_normal());
    &m * m.transpose() / d as f64 + DMatrix::identity(d, d) * (0.2 + rng.uniform())
}

fn gaussian_kl_vs_grid(o: &SuiteOptions) -> Result<CheckResult> {
    let mut rng = o.rng(1);
    let mut worst: f64 = 0.0;
    let n = o.count(100);
    for _ in 0..n {
        let (m1, m2) = (rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0));
        let (v1, v2) = (rng.uniform_range(0.3, 3.0), rng.uniform_range(0.3, 3.0));
        let p = GaussianMoments::new(vec![m1], Covariance::isotropic(1, v1)?)?;
        let q = GaussianMoments::new(vec![m2], Covariance::isotropic(1, v2)?)?;
        let grid = Grid1D::covering(&[(m1, v1), (m2, v2)], GRID_1D_POINTS)?;
        let numeric = kl_numeric(|x| log_normal_1d(x, m1, v1), |x| log_normal_1d(x, m2, v2), &grid)?;
        worst = worst.max((gaussian_kl(&p, &q)? - numeric).abs());
    }
    for _ in 0..o.count(20) {
        let mp = [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)];
        let mq = [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)];
        let (cp, cq) = (random_spd(2, &mut rng), random_spd(2, &mut rng));
        let arr = |c: &DMatrix<f64>| [[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]];
        let (ap, aq) = (arr(&cp), arr(&cq));
        let p = GaussianMoments::new(mp.to_vec(), Covariance::dense(cp)?)?;
        let q = GaussianMoments::new(mq.to_vec(), Covariance::dense(cq)?)?;
        let grid = Grid2D::covering(&[(mp, ap), (mq, aq)], GRID_2D_POINTS)?;
        let numeric = kl_numeric_2d(|x, y| log_normal_2d(x, y, mp, ap), |x, y| log_normal_2d(x, y, mq, aq), &grid)?;
        worst = worst.max((gaussian_kl(&p, &q)? - numeric).abs());
    }
    Ok(CheckResult::new("gaussian_kl_vs_grid", 1e-6 - worst, format!("max |closed form − grid| = {worst:.3e}")))
}

fn mixture_smoothing(o: &SuiteOptions) -> Result<CheckResult> {
    let mut rng = o.rng(2);
    let (lhs, rhs) = mixture_smoothing_check(&[CouplingAtom { x: 0.0, y: 1.0, prob: 1.0 }], 1.0)?;
    let mut slack = 1e-6 - (lhs - 0.5).abs().max((rhs - 0.5).abs());
    for _ in 0..o.count(100) {
        let xs = [rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0)];
        let ys = [rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0)];
        let w: Vec<f64> = (0..4).map(|_| rng.uniform() + 1e-3).collect();
        let total: f64 = w.iter().sum();
        let coupling: Vec<CouplingAtom> =
            (0..4).map(|k| CouplingAtom { x: xs[k / 2], y: ys[k % 2], prob: w[k] / total }).collect();
        let (lhs, rhs) = mixture_smoothing_check(&coupling, rng.uniform_range(0.3, 2.0))?;
        slack = slack.min(rhs - lhs + 1e-6);
    }
    Ok(CheckResult::new("mixture_smoothing_inequality", slack, format!("min slack {slack:.3e}")))
}

fn canonical_reference(o: &SuiteOptions) -> Result<CheckResult> {
    let mut rng = o.rng(3);
    let (lhs, rhs) = mismatch_lemma_check(&[(0.0, 1.0)], 0.0, 1.0, 2.0)?;
    let mut slack = 1e-6 - (lhs - rhs).abs();
    for _ in 0..o.count(100) {
        let p = rng.uniform_range(0.05, 0.95);
        let atoms = [(rng.uniform_range(-2.0, 2.0), p), (rng.uniform_range(-2.0, 2.0), 1.0 - p)];
        let (lhs, rhs) = mismatch_lemma_check(
            &atoms,
            rng.uniform_range(-1.0, 1.0),
            rng.uniform_range(0.2, 2.0),
            rng.uniform_range(0.2, 2.0),
        )?;
        slack = slack.min(rhs - lhs + 1e-6);
    }
    Ok(CheckResult::new("canonical_reference_inequality", slack, format!("min slack {slack:.3e}")))
}

fn covariance_cost_identities(o: &SuiteOptions) -> Result<CheckResult> {
    let mut rng = o.rng(4);
    let mut worst: f64 = 0.0;
    for d in 1..=10usize {
        let u = DMatrix::from_fn(d, 1, |_, _| rng.standard_normal());
        let mut reps = vec![
            Covariance::isotropic(d, 0.5 + rng.uniform())?,
            Covariance::diagonal((0..d).map(|_| 0.5 + rng.uniform()).collect())?,
            Covariance::dense(random_spd(d, &mut rng))?,
        ];
        if d > 1 {
            reps.push(Covariance::low_rank_ridge(0.3, u, vec![0.7])?);
        }
        for r in &reps {
            worst = worst.max(cov_compare_cost(r, r)?);
            let expect = 0.5 * d as f64 * (1.0 - math::ln(2.0));
            worst = worst.max((cov_compare_cost(&r.scale(2.0)?, r)? - expect).abs());
        }
    }
    Ok(CheckResult::new("covariance_cost_identities", 1e-12 - worst, format!("max deviation {worst:.3e}")))
}

fn toy_chain(_o: &SuiteOptions) -> Result<CheckResult> {
    let (mi, bound) = toy_chain_mi(&ToyChainSpec::one_step(1.0, 1.0))?;
    let mut margin = (bound - mi).min(math::ln(2.0) - mi);
    let (mi0, b0) = toy_chain_mi(&ToyChainSpec::one_step(0.0, 1.0))?;
    margin = margin.min(1e-8 - mi0.abs()).min(1e-12 - b0.abs());
    let mut last = f64::INFINITY;
    for sigma in [0.5, 1.0, 2.0, 10.0] {
        let (mi, _) = toy_chain_mi(&ToyChainSpec::one_step(1.0, sigma))?;
        margin = margin.min(last - mi);
        last = mi;
    }
    let (scaled, _) = toy_chain_mi(&ToyChainSpec::one_step(3.0, 3.0))?;
    margin = margin.min(1e-8 - (scaled - mi).abs());
    let (wide, _) = toy_chain_mi(&ToyChainSpec::one_step(1.0, 100.0))?;
    margin = margin.min(1e-3 - wide);
    Ok(CheckResult::new("toy_chain_information", margin, format!("MI {mi:.6} ≤ bound {bound:.6}")))
}

fn quadratic_output_sensitivity(o: &SuiteOptions) -> Result<CheckResult> {
    let mut rng = o.rng(6);
    let mut margin = f64::INFINITY;
    let m = o.count(100_000);
    for i in 0..o.count(20) {
        let d = 1 + rng.index(10);
        let a = random_spd(d, &mut rng);
        let sigma = Covariance::dense(random_spd(d, &mut rng) * 0.1)?;
        let rows: Vec<Vec<f64>> = (0..d).map(|r| (0..d).map(|c| a[(r, c)]).collect()).collect();
        let model = Model::from_spec(&ModelSpec::Quadratic { a: rows })?;
        let centers: Vec<f64> = (0..3 * d).map(|_| rng.standard_normal()).collect();
        let samples = Samples::new(d, centers, vec![0.0; 3])?;
        let w: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let mut mc = RandomStream::new(o.seed, stream_id(purpose::ORACLE, 1000 + i as u64));
        let est = output_sensitivity_proxy(&model, &w, &sigma, &samples, m, &mut mc)?;
        let exact = quadratic_delta_oracle(&a, &sigma);
        margin = margin.min(3.0 * est.std_error - (est.value - exact).abs());
        let mu = a.clone().symmetric_eigenvalues().max();
        margin = margin.min(0.5 * mu * sigma.trace() + 3.0 * est.std_error - est.value.abs());
    }
    Ok(CheckResult::new("quadratic_output_sensitivity", margin, format!("min margin {margin:.3e}")))
}

fn third_moment(o: &SuiteOptions) -> Result<CheckResult> {
    let mut rng = o.rng(7);
    let mut margin = f64::INFINITY;
    let draws = o.count(20_000);
    for _ in 0..o.count(100) {
        let d = 1 + rng.index(6);
        let cov = Covariance::dense(random_spd(d, &mut rng))?;
        let mut z = vec![0.0; d];
        let mut m = RunningMoments::new();
        for _ in 0..draws {
            cov.sample_into(&mut rng, &mut z)?;
            let n = math::sqrt(math::norm_sq(&z));
            m.push(n * n * n);
        }
        margin = margin.min(third_moment_bound(&cov) + 3.0 * m.std_error() - m.mean());
    }
    let sigma = 0.7;
    let cov = Covariance::isotropic(1, sigma * sigma)?;
    let mut m = RunningMoments::new();
    let mut z = [0.0];
    for _ in 0..o.count(200_000) {
        cov.sample_into(&mut rng, &mut z)?;
        let a = z[0].abs();
        m.push(a * a * a);
    }
    margin = margin.min(3.0 * m.std_error() - (m.mean() - third_moment_oracle_1d(sigma)).abs());
    Ok(CheckResult::new("third_moment_control", margin, format!("min margin {margin:.3e}")))
}

pub(crate) fn small_quadratic_run(d: usize, horizon: usize, seed: u64) -> RunConfig {
    let a = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 + 0.3 * i as f64 } else { 0.1 }).collect()).collect();
    RunConfig {
        model: ModelSpec::Quadratic { a },
        dataset: DatasetSpec {
            n_train: 64,
            n_eval: 64,
            seed,
            generator: Generator::GaussianCenters { mean: vec![0.5; d], std: vec![1.0; d] },
        },
        horizon,
        eta: EtaSchedule::Constant { eta: 0.1 },
        policy: SgdPolicy { batch: 8, sampling: Sampling::WithReplacement, subbatches: 2, init: Init::Zeros },
        seed,
    }
}

fn accumulated_covariance(o: &SuiteOptions) -> Result<CheckResult> {
    let reps = o.count(10_000).max(100);
    let scalar = run_sgd(&small_quadratic_run(1, 8, o.seed))?;
    let fixed = ScheduleSpec::new(ScheduleKind::FixedIsotropic { sigma: 0.1 }, 1)?;
    let check = accumulated_cov_check(&fixed, &scalar, 5, reps, o.seed)?;
    let traj = run_sgd(&small_quadratic_run(2, 8, o.seed))?;
    let rel = (check.empirical.trace() / 0.04 - 1.0).abs();
    let mut margin = 0.05 - rel;
    let adaptive = ScheduleSpec::new(
        ScheduleKind::AdaptiveScalar { sigma0: 0.1, c: 1.0, stat: Statistic::History(GRAD_SQ_EMA.to_string()) },
        2,
    )?;
    let check = accumulated_cov_check(&adaptive, &traj, 5, reps, o.seed + 1)?;
    margin = margin.min(4.0 - check.max_z());
    let diag = ScheduleSpec::new(ScheduleKind::AdaptiveDiagonal { sigma0: 0.1, c: 1.0, beta: 0.9 }, 2)?;
    let check = accumulated_cov_check(&diag, &traj, 5, reps, o.seed + 2)?;
    margin = margin.min(4.0 - check.max_z());
    Ok(CheckResult::new("accumulated_covariance", margin, format!("fixed trace rel. error {rel:.4}")))
}

pub(crate) fn every_schedule_kind(d: usize) -> Result<Vec<ScheduleSpec>> {
    let dense = Covariance::dense(DMatrix::from_fn(d, d, |i, j| if i == j { 0.02 } else { 0.005 }))?;
    [
        ScheduleKind::FixedIsotropic { sigma: 0.1 },
        ScheduleKind::FixedDense { covariances: vec![dense] },
        ScheduleKind::AdaptiveScalar { sigma0: 0.1, c: 1.0, stat: Statistic::History(GRAD_SQ_EMA.to_string()) },
        ScheduleKind::AdaptiveDiagonal { sigma0: 0.1, c: 1.0, beta: 0.9 },
        ScheduleKind::AdamProportional { beta: 0.9, rho: 0.1, eps: 1e-8, lambda0: 1e-3 },
        ScheduleKind::AdamInverse { beta: 0.9, rho: 0.1, eps: 1e-2, lambda0: 1e-3 },
        ScheduleKind::LowRankRidge { rank: 2, lambda0: 1e-3, rho: 0.1 },
    ]
    .into_iter()
    .map(|k| ScheduleSpec::new(k, d))
    .collect()
}

fn sentinel(o: &SuiteOptions) -> Result<CheckResult> {
    let traj = run_sgd(&small_quadratic_run(3, 10, o.seed))?;
    let mut failed = Vec::new();
    for spec in every_schedule_kind(3)? {
        if !predictability_sentinel(&traj, &spec)? {
            failed.push(spec.kind_name());
        }
    }
    let margin = if failed.is_empty() { 0.0 } else { -(failed.len() as f64) };
    Ok(CheckResult::new("predictability_sentinel", margin, format!("changed: {failed:?}")))
}

fn bound_identities(o: &SuiteOptions) -> Result<CheckResult> {
    let mut rng = o.rng(10);
    let mut worst: f64 = 0.0;
    for _ in 0..o.count(100) {
        let steps = (0..1 + rng.index(10))
            .map(|_| StepTerms { eta: rng.uniform(), ev: rng.uniform(), egamma: rng.uniform(), c: 0.0 })
            .collect();
        let inputs = BoundInputs {
            r: 0.1 + rng.uniform(),
            n: 1 + rng.index(1000),
            steps,
            r_delta: rng.uniform(),
            penalty_control: PenaltyControl::Raw,
            kappa: Some(1.0),
            estimator: "random".to_string(),
        };
        let s = synchronized_bound(&inputs)?.total;
        worst = worst.max((general_bound(&inputs)?.total - s).abs());
        worst = worst.max((comparable_bound(&inputs)?.total - s).abs());
    }
    let mut margin = 1e-12 - worst;
    for run in 0..o.count(10) as u64 {
        let cfg = small_quadratic_run(3, 10, o.seed.wrapping_add(run));
        let traj = run_sgd(&cfg)?;
        let ghost = run_sgd(&cfg.ghost(o.seed.wrapping_add(1_000 + run)))?;
        let exp = Experiment::from_meta(&traj.meta)?;
        let spec =
            ScheduleSpec::new(ScheduleKind::AdaptiveDiagonal { sigma0: 0.1, c: 1.0 + run as f64, beta: 0.9 }, 3)?;
        let reference = ReferenceSpec::certify(ReferenceMode::Ghost, &spec)?;
        let sync = ProxyOptions::every_step(10, 50, 50, DeviationMode::Dev, run);
        let refd = ProxyOptions { deviation_mode: DeviationMode::DevRef, ..sync.clone() };
        let a = estimate_proxies(&exp, &traj, &spec, &reference, Some(&ghost), &sync)?;
        let b = estimate_proxies(&exp, &traj, &spec, &reference, Some(&ghost), &refd)?;
        for (s, r) in a.checkpoints.iter().zip(&b.checkpoints) {
            margin = margin.min(s.kappa * s.v_hat * (1.0 + 1e-12) - r.v_hat);
        }
    }
    Ok(CheckResult::new("bound_assembly_identities", margin, format!("max identity gap {worst:.3e}")))
}

fn fixed_noise_recovery(o: &SuiteOptions) -> Result<CheckResult> {
    let traj = run_sgd(&small_quadratic_run(3, 12, o.seed))?;
    let exp = Experiment::from_meta(&traj.meta)?;
    let spec = ScheduleSpec::new(ScheduleKind::FixedIsotropic { sigma: 0.2 }, 3)?;
    let reference = ReferenceSpec::certify(ReferenceMode::SynchronizedDeterministic, &spec)?;
    let options = ProxyOptions::every_step(12, o.count(500), o.count(2000), DeviationMode::Dev, o.seed);
    let general = estimate_proxies(&exp, &traj, &spec, &reference, None, &options)?;
    let fixed = run_fixed_isotropic(&exp, &traj, 0.2, &options)?;
    let same = general.checkpoints == fixed.checkpoints && general.terminal == fixed.terminal;
    Ok(CheckResult::new(
        "fixed_noise_recovery",
        if same { 0.0 } else { -1.0 },
        format!("B_hat {:e} vs {:e}", general.terminal.b_hat, fixed.terminal.b_hat),
    ))
}

fn mc_convergence(o: &SuiteOptions) -> Result<CheckResult> {
    let cfg = small_quadratic_run(3, 4, o.seed);
    let exp = Experiment::new(&cfg.model, &cfg.dataset)?;
    let acc = Covariance::diagonal(vec![0.05, 0.1, 0.02])?;
    let weight = Covariance::isotropic(3, 0.01)?;
    let w = [0.2, -0.1, 0.4];
    let sizes: Vec<usize> = match o.scale {
        SuiteScale::Full => vec![100, 1_000, 10_000],
        SuiteScale::Quick => vec![100, 400, 1_600],
    };
    let replicates = o.count(100).max(20);
    let gamma_slope = mc_convergence_slope(&sizes, replicates, |m, r| {
        let mut rng = RandomStream::new(o.seed, stream_id(purpose::ORACLE, (m as u64) << 20 | r as u64));
        Ok(sensitivity_proxy(&exp.model, &w, &acc, &weight, &exp.data.eval, m, &mut rng)?.map_or(0.0, |e| e.value))
    })?;
    let delta_slope = mc_convergence_slope(&sizes, replicates, |m, r| {
        let mut rng = RandomStream::new(o.seed, stream_id(purpose::ORACLE, (m as u64) << 20 | r as u64 | 1 << 40));
        Ok(output_sensitivity_proxy(&exp.model, &w, &acc, &exp.data.train, m, &mut rng)?.value)
    })?;
    let margin = 0.1 - (gamma_slope + 0.5).abs().max((delta_slope + 0.5).abs());
    Ok(CheckResult::new("monte_carlo_convergence", margin, format!("slopes Γ̂ {gamma_slope:.3}, Δ̂ {delta_slope:.3}")))
}

fn conditioning_compression(o: &SuiteOptions) -> Result<CheckResult> {
    let mut rng = o.rng(13);
    let mut margin = f64::INFINITY;
    for _ in 0..o.count(100) {
        let n = 2 + rng.index(6);
        let mut p: Vec<f64> = (0..n).map(|_| rng.uniform() + 1e-3).collect();
        let mut q: Vec<f64> = (0..n).map(|_| rng.uniform() + 1e-3).collect();
        let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
        p.iter_mut().for_each(|x| *x /= sp);
        q.iter_mut().for_each(|x| *x /= sq);
        let cells: Vec<usize> = (0..n).map(|_| rng.index(2)).collect();
        let (coarse, fine) = conditioning_compression_check(&p, &q, &cells)?;
        margin = margin.min(fine - coarse + 1e-12);
    }
    Ok(CheckResult::new("conditioning_compression", margin, format!("min slack {margin:.3e}")))
}
