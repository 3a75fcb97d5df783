use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::estimators::{
    covariance_mismatch_proxy, deviation_proxy, fluctuation_proxy, fluctuation_proxy_k, output_sensitivity_proxy,
    penalty_difference, sensitivity_proxy, McEstimate,
};
use crate::error::{check_dim, Error, Result};
use crate::gauss::{comparability_kappa, Covariance};
use crate::rng::{purpose, stream_id, RandomStream};
use crate::schedule::{
    make_history_view, reference_covariance, GhostReplay, ReferenceMode, ReferenceSpec, ScheduleConfig, ScheduleSpec,
    ScheduleState,
};
use crate::train::{subbatch_sizes, Experiment, StepRecord, Trajectory};

/// Which gradient-deviation proxy `V̂_t` to compute, and in which geometry.
///
/// `*_ref` variants weight by `Σ_t^ref`, the others by `Σ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationMode {
    Dev,
    DevRef,
    Fluc,
    FlucRef,
    #[serde(rename = "fluc_K")]
    FlucK,
}

impl DeviationMode {
    pub fn name(self) -> &'static str {
        match self {
            DeviationMode::Dev => "dev",
            DeviationMode::DevRef => "dev_ref",
            DeviationMode::Fluc => "fluc",
            DeviationMode::FlucRef => "fluc_ref",
            DeviationMode::FlucK => "fluc_K",
        }
    }

    pub fn uses_reference(self) -> bool {
        matches!(self, DeviationMode::DevRef | DeviationMode::FlucRef)
    }

    pub fn needs_subbatches(self) -> bool {
        matches!(self, DeviationMode::Fluc | DeviationMode::FlucRef | DeviationMode::FlucK)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyOptions {
    /// Steps `𝒯 ⊆ {1, …, T − 1}` at which per-step proxies are evaluated.
    pub checkpoints: Vec<usize>,
    /// Draws `m` per sensitivity estimate.
    pub mc_samples: usize,
    /// Draws `m_T` for the output-sensitivity estimates.
    pub mc_samples_final: usize,
    pub deviation_mode: DeviationMode,
    pub seed: u64,
    /// Share the `ζ` draws between the train and eval output-sensitivity estimates.
    pub common_random_numbers: bool,
}

impl ProxyOptions {
    /// Every step as a checkpoint.
    pub fn every_step(
        horizon: usize,
        mc_samples: usize,
        mc_samples_final: usize,
        mode: DeviationMode,
        seed: u64,
    ) -> Self {
        Self {
            checkpoints: (1..horizon).collect(),
            mc_samples,
            mc_samples_final,
            deviation_mode: mode,
            seed,
            common_random_numbers: true,
        }
    }

    pub(crate) fn validate(&self, trajectory: &Trajectory) -> Result<Vec<usize>> {
        if self.mc_samples == 0 || self.mc_samples_final == 0 {
            return Err(Error::Configuration("proxies.m and proxies.m_T must be at least 1".to_string()));
        }
        let last = trajectory.horizon() - 1;
        let mut sorted = self.checkpoints.clone();
        sorted.sort_unstable();
        for pair in sorted.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::Configuration(format!("checkpoint {} listed twice", pair[0])));
            }
        }
        if let Some(bad) = sorted.iter().find(|t| **t == 0 || **t > last) {
            return Err(Error::Configuration(format!("checkpoint {bad} outside 1..={last}")));
        }
        if self.deviation_mode.needs_subbatches() {
            for &t in &sorted {
                let ok = trajectory.steps[t - 1].g_sub.as_ref().is_some_and(|g| g.len() >= 2);
                if !ok {
                    return Err(Error::Configuration(format!(
                        "deviation mode {} needs recorded subbatch gradients (missing at step {t})",
                        self.deviation_mode.name()
                    )));
                }
            }
        }
        Ok(sorted)
    }
}

/// Per-checkpoint proxies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub t: usize,
    pub eta: f64,
    #[serde(rename = "V_hat")]
    pub v_hat: f64,
    #[serde(rename = "V_mode")]
    pub v_mode: DeviationMode,
    /// Absent when no evaluation sample exists.
    #[serde(rename = "Gamma_hat")]
    pub gamma_hat: Option<f64>,
    pub gamma_std_error: Option<f64>,
    #[serde(rename = "C_hat")]
    pub c_hat: f64,
    pub cost_certified: bool,
    /// `λ_max(Σ_ref⁻¹ Σ_t)`; 1 when synchronized.
    pub kappa: f64,
    pub tr_sigma_t: f64,
    pub tr_sigma_1t: f64,
}

/// Terminal output-sensitivity proxies and the summary `B̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalProxies {
    pub delta_train: McEstimate,
    pub delta_eval: Option<McEstimate>,
    #[serde(rename = "R_hat")]
    pub r_hat: Option<f64>,
    /// `Σ_{t∈𝒯} [2η_t² (V̂ + Γ̂) + Ĉ] + R̂`.
    #[serde(rename = "B_hat")]
    pub b_hat: f64,
    /// The same sum with coefficient `η_t²`.
    #[serde(rename = "B_hat_sharp")]
    pub b_hat_sharp: f64,
    pub tr_sigma_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub options: ProxyOptions,
    pub schedule: ScheduleConfig,
    pub reference_mode: String,
    pub certificate: String,
    pub synchronized: bool,
    pub n_train: usize,
    /// Scale used by the two-subbatch fluctuation proxy.
    pub subbatch_factor: String,
    pub estimator: String,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyReport {
    pub checkpoints: Vec<CheckpointRecord>,
    pub terminal: TerminalProxies,
    pub metadata: ReportMetadata,
}

/// `Σ_{t} [coefficient · η_t² (V̂_t + Γ̂_t) + Ĉ_t]`, absent `Γ̂` skipped.
pub fn bound_proxy_sum(records: &[CheckpointRecord], coefficient: f64) -> f64 {
    records.iter().map(|r| coefficient * r.eta * r.eta * (r.v_hat + r.gamma_hat.unwrap_or(0.0)) + r.c_hat).sum()
}

pub(crate) fn gamma_stream(seed: u64, t: usize) -> RandomStream {
    RandomStream::new(seed, stream_id(purpose::SENSITIVITY, t as u64))
}

pub(crate) fn output_streams(options: &ProxyOptions) -> (RandomStream, RandomStream) {
    let train = RandomStream::new(options.seed, stream_id(purpose::OUTPUT, 0));
    let eval = if options.common_random_numbers {
        train.clone()
    } else {
        RandomStream::new(options.seed, stream_id(purpose::OUTPUT_EVAL, 0))
    };
    (train, eval)
}

pub(crate) fn subbatch_pair_sizes(step: &StepRecord) -> (usize, usize) {
    let sizes = subbatch_sizes(step.batch.len(), 2);
    (sizes[0], sizes[1])
}

fn deviation_value(exp: &Experiment, step: &StepRecord, mode: DeviationMode, weight: &Covariance) -> Result<f64> {
    match mode {
        DeviationMode::Dev | DeviationMode::DevRef => {
            let g_hat = exp.population_gradient(&step.w)?;
            deviation_proxy(&step.g, &g_hat.value, weight)
        }
        DeviationMode::Fluc | DeviationMode::FlucRef => {
            let sub = step.g_sub.as_ref().expect("validated");
            if sub.len() == 2 {
                fluctuation_proxy(&sub[0], &sub[1], subbatch_pair_sizes(step), weight)
            } else {
                fluctuation_proxy_k(sub, weight)
            }
        }
        DeviationMode::FlucK => fluctuation_proxy_k(step.g_sub.as_ref().expect("validated"), weight),
    }
}

pub(crate) fn finish(
    exp: &Experiment,
    trajectory: &Trajectory,
    accumulated_final: &Covariance,
    records: Vec<CheckpointRecord>,
    options: &ProxyOptions,
    metadata: ReportMetadata,
) -> Result<ProxyReport> {
    let w_final = trajectory.final_iterate();
    let (mut rng_train, mut rng_eval) = output_streams(options);
    let model = &exp.model;
    let m = options.mc_samples_final;
    let delta_train = output_sensitivity_proxy(model, &w_final, accumulated_final, &exp.data.train, m, &mut rng_train)?;
    let delta_eval = if exp.data.eval.is_empty() {
        None
    } else {
        Some(output_sensitivity_proxy(model, &w_final, accumulated_final, &exp.data.eval, m, &mut rng_eval)?)
    };
    let r_hat = delta_eval.map(|e| penalty_difference(e.value, delta_train.value));
    let r = r_hat.unwrap_or(0.0);
    let terminal = TerminalProxies {
        delta_train,
        delta_eval,
        r_hat,
        b_hat: bound_proxy_sum(&records, 2.0) + r,
        b_hat_sharp: bound_proxy_sum(&records, 1.0) + r,
        tr_sigma_final: accumulated_final.trace(),
    };
    let mut metadata = metadata;
    if exp.data.eval.is_empty() {
        metadata.notes.push("gradient-sensitivity proxy not computed: no evaluation sample".to_string());
        metadata.notes.push("penalty-difference proxy not computed: no evaluation sample".to_string());
    }
    Ok(ProxyReport { checkpoints: records, terminal, metadata })
}

pub(crate) fn base_metadata(
    exp: &Experiment,
    options: &ProxyOptions,
    schedule: ScheduleConfig,
    reference_mode: &str,
    certificate: &str,
    synchronized: bool,
) -> ReportMetadata {
    ReportMetadata {
        options: options.clone(),
        schedule,
        reference_mode: reference_mode.to_string(),
        certificate: certificate.to_string(),
        synchronized,
        n_train: exp.data.train.len(),
        subbatch_factor: "2*b1*b2/(b1+b2)^2".to_string(),
        estimator: "single_trajectory_proxy".to_string(),
        notes: Vec::new(),
    }
}

/// Proxy estimation along a recorded trajectory.
///
/// For each step the schedule emits `Σ_t` from the history, the reference
/// supplies `Σ_t^ref`, and at checkpoints `V̂_t`, `Γ̂_t` and `Ĉ_t` are
/// estimated; `Σ_{1:t+1}` is then accumulated. The terminal pass estimates
/// `Δ̂` on the training and evaluation samples, `R̂ = |Δ̂_eval − Δ̂_train|`
/// and `B̂`.
pub fn estimate_proxies(
    exp: &Experiment,
    trajectory: &Trajectory,
    schedule: &ScheduleSpec,
    reference: &ReferenceSpec,
    ghost: Option<&Trajectory>,
    options: &ProxyOptions,
) -> Result<ProxyReport> {
    trajectory.validate()?;
    check_dim(schedule.dim, trajectory.dim())?;
    check_dim(exp.model.dim(), trajectory.dim())?;
    let checkpoints = options.validate(trajectory)?;
    let mut ghost_replay = match (reference.mode(), ghost) {
        (ReferenceMode::Ghost, Some(g)) => {
            if g.horizon() < trajectory.horizon() {
                return Err(Error::Configuration("ghost trajectory is shorter than the training run".to_string()));
            }
            Some(GhostReplay::new(schedule, g)?)
        }
        (ReferenceMode::Ghost, None) => {
            return Err(Error::Configuration("ghost reference requires a ghost trajectory".to_string()))
        }
        _ => None,
    };
    let mut state = ScheduleState::new(schedule.clone());
    let mut records = Vec::with_capacity(checkpoints.len());
    let mut next_checkpoint = checkpoints.iter().peekable();
    let mode = options.deviation_mode;
    for t in 1..trajectory.horizon() {
        let step = &trajectory.steps[t - 1];
        let view = make_history_view(trajectory, t)?;
        let sigma = state.next_covariance(&view)?;
        let (sigma_ref, certified) = reference_covariance(reference, &sigma, t, ghost_replay.as_mut())?;
        if next_checkpoint.peek() == Some(&&t) {
            next_checkpoint.next();
            let weight = if mode.uses_reference() { &sigma_ref } else { &sigma };
            let v_hat = deviation_value(exp, step, mode, weight)?;
            let mut rng = gamma_stream(options.seed, t);
            let gamma = sensitivity_proxy(
                &exp.model,
                &step.w,
                state.accumulated(),
                weight,
                &exp.data.eval,
                options.mc_samples,
                &mut rng,
            )?;
            let c_hat = covariance_mismatch_proxy(&sigma, &sigma_ref, certified)?;
            let kappa = if certified { 1.0 } else { comparability_kappa(&sigma, &sigma_ref)? };
            records.push(CheckpointRecord {
                t,
                eta: step.eta,
                v_hat,
                v_mode: mode,
                gamma_hat: gamma.map(|g| g.value),
                gamma_std_error: gamma.map(|g| g.std_error),
                c_hat,
                cost_certified: certified,
                kappa,
                tr_sigma_t: sigma.trace(),
                tr_sigma_1t: state.accumulated().trace(),
            });
        }
        state.advance(Some(&step.g))?;
    }
    let metadata = base_metadata(
        exp,
        options,
        schedule.to_config(),
        reference.mode_name(),
        reference.certificate().name(),
        reference.is_synchronized(),
    );
    finish(exp, trajectory, state.accumulated(), records, options, metadata)
}
