use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::proxies::ProxyReport;

/// Expected per-step terms `(η_t, E V_t, E Γ_t, C_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTerms {
    pub eta: f64,
    pub ev: f64,
    pub egamma: f64,
    pub c: f64,
}

/// Which quantity stands in for the output penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyControl {
    /// The estimated penalty `R̂` itself.
    Raw,
    /// `μ · E Tr(Σ_{1:T})`.
    Smoothness,
    /// Local curvature mismatch plus the third-moment remainder.
    Curvature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    General,
    Synchronized,
    Comparable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Sub-Gaussian constant of the loss.
    #[serde(rename = "R")]
    pub r: f64,
    /// Training-sample size.
    pub n: usize,
    pub steps: Vec<StepTerms>,
    /// Output penalty.
    #[serde(rename = "R_delta")]
    pub r_delta: f64,
    pub penalty_control: PenaltyControl,
    /// Precision comparability constant, for the comparable variant.
    pub kappa: Option<f64>,
    /// How the expectations were estimated.
    pub estimator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `Σ_t 2κη_t² (E V_t + E Γ_t)` (κ = 1 unless comparable).
    pub info_term: f64,
    /// `Σ_t C_t`.
    pub cov_term_sum: f64,
    /// `√((2R²/n)(info_term + cov_term_sum))`.
    pub sqrt_term: f64,
    pub penalty: f64,
    pub total: f64,
    pub variant: BoundVariant,
    pub penalty_control: PenaltyControl,
    pub estimator: String,
}

fn nonnegative(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(Error::Input(format!("{name} must be finite and nonnegative, got {x}")))
    }
}

impl BoundInputs {
    /// Single-trajectory proxies as plug-in estimates of the expectations.
    /// Absent sensitivity terms contribute zero; the penalty is `R̂`
    /// (zero when it could not be estimated).
    pub fn from_proxy_report(report: &ProxyReport, r: f64) -> Self {
        Self {
            r,
            n: report.metadata.n_train,
            steps: report
                .checkpoints
                .iter()
                .map(|c| StepTerms { eta: c.eta, ev: c.v_hat, egamma: c.gamma_hat.unwrap_or(0.0), c: c.c_hat })
                .collect(),
            r_delta: report.terminal.r_hat.unwrap_or(0.0),
            penalty_control: PenaltyControl::Raw,
            kappa: None,
            estimator: "single_trajectory_proxy".to_string(),
        }
    }

    /// Averages per-step terms and penalties of several independent runs
    /// sharing checkpoints.
    pub fn average(runs: &[BoundInputs]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::Input("no runs to average".to_string()))?;
        let k = runs.len() as f64;
        let mut steps = first.steps.clone();
        for s in &mut steps {
            *s = StepTerms { eta: s.eta, ev: 0.0, egamma: 0.0, c: 0.0 };
        }
        let mut r_delta = 0.0;
        for run in runs {
            if run.steps.len() != steps.len() || run.n != first.n {
                return Err(Error::Input("runs disagree on checkpoints or sample size".to_string()));
            }
            for (acc, s) in steps.iter_mut().zip(&run.steps) {
                if acc.eta != s.eta {
                    return Err(Error::Input("runs disagree on step sizes".to_string()));
                }
                acc.ev += s.ev / k;
                acc.egamma += s.egamma / k;
                acc.c += s.c / k;
            }
            r_delta += run.r_delta / k;
        }
        Ok(Self { steps, r_delta, estimator: format!("multi_seed_average({})", runs.len()), ..first.clone() })
    }

    pub fn with_penalty(mut self, control: PenaltyControl, value: f64) -> Self {
        self.penalty_control = control;
        self.r_delta = value;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::Input(format!("R must be positive, got {}", self.r)));
        }
        if self.n == 0 {
            return Err(Error::Input("n must be at least 1".to_string()));
        }
        nonnegative("R_delta", self.r_delta)?;
        for (i, s) in self.steps.iter().enumerate() {
            nonnegative(&format!("eta[{i}]"), s.eta)?;
            nonnegative(&format!("EV[{i}]"), s.ev)?;
            nonnegative(&format!("EGamma[{i}]"), s.egamma)?;
            nonnegative(&format!("C[{i}]"), s.c)?;
        }
        Ok(())
    }
}

fn assemble(inputs: &BoundInputs, kappa: f64, variant: BoundVariant) -> Result<BoundReport> {
    inputs.validate()?;
    let mut info_term = 0.0;
    let mut cov_term_sum = 0.0;
    for s in &inputs.steps {
        info_term += 2.0 * kappa * s.eta * s.eta * (s.ev + s.egamma);
        cov_term_sum += s.c;
    }
    let scale = 2.0 * inputs.r * inputs.r / inputs.n as f64;
    let sqrt_term = math::sqrt(scale * (info_term + cov_term_sum));
    Ok(BoundReport {
        info_term,
        cov_term_sum,
        sqrt_term,
        penalty: inputs.r_delta,
        total: sqrt_term + inputs.r_delta,
        variant,
        penalty_control: inputs.penalty_control,
        estimator: inputs.estimator.clone(),
    })
}

/// `√((2R²/n) Σ_t [2η_t² (E V_t + E Γ_t) + C_t]) + R_Δ`.
pub fn general_bound(inputs: &BoundInputs) -> Result<BoundReport> {
    assemble(inputs, 1.0, BoundVariant::General)
}

/// `√((4R²/n) Σ_t η_t² (E V_t + E Γ_t)) + R_Δ`; every `C_t` must vanish.
pub fn synchronized_bound(inputs: &BoundInputs) -> Result<BoundReport> {
    if let Some((i, s)) = inputs.steps.iter().enumerate().find(|(_, s)| s.c != 0.0) {
        return Err(Error::Admissibility(format!(
            "synchronized bound needs zero covariance-comparison cost, step {i} has C = {}",
            s.c
        )));
    }
    assemble(inputs, 1.0, BoundVariant::Synchronized)
}

/// `√((2R²/n) [2κ Σ_t η_t² (E V_t + E Γ_t) + Σ_t C_t]) + R_Δ`, with terms in
/// synchronized geometry and `κ ≥ 1`.
pub fn comparable_bound(inputs: &BoundInputs) -> Result<BoundReport> {
    let kappa = inputs.kappa.ok_or_else(|| Error::Input("comparable bound needs kappa".to_string()))?;
    if !(kappa.is_finite() && kappa >= 1.0) {
        return Err(Error::Input(format!("kappa must be at least 1, got {kappa}")));
    }
    assemble(inputs, kappa, BoundVariant::Comparable)
}

/// `μ · E Tr(Σ_{1:T})`.
pub fn smoothness_penalty(mu: f64, expected_trace_final: f64) -> Result<f64> {
    nonnegative("mu", mu)?;
    nonnegative("trace", expected_trace_final)?;
    Ok(mu * expected_trace_final)
}

/// `R = (max ℓ − min ℓ) / 2` for the quadratic loss `½(w − z)ᵀA(w − z)`
/// with both `w` and `z` in the box `[lo, hi]`.
pub fn quadratic_box_subgaussian(a: &nalgebra::DMatrix<f64>, lo: &[f64], hi: &[f64]) -> Result<f64> {
    let d = a.nrows();
    crate::error::check_dim(d, lo.len())?;
    crate::error::check_dim(d, hi.len())?;
    if d > 24 {
        return Err(Error::Input("box vertex enumeration limited to d ≤ 24".to_string()));
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
        return Err(Error::Input("box bounds must satisfy lo ≤ hi".to_string()));
    }
    // The difference w − z ranges over a symmetric box; the convex loss peaks at a vertex.
    let width: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| h - l).collect();
    let mut best: f64 = 0.0;
    let mut u = alloc::vec![0.0; d];
    for mask in 0u32..(1u32 << d) {
        for j in 0..d {
            u[j] = if mask >> j & 1 == 1 { width[j] } else { -width[j] };
        }
        let q: f64 = (0..d).map(|i| u[i] * (0..d).map(|j| a[(i, j)] * u[j]).sum::<f64>()).sum();
        best = best.max(0.5 * q);
    }
    Ok(best / 2.0)
}
