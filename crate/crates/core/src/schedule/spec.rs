use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::history::{GRAD_NORM_EMA, GRAD_SQ_EMA, LAST_FLUCTUATION};
use crate::error::{Error, Result};
use crate::gauss::Covariance;

/// Pathwise statistic `q̂_{t−1}` driving an adaptive scalar schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum Statistic {
    /// A named statistic computed from the history view.
    History(String),
    /// Uniform draw from public randomness keyed by `seed`, independent of
    /// the training sample.
    Public { seed: u64 },
}

/// Covariance families.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    /// `Σ_t = σ² I`.
    FixedIsotropic { sigma: f64 },
    /// Deterministic per-step matrices; a single entry is reused for every step.
    FixedDense { covariances: Vec<Covariance> },
    /// `Σ_t = σ₀² (1 + c q̂_{t−1}) I`.
    AdaptiveScalar { sigma0: f64, c: f64, stat: Statistic },
    /// `Σ_t = diag(σ₀² (1 + c u_{t−1,j}))`, `u` an EMA (decay β) of `G_{k,j}²`.
    AdaptiveDiagonal { sigma0: f64, c: f64, beta: f64 },
    /// `Σ_t = diag(ρ² (√v_t + ε)) + λ₀ I`.
    AdamProportional { beta: f64, rho: f64, eps: f64, lambda0: f64 },
    /// `Σ_t = diag(ρ² / (√v_t + ε)) + λ₀ I`.
    AdamInverse { beta: f64, rho: f64, eps: f64, lambda0: f64 },
    /// `Σ_t = λ₀ I + ρ² U Uᵀ`, `U` the unit-normalized last `rank` gradients.
    LowRankRidge { rank: usize, lambda0: f64, rho: f64 },
}

/// A validated covariance rule `Φ_t` for parameter dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub dim: usize,
}

/// Default `ε` for Adam-like families.
pub const DEFAULT_EPS: f64 = 1e-8;
/// Default ridge `λ₀`.
pub const DEFAULT_LAMBDA0: f64 = 1e-3;
/// Default second-moment decay.
pub const DEFAULT_BETA: f64 = 0.9;

/// Flat `[schedule]` configuration table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    /// Statistic name for `adaptive_scalar`, or `"public"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stat: Option<String>,
    /// Public randomness seed when `stat = "public"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_seed: Option<u64>,
    /// Row-major matrices for `fixed_dense`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<Vec<Vec<Vec<f64>>>>,
}

fn need(value: Option<f64>, key: &str) -> Result<f64> {
    value.ok_or_else(|| Error::Configuration(format!("schedule.{key} is required")))
}

fn positive(value: f64, key: &str) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Configuration(format!("schedule.{key} must be positive, got {value}")))
    }
}

fn nonnegative(value: f64, key: &str) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::Configuration(format!("schedule.{key} must be nonnegative, got {value}")))
    }
}

fn unit_interval(value: f64, key: &str) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::Configuration(format!("schedule.{key} must lie in (0, 1), got {value}")))
    }
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Configuration("schedule dimension must be positive".to_string()));
        }
        match &kind {
            ScheduleKind::FixedIsotropic { sigma } => positive(*sigma, "sigma")?,
            ScheduleKind::FixedDense { covariances } => {
                if covariances.is_empty() {
                    return Err(Error::Configuration("schedule.matrices must not be empty".to_string()));
                }
                if let Some(c) = covariances.iter().find(|c| c.dim() != dim || c.is_zero()) {
                    return Err(Error::Configuration(format!(
                        "fixed covariance of dimension {} does not match model dimension {dim}",
                        c.dim()
                    )));
                }
            }
            ScheduleKind::AdaptiveScalar { sigma0, c, .. } => {
                positive(*sigma0, "sigma0")?;
                nonnegative(*c, "c")?;
            }
            ScheduleKind::AdaptiveDiagonal { sigma0, c, beta } => {
                positive(*sigma0, "sigma0")?;
                nonnegative(*c, "c")?;
                unit_interval(*beta, "beta")?;
            }
            ScheduleKind::AdamProportional { beta, rho, eps, lambda0 }
            | ScheduleKind::AdamInverse { beta, rho, eps, lambda0 } => {
                unit_interval(*beta, "beta")?;
                positive(*rho, "rho")?;
                positive(*eps, "eps")?;
                positive(*lambda0, "lambda0")?;
            }
            ScheduleKind::LowRankRidge { rank, lambda0, rho } => {
                if *rank == 0 {
                    return Err(Error::Configuration("schedule.rank must be positive".to_string()));
                }
                positive(*lambda0, "lambda0")?;
                positive(*rho, "rho")?;
            }
        }
        Ok(Self { kind, dim })
    }

    pub fn from_config(cfg: &ScheduleConfig, dim: usize) -> Result<Self> {
        let kind = match cfg.kind.as_str() {
            "fixed_isotropic" => ScheduleKind::FixedIsotropic { sigma: need(cfg.sigma, "sigma")? },
            "fixed_dense" => {
                let mats = cfg
                    .matrices
                    .as_ref()
                    .ok_or_else(|| Error::Configuration("schedule.matrices is required".to_string()))?;
                let covariances = mats
                    .iter()
                    .map(|rows| {
                        Covariance::from_rows(rows).map_err(|e| Error::Configuration(format!("schedule.matrices: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                ScheduleKind::FixedDense { covariances }
            }
            "adaptive_scalar" => {
                let stat = match cfg.stat.as_deref() {
                    Some("public") => Statistic::Public {
                        seed: cfg.public_seed.ok_or_else(|| {
                            Error::Configuration("schedule.public_seed is required for stat = \"public\"".to_string())
                        })?,
                    },
                    Some(name) => Statistic::History(name.to_string()),
                    None => Statistic::History(GRAD_SQ_EMA.to_string()),
                };
                if let Statistic::History(name) = &stat {
                    if ![GRAD_SQ_EMA, GRAD_NORM_EMA, LAST_FLUCTUATION].contains(&name.as_str()) {
                        return Err(Error::Configuration(format!("unknown schedule.stat \"{name}\"")));
                    }
                }
                ScheduleKind::AdaptiveScalar { sigma0: need(cfg.sigma0, "sigma0")?, c: need(cfg.c, "c")?, stat }
            }
            "adaptive_diagonal" => ScheduleKind::AdaptiveDiagonal {
                sigma0: need(cfg.sigma0, "sigma0")?,
                c: need(cfg.c, "c")?,
                beta: cfg.beta.unwrap_or(DEFAULT_BETA),
            },
            "adam_proportional" | "adam_inverse" => {
                let beta = cfg.beta.unwrap_or(DEFAULT_BETA);
                let rho = need(cfg.rho, "rho")?;
                let eps = cfg.eps.unwrap_or(DEFAULT_EPS);
                let lambda0 = cfg.lambda0.unwrap_or(DEFAULT_LAMBDA0);
                if cfg.kind == "adam_proportional" {
                    ScheduleKind::AdamProportional { beta, rho, eps, lambda0 }
                } else {
                    ScheduleKind::AdamInverse { beta, rho, eps, lambda0 }
                }
            }
            "lowrank_ridge" => ScheduleKind::LowRankRidge {
                rank: cfg.rank.ok_or_else(|| Error::Configuration("schedule.rank is required".to_string()))?,
                lambda0: cfg.lambda0.unwrap_or(DEFAULT_LAMBDA0),
                rho: need(cfg.rho, "rho")?,
            },
            other => return Err(Error::Configuration(format!("unknown schedule.kind \"{other}\""))),
        };
        Self::new(kind, dim)
    }

    /// Resolved configuration with every default filled in.
    pub fn to_config(&self) -> ScheduleConfig {
        let mut cfg = ScheduleConfig { kind: self.kind_name().to_string(), ..Default::default() };
        match &self.kind {
            ScheduleKind::FixedIsotropic { sigma } => cfg.sigma = Some(*sigma),
            ScheduleKind::FixedDense { covariances } => {
                cfg.matrices = Some(
                    covariances
                        .iter()
                        .map(|c| {
                            let m = c.to_dense();
                            (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
                        })
                        .collect(),
                )
            }
            ScheduleKind::AdaptiveScalar { sigma0, c, stat } => {
                cfg.sigma0 = Some(*sigma0);
                cfg.c = Some(*c);
                match stat {
                    Statistic::History(name) => cfg.stat = Some(name.clone()),
                    Statistic::Public { seed } => {
                        cfg.stat = Some("public".to_string());
                        cfg.public_seed = Some(*seed);
                    }
                }
            }
            ScheduleKind::AdaptiveDiagonal { sigma0, c, beta } => {
                cfg.sigma0 = Some(*sigma0);
                cfg.c = Some(*c);
                cfg.beta = Some(*beta);
            }
            ScheduleKind::AdamProportional { beta, rho, eps, lambda0 }
            | ScheduleKind::AdamInverse { beta, rho, eps, lambda0 } => {
                cfg.beta = Some(*beta);
                cfg.rho = Some(*rho);
                cfg.eps = Some(*eps);
                cfg.lambda0 = Some(*lambda0);
            }
            ScheduleKind::LowRankRidge { rank, lambda0, rho } => {
                cfg.rank = Some(*rank);
                cfg.lambda0 = Some(*lambda0);
                cfg.rho = Some(*rho);
            }
        }
        cfg
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ScheduleKind::FixedIsotropic { .. } => "fixed_isotropic",
            ScheduleKind::FixedDense { .. } => "fixed_dense",
            ScheduleKind::AdaptiveScalar { .. } => "adaptive_scalar",
            ScheduleKind::AdaptiveDiagonal { .. } => "adaptive_diagonal",
            ScheduleKind::AdamProportional { .. } => "adam_proportional",
            ScheduleKind::AdamInverse { .. } => "adam_inverse",
            ScheduleKind::LowRankRidge { .. } => "lowrank_ridge",
        }
    }

    /// True when `Σ_t` does not depend on any data.
    pub fn is_deterministic(&self) -> bool {
        matches!(self.kind, ScheduleKind::FixedIsotropic { .. } | ScheduleKind::FixedDense { .. })
    }

    /// Public seed when `Σ_t` depends only on public randomness.
    pub fn public_seed(&self) -> Option<u64> {
        match &self.kind {
            ScheduleKind::AdaptiveScalar { stat: Statistic::Public { seed }, .. } => Some(*seed),
            _ => None,
        }
    }

    pub(crate) fn adam_beta(&self) -> Option<f64> {
        match self.kind {
            ScheduleKind::AdamProportional { beta, .. } | ScheduleKind::AdamInverse { beta, .. } => Some(beta),
            _ => None,
        }
    }
}
