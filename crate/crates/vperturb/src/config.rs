//! TOML configuration with sections `[model]`, `[dataset]`, `[sgd]`,
//! `[schedule]`, `[reference]`, `[proxies]`, `[bound]`, `[output]` and
//! optional `[[compare]]` schedule tables.
//!
//! Unknown keys are rejected. After [`Config::resolve`] every defaulted
//! key is filled in, so the resolved table can be echoed into outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vperturb_core::bound::{BoundVariant, PenaltyControl};
use vperturb_core::proxies::{DeviationMode, ProxyOptions};
use vperturb_core::schedule::{ReferenceMode, ScheduleConfig, ScheduleSpec};
use vperturb_core::train::{
    DatasetSpec, EtaSchedule, Generator, Init, Model, ModelSpec, RunConfig, Sampling, SgdPolicy,
};
use vperturb_core::Covariance;

use crate::error::{CliError, CliResult};
use crate::format::to_json_line;

pub const DEFAULT_MC_SAMPLES: usize = 100;
pub const DEFAULT_MC_SAMPLES_FINAL: usize = 1000;
pub const DEFAULT_SUBBATCHES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSetting {
    Constant(f64),
    Schedule(EtaSchedule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Checkpoints {
    List(Vec<usize>),
    /// `"all"` or a comma-separated list such as `"1,5,10"`.
    Text(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub n_train: Option<usize>,
    pub n_eval: Option<usize>,
    pub seed: Option<u64>,
    pub generator: Option<Generator>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    #[serde(rename = "T")]
    pub horizon: Option<usize>,
    pub eta: Option<EtaSetting>,
    pub batch: Option<usize>,
    pub sampling: Option<Sampling>,
    pub subbatches: Option<usize>,
    pub init: Option<Init>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    /// `auto`, `synchronized_deterministic`, `synchronized_public`,
    /// `prefix_observable`, `ghost` or `explicit`.
    pub mode: Option<String>,
    /// Public randomness seed for `synchronized_public`.
    pub seed: Option<u64>,
    pub ghost_seed: Option<u64>,
    /// Row-major matrices for `explicit`.
    pub matrices: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxiesSection {
    pub checkpoints: Option<Checkpoints>,
    pub m: Option<usize>,
    #[serde(rename = "m_T")]
    pub m_final: Option<usize>,
    pub deviation_mode: Option<DeviationMode>,
    pub seed: Option<u64>,
    pub common_random_numbers: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    #[serde(rename = "R")]
    pub r: Option<f64>,
    pub mu: Option<f64>,
    pub rho: Option<f64>,
    pub variant: Option<BoundVariant>,
    pub penalty_control: Option<PenaltyControl>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
    pub prefix: Option<String>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub sgd: SgdSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default)]
    pub reference: ReferenceSection,
    #[serde(default)]
    pub proxies: ProxiesSection,
    #[serde(default)]
    pub bound: BoundSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare: Vec<ScheduleConfig>,
}

fn required<T: Clone>(value: &Option<T>, key: &str) -> CliResult<T> {
    value.clone().ok_or_else(|| CliError::Config(format!("missing required key {key}")))
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks required keys and fills every default. With `seed_override`
    /// all seeds are re-derived from it.
    pub fn resolve(mut self, seed_override: Option<u64>) -> CliResult<Self> {
        required(&self.model, "model")?;
        required(&self.sgd.horizon, "sgd.T")?;
        required(&self.sgd.eta, "sgd.eta")?;
        required(&self.sgd.batch, "sgd.batch")?;
        let n_train = required(&self.dataset.n_train, "dataset.n_train")?;
        required(&self.dataset.generator, "dataset.generator")?;
        if let Some(seed) = seed_override {
            self.sgd.seed = Some(seed);
            self.dataset.seed = None;
            self.proxies.seed = None;
            self.reference.ghost_seed = None;
        }
        let seed = *self.sgd.seed.get_or_insert(0);
        if let Some(EtaSetting::Constant(eta)) = self.sgd.eta {
            self.sgd.eta = Some(EtaSetting::Schedule(EtaSchedule::Constant { eta }));
        }
        self.sgd.sampling.get_or_insert(Sampling::WithReplacement);
        self.sgd.subbatches.get_or_insert(DEFAULT_SUBBATCHES);
        self.sgd.init.get_or_insert(Init::Zeros);
        self.dataset.n_eval.get_or_insert(n_train);
        self.dataset.seed.get_or_insert(seed);
        self.reference.ghost_seed.get_or_insert(seed.wrapping_add(1));
        self.proxies.m.get_or_insert(DEFAULT_MC_SAMPLES);
        self.proxies.m_final.get_or_insert(DEFAULT_MC_SAMPLES_FINAL);
        self.proxies.deviation_mode.get_or_insert(DeviationMode::Dev);
        self.proxies.seed.get_or_insert(seed);
        self.proxies.common_random_numbers.get_or_insert(true);
        let horizon = self.sgd.horizon.unwrap_or_default();
        let checkpoints = self.checkpoint_list(horizon)?;
        self.proxies.checkpoints = Some(Checkpoints::List(checkpoints));
        self.reference.mode.get_or_insert_with(|| "auto".to_string());
        if let Some(schedule) = &self.schedule {
            let spec = ScheduleSpec::from_config(schedule, Model::from_spec(&self.model()?)?.dim())?;
            self.reference_mode(&spec)?;
        }
        self.bound.variant.get_or_insert(BoundVariant::General);
        self.bound.penalty_control.get_or_insert(PenaltyControl::Raw);
        self.output.dir.get_or_insert_with(|| ".".to_string());
        self.output.prefix.get_or_insert_with(|| "run".to_string());
        self.output.format.get_or_insert(Format::Csv);
        Ok(self)
    }

    fn checkpoint_list(&self, horizon: usize) -> CliResult<Vec<usize>> {
        let all = || (1..horizon).collect();
        match &self.proxies.checkpoints {
            None => Ok(all()),
            Some(Checkpoints::List(v)) => Ok(v.clone()),
            Some(Checkpoints::Text(s)) if s.trim() == "all" => Ok(all()),
            Some(Checkpoints::Text(s)) => s
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .map_err(|_| CliError::Config(format!("proxies.checkpoints: cannot parse {p:?}")))
                })
                .collect(),
        }
    }

    pub fn model(&self) -> CliResult<ModelSpec> {
        required(&self.model, "model")
    }

    pub fn run_config(&self) -> CliResult<RunConfig> {
        let eta = match required(&self.sgd.eta, "sgd.eta")? {
            EtaSetting::Constant(eta) => EtaSchedule::Constant { eta },
            EtaSetting::Schedule(s) => s,
        };
        let n_train = required(&self.dataset.n_train, "dataset.n_train")?;
        Ok(RunConfig {
            model: self.model()?,
            dataset: DatasetSpec {
                n_train,
                n_eval: self.dataset.n_eval.unwrap_or(n_train),
                seed: required(&self.dataset.seed, "dataset.seed")?,
                generator: required(&self.dataset.generator, "dataset.generator")?,
            },
            horizon: required(&self.sgd.horizon, "sgd.T")?,
            eta,
            policy: SgdPolicy {
                batch: required(&self.sgd.batch, "sgd.batch")?,
                sampling: self.sgd.sampling.unwrap_or(Sampling::WithReplacement),
                subbatches: self.sgd.subbatches.unwrap_or(DEFAULT_SUBBATCHES),
                init: self.sgd.init.clone().unwrap_or(Init::Zeros),
            },
            seed: self.sgd.seed.unwrap_or(0),
        })
    }

    pub fn schedule(&self) -> CliResult<&ScheduleConfig> {
        self.schedule.as_ref().ok_or_else(|| CliError::Config("missing required key schedule.kind".to_string()))
    }

    /// Reference mode for `spec`; `auto` picks a synchronized mode when one
    /// is admissible and the ghost reference otherwise.
    pub fn reference_mode(&self, spec: &ScheduleSpec) -> CliResult<ReferenceMode> {
        let mode = self.reference.mode.clone().unwrap_or_else(|| "auto".to_string());
        let mode = if mode == "auto" { auto_mode(spec).to_string() } else { mode };
        Ok(match mode.as_str() {
            "synchronized_deterministic" => ReferenceMode::SynchronizedDeterministic,
            "synchronized_public" => ReferenceMode::SynchronizedPublic {
                seed: self
                    .reference
                    .seed
                    .or(spec.public_seed())
                    .ok_or_else(|| CliError::Config("missing required key reference.seed".to_string()))?,
            },
            "prefix_observable" => ReferenceMode::PrefixObservable,
            "ghost" => ReferenceMode::Ghost,
            "explicit" => {
                let matrices = required(&self.reference.matrices, "reference.matrices")?;
                let covs = matrices
                    .iter()
                    .map(|rows| Covariance::from_rows(rows).map_err(CliError::from))
                    .collect::<CliResult<Vec<_>>>()?;
                ReferenceMode::Explicit(covs)
            }
            other => return Err(CliError::Config(format!("reference.mode: unknown mode {other:?}"))),
        })
    }

    pub fn ghost_seed(&self) -> u64 {
        self.reference.ghost_seed.unwrap_or_else(|| self.sgd.seed.unwrap_or(0).wrapping_add(1))
    }

    pub fn proxy_options(&self, horizon: usize) -> CliResult<ProxyOptions> {
        Ok(ProxyOptions {
            checkpoints: self.checkpoint_list(horizon)?,
            mc_samples: self.proxies.m.unwrap_or(DEFAULT_MC_SAMPLES),
            mc_samples_final: self.proxies.m_final.unwrap_or(DEFAULT_MC_SAMPLES_FINAL),
            deviation_mode: self.proxies.deviation_mode.unwrap_or(DeviationMode::Dev),
            seed: self.proxies.seed.unwrap_or(self.sgd.seed.unwrap_or(0)),
            common_random_numbers: self.proxies.common_random_numbers.unwrap_or(true),
        })
    }

    pub fn output_path(&self, out_override: Option<&Path>, suffix: &str) -> PathBuf {
        let dir = out_override
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(self.output.dir.as_deref().unwrap_or(".")));
        dir.join(format!("{}.{suffix}", self.output.prefix.as_deref().unwrap_or("run")))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> CliResult<String> {
        Ok(sha256_hex(to_json_line(self)?.as_bytes()))
    }
}

fn auto_mode(spec: &ScheduleSpec) -> &'static str {
    if spec.is_deterministic() {
        "synchronized_deterministic"
    } else if spec.public_seed().is_some() {
        "synchronized_public"
    } else {
        "ghost"
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
