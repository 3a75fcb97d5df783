use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::rng::{purpose, stream_id, RandomStream};

/// Row-major feature matrix with one scalar target per record.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    feature_dim: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl Samples {
    pub fn new(feature_dim: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Input("feature dimension must be positive".to_string()));
        }
        check_dim(targets.len() * feature_dim, features.len())?;
        Ok(Self { feature_dim, features, targets })
    }

    pub fn empty(feature_dim: usize) -> Self {
        Self { feature_dim, features: Vec::new(), targets: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn push(&mut self, features: &[f64], target: f64) -> Result<()> {
        check_dim(self.feature_dim, features.len())?;
        self.features.extend_from_slice(features);
        self.targets.push(target);
        Ok(())
    }
}

/// How training and evaluation records are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    /// Quadratic centers `z ~ N(mean, diag(std²))`.
    GaussianCenters { mean: Vec<f64>, std: Vec<f64> },
    /// Quadratic centers uniform on the box `[lo, hi]`.
    UniformCenters { lo: Vec<f64>, hi: Vec<f64> },
    /// Features `N(0, I)`, labels `Bernoulli(σ(xᵀw*))`, `w* ~ N(0, teacher_scale² I)`.
    LogisticTeacher { teacher_scale: f64 },
    /// Features `N(0, I)`, targets from a random tanh teacher plus Gaussian noise.
    MlpTeacher { hidden: usize, noise: f64 },
}

/// Sizes, seed and generator of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub generator: Generator,
}

/// Training sample `S` and an independent evaluation/ghost sample `S'`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Samples,
    pub eval: Samples,
}

impl Generator {
    /// Mean of the quadratic center law when it is known in closed form.
    pub fn center_mean(&self) -> Option<Vec<f64>> {
        match self {
            Generator::GaussianCenters { mean, .. } => Some(mean.clone()),
            Generator::UniformCenters { lo, hi } => Some(lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect()),
            _ => None,
        }
    }

    fn validate(&self, model: &Model) -> Result<()> {
        let p = model.feature_dim();
        let ok = match (self, model) {
            (Generator::GaussianCenters { mean, std }, Model::Quadratic { .. }) => {
                mean.len() == p && std.len() == p && std.iter().all(|s| *s >= 0.0)
            }
            (Generator::UniformCenters { lo, hi }, Model::Quadratic { .. }) => {
                lo.len() == p && hi.len() == p && lo.iter().zip(hi).all(|(a, b)| a <= b)
            }
            (Generator::LogisticTeacher { teacher_scale }, Model::Logistic { .. }) => *teacher_scale >= 0.0,
            (Generator::MlpTeacher { hidden, noise }, Model::Mlp { .. }) => *hidden > 0 && *noise >= 0.0,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Configuration(format!("generator {self:?} is incompatible with model {model:?}")))
        }
    }

    /// Draws `n` records from the generator's law.
    fn draw(&self, model: &Model, teacher: &[f64], n: usize, rng: &mut RandomStream) -> Samples {
        let p = model.feature_dim();
        let mut out = Samples::empty(p);
        let mut x = vec![0.0; p];
        for _ in 0..n {
            let y = match self {
                Generator::GaussianCenters { mean, std } => {
                    for k in 0..p {
                        x[k] = mean[k] + std[k] * rng.standard_normal();
                    }
                    0.0
                }
                Generator::UniformCenters { lo, hi } => {
                    for k in 0..p {
                        x[k] = rng.uniform_range(lo[k], hi[k]);
                    }
                    0.0
                }
                Generator::LogisticTeacher { .. } => {
                    rng.fill_standard_normal(&mut x);
                    let prob = math::sigmoid(math::dot(&x, teacher));
                    rng.bernoulli(prob) as u8 as f64
                }
                Generator::MlpTeacher { hidden, noise } => {
                    rng.fill_standard_normal(&mut x);
                    teacher_output(teacher, p, *hidden, &x) + noise * rng.standard_normal()
                }
            };
            out.push(&x, y).expect("feature length fixed by model");
        }
        out
    }

    fn teacher(&self, model: &Model, seed: u64) -> Vec<f64> {
        let mut rng = RandomStream::new(seed, stream_id(purpose::TEACHER, 0));
        match self {
            Generator::LogisticTeacher { teacher_scale } => {
                (0..model.feature_dim()).map(|_| teacher_scale * rng.standard_normal()).collect()
            }
            Generator::MlpTeacher { hidden, .. } => {
                let p = model.feature_dim();
                let scale = 1.0 / math::sqrt(p as f64);
                (0..hidden * p + 2 * hidden + 1).map(|_| scale * rng.standard_normal()).collect()
            }
            _ => Vec::new(),
        }
    }
}

fn teacher_output(params: &[f64], p: usize, hidden: usize, x: &[f64]) -> f64 {
    let mut f = params[hidden * p + 2 * hidden];
    for j in 0..hidden {
        let a = params[hidden * p + j] + (0..p).map(|k| params[j * p + k] * x[k]).sum::<f64>();
        f += params[hidden * p + hidden + j] * math::tanh(a);
    }
    f
}

impl DatasetSpec {
    /// Generates train and eval sets from disjoint random streams.
    pub fn generate(&self, model: &Model) -> Result<Dataset> {
        if self.n_train == 0 {
            return Err(Error::Configuration("dataset.n_train must be positive".to_string()));
        }
        self.generator.validate(model)?;
        let teacher = self.generator.teacher(model, self.seed);
        let mut train_rng = RandomStream::new(self.seed, stream_id(purpose::TRAIN_DATA, 0));
        let mut eval_rng = RandomStream::new(self.seed, stream_id(purpose::EVAL_DATA, 0));
        Ok(Dataset {
            train: self.generator.draw(model, &teacher, self.n_train, &mut train_rng),
            eval: self.generator.draw(model, &teacher, self.n_eval, &mut eval_rng),
        })
    }

    /// Independent copy of the data law for a ghost sample.
    pub fn ghost(&self, ghost_seed: u64) -> Self {
        Self { seed: ghost_seed, ..self.clone() }
    }

    /// Fresh records from the population law (used for unbiasedness checks).
    pub fn draw_population(&self, model: &Model, n: usize, rng: &mut RandomStream) -> Result<Samples> {
        self.generator.validate(model)?;
        let teacher = self.generator.teacher(model, self.seed);
        Ok(self.generator.draw(model, &teacher, n, rng))
    }
}
