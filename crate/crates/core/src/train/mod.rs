//! Vanilla SGD on small analytic models with exact gradients and
//! Hessian-vector products, plus the recorded trajectory type.

mod data;
mod model;
mod sgd;
mod trajectory;

pub use data::{Dataset, DatasetSpec, Generator, Samples};
pub use model::{Model, ModelSpec, Subset};
pub use sgd::{
    run_sgd, run_sgd_on, subbatch_gradients, subbatch_sizes, EtaSchedule, Init, RunConfig, Sampling, SgdPolicy,
    DIVERGENCE_NORM,
};
pub use trajectory::{sgd_update, StepRecord, Trajectory, TrajectoryMeta, TRAJECTORY_VERSION};

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Model, regenerated data and generator law of a recorded run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: Model,
    pub data: Dataset,
    pub generator: Generator,
}

impl Experiment {
    pub fn new(model_spec: &ModelSpec, dataset: &DatasetSpec) -> Result<Self> {
        let model = Model::from_spec(model_spec)?;
        let data = dataset.generate(&model)?;
        Ok(Self { model, data, generator: dataset.generator.clone() })
    }

    pub fn from_meta(meta: &TrajectoryMeta) -> Result<Self> {
        let exp = Self::new(&meta.model, &meta.dataset)?;
        crate::error::check_dim(meta.d, exp.model.dim())?;
        Ok(exp)
    }

    pub fn population_gradient(&self, w: &[f64]) -> Result<PopulationGradient> {
        population_gradient(&self.model, &self.generator, w, &self.data.eval)
    }
}

/// Population gradient `ḡ(w)`, or its evaluation-sample surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationGradient {
    pub value: Vec<f64>,
    /// `true` when computed in closed form rather than from the eval sample.
    pub analytic: bool,
}

/// `ḡ(w) = A (w − μ_c)` for quadratics with a known center law; otherwise
/// `g(w, eval)`.
pub fn population_gradient(
    model: &Model,
    generator: &Generator,
    w: &[f64],
    eval: &Samples,
) -> Result<PopulationGradient> {
    if let (Model::Quadratic { a }, Some(mean)) = (model, generator.center_mean()) {
        crate::error::check_dim(a.nrows(), w.len())?;
        let d = a.nrows();
        let diff: Vec<f64> = w.iter().zip(&mean).map(|(w, m)| w - m).collect();
        let value = (0..d).map(|r| (0..d).map(|c| a[(r, c)] * diff[c]).sum()).collect();
        return Ok(PopulationGradient { value, analytic: true });
    }
    if eval.is_empty() {
        return Err(Error::Configuration("population gradient needs an evaluation sample for this model".to_string()));
    }
    Ok(PopulationGradient { value: model.grad(w, eval, Subset::All)?, analytic: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn analytic_quadratic_population_gradient() {
        let model = Model::from_spec(&ModelSpec::Quadratic { a: vec![vec![1.0, 0.0], vec![0.0, 1.0]] }).unwrap();
        let gen = Generator::GaussianCenters { mean: vec![0.0, 0.0], std: vec![1.0, 1.0] };
        let g = population_gradient(&model, &gen, &[1.0, 1.0], &Samples::empty(2)).unwrap();
        assert_eq!(g, PopulationGradient { value: vec![1.0, 1.0], analytic: true });
    }

    #[test]
    fn eval_proxy_vanishes_at_eval_minimizer() {
        let model = Model::from_spec(&ModelSpec::Logistic { dim: 1, l2: 1.0 }).unwrap();
        let gen = Generator::LogisticTeacher { teacher_scale: 1.0 };
        // One record x = 1, y = 1: gradient σ(w) − 1 + w vanishes near w ≈ 0.2785.
        let eval = Samples::new(1, vec![1.0], vec![1.0]).unwrap();
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if model.grad(&[mid], &eval, Subset::All).unwrap()[0] > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let g = population_gradient(&model, &gen, &[lo], &eval).unwrap();
        assert!(!g.analytic);
        assert!(g.value[0].abs() < 1e-12);
    }
}
