//! Generalization-bound assembly and output-penalty controls.
//!
//! The general bound adds the covariance-comparison costs under the square
//! root; the synchronized bound requires them to vanish; the comparable bound
//! rescales synchronized-geometry terms by a precision comparability
//! constant. Penalty controls bound the output-sensitivity gap through global
//! smoothness or local curvature.

mod assemble;
mod curvature;

pub use assemble::{
    comparable_bound, general_bound, quadratic_box_subgaussian, smoothness_penalty, synchronized_bound, BoundInputs,
    BoundReport, BoundVariant, PenaltyControl, StepTerms,
};
pub use curvature::{curvature_expansion, curvature_mismatch_penalty, estimate_hessian_lipschitz, trace_hessian_cov};
