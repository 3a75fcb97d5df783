//! Brute-force oracles for the Gaussian relative-entropy lemmas and the
//! structural properties the diagnostics rely on.
//!
//! Grid integration stands in for closed forms, exact finite-space
//! computations for information quantities, and Monte Carlo for moments.
//! [`run_suite`] runs every check and reports signed margins.

mod grid;
mod lemmas;
mod oracles;
mod suite;

pub use grid::{
    kl_numeric, kl_numeric_2d, log_mixture, log_normal_1d, log_normal_2d, Grid1D, Grid2D, COVER_SDS, GRID_1D_POINTS,
    GRID_2D_POINTS, NORMALIZATION_TOLERANCE,
};
pub use lemmas::{
    conditioning_compression_check, mismatch_lemma_check, mixture_smoothing_check, toy_chain_mi, ChainStep,
    CouplingAtom, ToyChainSpec, MAX_ATOMS,
};
pub use oracles::{
    accumulated_cov_check, mc_convergence_slope, predictability_sentinel, quadratic_delta_oracle,
    third_moment_oracle_1d, AccumulatedCovCheck,
};
pub use suite::{run_suite, CheckResult, SuiteOptions, SuiteScale, VerificationReport};
