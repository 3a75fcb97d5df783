use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};

use crate::error::{Error, Result};
use crate::math;
use crate::train::{StepRecord, Trajectory};

/// Decay of the default pathwise statistics.
pub const STAT_DECAY: f64 = 0.9;

/// EMA of `‖G_k‖²` over `k ≤ t − 1`; the default `q̂_{t−1}`.
pub const GRAD_SQ_EMA: &str = "grad_sq_ema";
/// EMA of `‖G_k‖` over `k ≤ t − 1`.
pub const GRAD_NORM_EMA: &str = "grad_norm_ema";
/// `½‖G_{t−1}^{(1)} − G_{t−1}^{(2)}‖²` from the previous step's subbatches.
pub const LAST_FLUCTUATION: &str = "last_fluctuation";

/// The optimization history `H_{t−1}` as seen by a covariance rule at step
/// `t`: iterates `W_1 … W_t` and the gradients, batches and step sizes of
/// steps `1 … t − 1`.
///
/// The current gradient `G_t` and batch `J_t` are not reachable from a view,
/// so a rule built on it is predictable by construction.
#[derive(Debug, Clone)]
pub struct HistoryView<'a> {
    step: usize,
    past: &'a [StepRecord],
    current_iterate: &'a [f64],
    stats: BTreeMap<String, f64>,
}

impl<'a> HistoryView<'a> {
    /// Builds a view from explicit parts; `past` must hold steps `1 … t − 1`.
    pub fn new(step: usize, past: &'a [StepRecord], current_iterate: &'a [f64]) -> Result<Self> {
        if step == 0 || past.len() + 1 != step {
            return Err(Error::Input(format!("history for step {step} needs {} past records", step.saturating_sub(1))));
        }
        let mut view = Self { step, past, current_iterate, stats: BTreeMap::new() };
        view.compute_default_stats();
        Ok(view)
    }

    fn compute_default_stats(&mut self) {
        let (mut sq, mut norm) = (0.0, 0.0);
        for rec in self.past {
            let n2 = math::norm_sq(&rec.g);
            sq = STAT_DECAY * sq + (1.0 - STAT_DECAY) * n2;
            norm = STAT_DECAY * norm + (1.0 - STAT_DECAY) * math::sqrt(n2);
        }
        self.stats.insert(GRAD_SQ_EMA.to_string(), sq);
        self.stats.insert(GRAD_NORM_EMA.to_string(), norm);
        if let Some(sub) = self.past.last().and_then(|r| r.g_sub.as_ref()) {
            if sub.len() >= 2 {
                let diff: f64 = sub[0].iter().zip(&sub[1]).map(|(a, b)| (a - b) * (a - b)).sum();
                self.stats.insert(LAST_FLUCTUATION.to_string(), 0.5 * diff);
            }
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.current_iterate.len()
    }

    /// `W_t`.
    pub fn current_iterate(&self) -> &[f64] {
        self.current_iterate
    }

    /// `W_1 … W_t`.
    pub fn past_iterates(&self) -> impl DoubleEndedIterator<Item = &[f64]> + '_ {
        self.past.iter().map(|r| r.w.as_slice()).chain(core::iter::once(self.current_iterate))
    }

    /// `G_1 … G_{t−1}`.
    pub fn past_gradients(&self) -> impl DoubleEndedIterator<Item = &[f64]> + ExactSizeIterator + '_ {
        self.past.iter().map(|r| r.g.as_slice())
    }

    /// `J_1 … J_{t−1}`.
    pub fn past_batches(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.past.iter().map(|r| r.batch.as_slice())
    }

    /// `η_1 … η_{t−1}`.
    pub fn past_step_sizes(&self) -> impl Iterator<Item = f64> + '_ {
        self.past.iter().map(|r| r.eta)
    }

    pub fn stat(&self, name: &str) -> Option<f64> {
        self.stats.get(name).copied()
    }

    pub fn stats(&self) -> &BTreeMap<String, f64> {
        &self.stats
    }
}

/// The view at step `t` of a recorded trajectory (`1 ≤ t ≤ T − 1`).
pub fn make_history_view(trajectory: &Trajectory, t: usize) -> Result<HistoryView<'_>> {
    let last = trajectory.horizon().saturating_sub(1);
    if t == 0 || t > last || t > trajectory.steps.len() {
        return Err(Error::Input(format!("history step {t} outside 1..={last}")));
    }
    HistoryView::new(t, &trajectory.steps[..t - 1], &trajectory.steps[t - 1].w)
}
