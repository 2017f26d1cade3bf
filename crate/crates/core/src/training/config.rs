use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::rationale::AblationMask;

/// Optimiser knobs handed to the backend. The defaults are full-scale
/// values; the mock backend needs a far larger learning rate to move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl OptimizerSettings {
    pub fn sft_default() -> Self {
        Self {
            epochs: 2,
            batch_size: 2,
            learning_rate: 3e-7,
            warmup_ratio: 0.1,
            weight_decay: 0.01,
            grad_clip: 1.0,
        }
    }

    pub fn dpo_default() -> Self {
        Self {
            epochs: 1,
            ..Self::sft_default()
        }
    }

    /// Linear warmup then cosine decay, restarted for every training stage.
    pub fn learning_rate_at(&self, step: usize, total_steps: usize) -> f64 {
        let total = total_steps.max(1);
        let warmup = ((total as f64) * self.warmup_ratio).ceil() as usize;
        if step < warmup {
            return self.learning_rate * (step + 1) as f64 / warmup as f64;
        }
        let span = (total - warmup).max(1) as f64;
        let progress = (step - warmup) as f64 / span;
        self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Which text the DPO log-probabilities are taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpoScoring {
    /// Rationale and answer spans.
    #[default]
    FullSequence,
    /// Up to and including the closing rationale tag.
    RationaleOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Preferred-eligible above this response similarity.
    pub tau1: f64,
    /// Rejected-eligible below this response similarity.
    pub tau2: f64,
    /// Pseudo-label admission threshold.
    pub tau3: f64,
    pub beta: f64,
    /// Samples per context for preference construction.
    pub k: usize,
    /// Samples per context for pseudo-labelling.
    pub m: usize,
    pub sample_temperature: f64,
    pub top_p: f64,
    pub iteration_limit: u32,
    /// Stop once a round admits fewer than this fraction of |unlabeled| pseudo-labels.
    pub convergence_fraction: f64,
    /// Maximum preference pairs per context; `None` keeps the full cross product.
    pub pair_cap: Option<usize>,
    pub accumulate_pseudo_labels: bool,
    pub dpo_scoring: DpoScoring,
    pub mask: AblationMask,
    pub sft: OptimizerSettings,
    pub dpo: OptimizerSettings,
    pub retry_limit: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            tau1: 0.8,
            tau2: 0.4,
            tau3: 0.8,
            beta: 0.1,
            k: 5,
            m: 3,
            sample_temperature: 0.7,
            top_p: 1.0,
            iteration_limit: 3,
            convergence_fraction: 0.01,
            pair_cap: Some(4),
            accumulate_pseudo_labels: false,
            dpo_scoring: DpoScoring::FullSequence,
            mask: AblationMask::full(),
            sft: OptimizerSettings::sft_default(),
            dpo: OptimizerSettings::dpo_default(),
            retry_limit: 2,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if !(0.0 <= self.tau2 && self.tau2 < self.tau1 && self.tau1 <= 1.0) {
            return bad("thresholds must satisfy 0 <= tau2 < tau1 <= 1");
        }
        if !(0.0..=1.0).contains(&self.tau3) {
            return bad("tau3 must lie in [0, 1]");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        if self.m < 1 {
            return bad("m must be at least 1");
        }
        if !(self.sample_temperature >= 0.0) || !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("sampling temperature must be >= 0 and top_p in (0, 1]");
        }
        if self.convergence_fraction < 0.0 {
            return bad("convergence_fraction must be >= 0");
        }
        for (name, o) in [("sft", &self.sft), ("dpo", &self.dpo)] {
            if o.batch_size == 0 || o.learning_rate < 0.0 {
                return Err(TrainError::Config(format!(
                    "{name}: batch_size must be >= 1 and learning_rate >= 0"
                )));
            }
        }
        Ok(())
    }
}
