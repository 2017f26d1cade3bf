use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Converged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub base_checkpoint: String,
    pub sft_checkpoint: String,
    pub dpo_checkpoint: Option<String>,
    pub preference_pairs: usize,
    pub pseudo_labels: usize,
    pub merged_size: usize,
    pub sft_loss_curve: Vec<f64>,
    pub dpo_loss_curve: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
}

/// Iteration ledger of one run. No wall-clock fields, so reruns with the
/// same seed serialise identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRunState {
    pub run_id: String,
    pub seed: u64,
    pub config: TrainingConfig,
    pub labeled_size: usize,
    pub unlabeled_size: usize,
    pub iterations: Vec<IterationRecord>,
    pub status: RunStatus,
    pub failure: Option<String>,
}

impl TrainingRunState {
    /// Checkpoint id of the most recent supervised stage.
    pub fn final_policy(&self) -> Option<&str> {
        self.iterations.last().map(|r| r.sft_checkpoint.as_str())
    }
}
