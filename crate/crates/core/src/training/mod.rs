//! Supervised initialisation, preference optimisation and pseudo-label
//! self-training.

mod config;
mod dpo;
mod generate;
mod iterative;
mod losses;
mod preference;
mod pseudo;
mod records;
mod sft;
mod state;
mod store;

use std::path::PathBuf;

use thiserror::Error;

use crate::gateway::BackendError;
use crate::jsonl::JsonlError;
use crate::rationale::RationaleError;

pub use config::{DpoScoring, OptimizerSettings, TrainingConfig};
pub use dpo::{run_dpo, DpoOutcome};
pub use generate::{generate_agent_turn, AgentTurn, GenerationSettings};
pub use iterative::{run_iterative_loop, LoopFailure};
pub use losses::{dpo_loss, dpo_pair_loss, pair_gap, sft_loss, sigmoid, softplus};
pub use preference::{build_preference_set, select_pairs};
pub use pseudo::{accumulate_pseudo_labels, build_pseudo_labels, select_pseudo_labels};
pub use records::{
    labeled_from_dialogues, merge_corpora, unlabeled_from_dialogues, LabeledRecord,
    PreferencePair, PseudoLabelRecord, UnlabeledRecord,
};
pub use sft::{load_policy, run_supervised_init, sft_examples, train_sft, SftOutcome};
pub use state::{IterationRecord, RunStatus, TrainingRunState};
pub use store::RunStore;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("record does not render: {0}")]
    Rationale(#[from] RationaleError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no parseable completion after {attempts} attempts: {last_error}")]
    GenerationUnparseable { attempts: usize, last_error: String },
    #[error("context must end with a user turn")]
    ContextOrder,
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("run directory {0} already exists")]
    RunExists(PathBuf),
    #[error("{0}")]
    MissingArtifact(String),
}
