use std::collections::BTreeMap;

use thiserror::Error;

use super::config::TrainingConfig;
use super::dpo::run_dpo;
use super::preference::build_preference_set;
use super::pseudo::{accumulate_pseudo_labels, build_pseudo_labels};
use super::records::{merge_corpora, LabeledRecord, PseudoLabelRecord, UnlabeledRecord};
use super::sft::{load_policy, run_supervised_init};
use super::state::{IterationRecord, RunStatus, TrainingRunState};
use super::store::RunStore;
use super::TrainError;
use crate::gateway::{BackendFactory, Embedder};
use crate::text::stable_hash;

/// A failed run; `state` is what was persisted before the failure.
#[derive(Debug, Error)]
#[error("training run {} failed: {error}", state.run_id)]
pub struct LoopFailure {
    pub state: Box<TrainingRunState>,
    #[source]
    pub error: TrainError,
}

fn round_seed(config: &TrainingConfig, tag: &[u8], iteration: u32) -> u64 {
    stable_hash(&[&config.seed.to_le_bytes(), tag, &iteration.to_le_bytes()])
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Supervised initialisation, then rounds of preference optimisation,
/// pseudo-labelling and supervised retraining from a fresh base model.
pub fn run_iterative_loop(
    factory: &BackendFactory,
    labeled: &[LabeledRecord],
    unlabeled: &[UnlabeledRecord],
    embedder: &dyn Embedder,
    config: &TrainingConfig,
    store: &RunStore,
) -> Result<TrainingRunState, LoopFailure> {
    let mut state = TrainingRunState {
        run_id: store.run_id(),
        seed: config.seed,
        config: config.clone(),
        labeled_size: labeled.len(),
        unlabeled_size: unlabeled.len(),
        iterations: Vec::new(),
        status: RunStatus::Running,
        failure: None,
    };
    match drive(factory, labeled, unlabeled, embedder, config, store, &mut state) {
        Ok(()) => Ok(state),
        Err(error) => {
            state.status = RunStatus::Failed;
            state.failure = Some(error.to_string());
            if let Err(e) = store.save_state(&state) {
                tracing::error!(error = %e, "could not persist failed run state");
            }
            Err(LoopFailure {
                state: Box::new(state),
                error,
            })
        }
    }
}

fn drive(
    factory: &BackendFactory,
    labeled: &[LabeledRecord],
    unlabeled: &[UnlabeledRecord],
    embedder: &dyn Embedder,
    config: &TrainingConfig,
    store: &RunStore,
    state: &mut TrainingRunState,
) -> Result<(), TrainError> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    store.save_state(state)?;

    let init = run_supervised_init(factory, labeled, config, 0)?;
    store.save_checkpoint(&init.base)?;
    store.save_checkpoint(&init.sft)?;
    store.save_iteration_sets(0, &[], &[], labeled)?;
    let mut metrics = BTreeMap::new();
    if let Some(l) = init.loss_curve.last() {
        metrics.insert("sft_loss".to_string(), *l);
    }
    state.iterations.push(IterationRecord {
        iteration: 0,
        base_checkpoint: init.base.id(),
        sft_checkpoint: init.sft.id(),
        dpo_checkpoint: None,
        preference_pairs: 0,
        pseudo_labels: 0,
        merged_size: labeled.len(),
        sft_loss_curve: init.loss_curve,
        dpo_loss_curve: Vec::new(),
        metrics,
    });
    store.save_state(state)?;
    tracing::info!(iteration = 0, "supervised initialisation done");

    let mut previous_sft = init.sft;
    let mut accumulated: Vec<PseudoLabelRecord> = Vec::new();
    let mut converged = false;
    for i in 1..=config.iteration_limit {
        let policy = load_policy(factory, &previous_sft)?;
        let pairs = build_preference_set(
            policy.as_ref(),
            embedder,
            unlabeled,
            config,
            round_seed(config, b"preference", i),
        )?;

        let (dpo_checkpoint, dpo_curve, labeler) = if pairs.is_empty() {
            tracing::warn!(iteration = i, "no preference pairs; skipping DPO this round");
            (None, Vec::new(), policy)
        } else {
            let dpo = run_dpo(factory, &previous_sft, &pairs, config, i)?;
            store.save_checkpoint(&dpo.checkpoint)?;
            let labeler = load_policy(factory, &dpo.checkpoint)?;
            (Some(dpo.checkpoint.id()), dpo.loss_curve, labeler)
        };

        let fresh = build_pseudo_labels(
            labeler.as_ref(),
            embedder,
            unlabeled,
            config,
            round_seed(config, b"pseudo", i),
        )?;
        let round_labels = if config.accumulate_pseudo_labels {
            accumulated = accumulate_pseudo_labels(&accumulated, &fresh);
            accumulated.clone()
        } else {
            fresh.clone()
        };
        let merged = merge_corpora(labeled, &round_labels);
        let sft = run_supervised_init(factory, &merged, config, i)?;
        store.save_checkpoint(&sft.base)?;
        store.save_checkpoint(&sft.sft)?;
        store.save_iteration_sets(i, &pairs, &round_labels, &merged)?;

        let mut metrics = BTreeMap::new();
        if let Some(l) = sft.loss_curve.last() {
            metrics.insert("sft_loss".to_string(), *l);
        }
        if let Some(l) = dpo_curve.last() {
            metrics.insert("dpo_loss".to_string(), *l);
        }
        if let Some(m) = mean(fresh.iter().map(|r| r.similarity)) {
            metrics.insert("pseudo_label_similarity".to_string(), m);
        }
        state.iterations.push(IterationRecord {
            iteration: i,
            base_checkpoint: sft.base.id(),
            sft_checkpoint: sft.sft.id(),
            dpo_checkpoint,
            preference_pairs: pairs.len(),
            pseudo_labels: round_labels.len(),
            merged_size: merged.len(),
            sft_loss_curve: sft.loss_curve,
            dpo_loss_curve: dpo_curve,
            metrics,
        });
        store.save_state(state)?;
        tracing::info!(
            iteration = i,
            pairs = pairs.len(),
            pseudo_labels = fresh.len(),
            merged = merged.len(),
            "round done"
        );
        previous_sft = sft.sft;

        if (fresh.len() as f64) < config.convergence_fraction * unlabeled.len() as f64 {
            converged = true;
            break;
        }
    }
    state.status = if converged {
        RunStatus::Converged
    } else {
        RunStatus::Completed
    };
    store.save_state(state)?;
    Ok(())
}
