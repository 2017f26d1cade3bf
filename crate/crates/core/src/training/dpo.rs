use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use super::losses::{dpo_loss, pair_gap, scored_text, sigmoid};
use super::records::PreferencePair;
use super::sft::load_policy;
use super::TrainError;
use crate::gateway::{BackendFactory, PolicyCheckpoint, Stage, StepSettings, TrainItem};
use crate::text::stable_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoOutcome {
    pub checkpoint: PolicyCheckpoint,
    /// Loss over all pairs before training and after each epoch.
    pub loss_curve: Vec<f64>,
}

/// Preference optimisation starting from, and referenced against, `sft`.
pub fn run_dpo(
    factory: &BackendFactory,
    sft: &PolicyCheckpoint,
    pairs: &[PreferencePair],
    config: &TrainingConfig,
    iteration: u32,
) -> Result<DpoOutcome, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let reference = load_policy(factory, sft)?;
    let mut policy = load_policy(factory, sft)?;
    let beta = config.beta;
    let scoring = config.dpo_scoring;
    let opt = &config.dpo;

    let mut curve = vec![dpo_loss(policy.as_ref(), reference.as_ref(), pairs, beta, scoring)?];
    let per_epoch = pairs.len().div_ceil(opt.batch_size);
    let total = per_epoch * opt.epochs;
    let seed = stable_hash(&[&config.seed.to_le_bytes(), b"dpo", &iteration.to_le_bytes()]);
    let mut step = 0;
    for epoch in 0..opt.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stable_hash(&[
            &seed.to_le_bytes(),
            &(epoch as u64).to_le_bytes(),
        ])));
        for chunk in order.chunks(opt.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len() * 2);
            for &i in chunk {
                let pair = &pairs[i];
                let gap = pair_gap(policy.as_ref(), reference.as_ref(), pair, scoring)?;
                // d/d(NLL_preferred) of -log σ(β·gap), averaged over the batch.
                let w = beta * sigmoid(-beta * gap) / chunk.len() as f64;
                let prompt = pair.context.prompt();
                batch.push(TrainItem {
                    prompt: prompt.clone(),
                    target: scored_text(&pair.preferred, scoring).to_string(),
                    weight: w,
                });
                batch.push(TrainItem {
                    prompt,
                    target: scored_text(&pair.rejected, scoring).to_string(),
                    weight: -w,
                });
            }
            let settings = StepSettings {
                learning_rate: opt.learning_rate_at(step, total),
                grad_clip: opt.grad_clip,
            };
            policy.train_step(&batch, &settings)?;
            step += 1;
        }
        curve.push(dpo_loss(policy.as_ref(), reference.as_ref(), pairs, beta, scoring)?);
    }
    let checkpoint = sft.derive(Stage::Dpo, iteration, policy.as_ref())?;
    Ok(DpoOutcome {
        checkpoint,
        loss_curve: curve,
    })
}
