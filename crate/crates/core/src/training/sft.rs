use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{OptimizerSettings, TrainingConfig};
use super::losses::sft_loss;
use super::records::LabeledRecord;
use super::TrainError;
use crate::gateway::{
    BackendFactory, GenerativeBackend, PolicyCheckpoint, Stage, StepSettings, TrainItem,
};
use crate::rationale::TaggedTarget;
use crate::text::stable_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftOutcome {
    pub base: PolicyCheckpoint,
    pub sft: PolicyCheckpoint,
    /// Corpus loss before training and after each epoch.
    pub loss_curve: Vec<f64>,
}

pub fn sft_examples(
    corpus: &[LabeledRecord],
    config: &TrainingConfig,
) -> Result<Vec<(String, TaggedTarget)>, TrainError> {
    corpus
        .iter()
        .map(|r| Ok((r.context.prompt(), r.target(&config.mask)?)))
        .collect()
}

/// Minibatch descent on the mean target NLL.
pub fn train_sft(
    backend: &mut dyn GenerativeBackend,
    examples: &[(String, TaggedTarget)],
    opt: &OptimizerSettings,
    seed: u64,
) -> Result<Vec<f64>, TrainError> {
    let mut curve = vec![sft_loss(backend, examples)?];
    let per_epoch = examples.len().div_ceil(opt.batch_size);
    let total = per_epoch * opt.epochs;
    let mut step = 0;
    for epoch in 0..opt.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stable_hash(&[
            &seed.to_le_bytes(),
            &(epoch as u64).to_le_bytes(),
        ])));
        for chunk in order.chunks(opt.batch_size) {
            let weight = 1.0 / chunk.len() as f64;
            let batch: Vec<TrainItem> = chunk
                .iter()
                .map(|&i| TrainItem {
                    prompt: examples[i].0.clone(),
                    target: examples[i].1.as_str().to_string(),
                    weight,
                })
                .collect();
            let settings = StepSettings {
                learning_rate: opt.learning_rate_at(step, total),
                grad_clip: opt.grad_clip,
            };
            backend.train_step(&batch, &settings)?;
            step += 1;
        }
        curve.push(sft_loss(backend, examples)?);
    }
    Ok(curve)
}

/// Fine-tunes a fresh backend from `factory` on `corpus`.
pub fn run_supervised_init(
    factory: &BackendFactory,
    corpus: &[LabeledRecord],
    config: &TrainingConfig,
    iteration: u32,
) -> Result<SftOutcome, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let examples = sft_examples(corpus, config)?;
    let mut backend = factory();
    let base = PolicyCheckpoint::base(backend.as_ref(), iteration);
    let seed = stable_hash(&[&config.seed.to_le_bytes(), b"sft", &iteration.to_le_bytes()]);
    let loss_curve = train_sft(backend.as_mut(), &examples, &config.sft, seed)?;
    let sft = base.derive(Stage::Sft, iteration, backend.as_ref())?;
    Ok(SftOutcome {
        base,
        sft,
        loss_curve,
    })
}

/// Fresh backend from `factory` holding `checkpoint`'s parameters.
pub fn load_policy(
    factory: &BackendFactory,
    checkpoint: &PolicyCheckpoint,
) -> Result<Box<dyn GenerativeBackend>, TrainError> {
    let mut backend = factory();
    backend.restore(&checkpoint.payload)?;
    Ok(backend)
}
