use std::collections::HashSet;

use rayon::prelude::*;

use super::config::TrainingConfig;
use super::preference::context_decoding;
use super::records::{PseudoLabelRecord, UnlabeledRecord};
use super::TrainError;
use crate::dialogue::Context;
use crate::gateway::{response_similarity, Embedder, GenerativeBackend, Similarity};
use crate::rationale::{parse_with_mask, AblationMask};

/// Keeps completions that parse under `mask` and score above `tau3`, one per
/// distinct normalised rationale.
pub fn select_pseudo_labels(
    context: &Context,
    reference: &str,
    completions: &[(String, Similarity)],
    tau3: f64,
    mask: &AblationMask,
) -> Vec<PseudoLabelRecord> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (text, similarity) in completions {
        let Some(score) = similarity.score().filter(|s| *s > tau3) else {
            continue;
        };
        let Ok((rationale, _)) = parse_with_mask(text, mask) else {
            continue;
        };
        if seen.insert(rationale.normalized_text()) {
            out.push(PseudoLabelRecord {
                context: context.clone(),
                rationale,
                response: reference.to_string(),
                similarity: score,
            });
        }
    }
    out
}

/// Samples `m` completions per context from the refined policy.
pub fn build_pseudo_labels(
    policy: &dyn GenerativeBackend,
    embedder: &dyn Embedder,
    corpus: &[UnlabeledRecord],
    config: &TrainingConfig,
    seed: u64,
) -> Result<Vec<PseudoLabelRecord>, TrainError> {
    let per_context: Vec<Vec<PseudoLabelRecord>> = corpus
        .par_iter()
        .map(|record| -> Result<_, TrainError> {
            let prompt = record.context.prompt();
            let decoding = context_decoding(config, seed, &record.context.id);
            let scored: Vec<(String, Similarity)> = policy
                .sample(&prompt, &decoding, config.m)?
                .into_iter()
                .map(|c| {
                    let s = response_similarity(&c, &record.response, embedder);
                    (c, s)
                })
                .collect();
            Ok(select_pseudo_labels(
                &record.context,
                &record.response,
                &scored,
                config.tau3,
                &config.mask,
            ))
        })
        .collect::<Result<_, _>>()?;
    Ok(per_context.into_iter().flatten().collect())
}

/// Union of pseudo-label sets, first occurrence wins under the dedup key.
pub fn accumulate_pseudo_labels(
    previous: &[PseudoLabelRecord],
    fresh: &[PseudoLabelRecord],
) -> Vec<PseudoLabelRecord> {
    let mut seen = HashSet::new();
    previous
        .iter()
        .chain(fresh)
        .filter(|r| seen.insert(r.dedup_key()))
        .cloned()
        .collect()
}
