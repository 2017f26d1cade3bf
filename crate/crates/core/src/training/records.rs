use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dialogue::{Context, Dialogue};
use crate::rationale::{render_tagged_target, AblationMask, EnsCotRationale, RationaleError, TaggedTarget};

/// (context, rationale, response) triple of the labelled corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub context: Context,
    pub rationale: EnsCotRationale,
    pub response: String,
}

impl LabeledRecord {
    pub fn target(&self, mask: &AblationMask) -> Result<TaggedTarget, RationaleError> {
        render_tagged_target(&self.rationale, &self.response, mask)
    }
}

/// Context with its ground-truth response but no rationale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlabeledRecord {
    pub context: Context,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context: Context,
    pub preferred: String,
    pub rejected: String,
    pub preferred_similarity: f64,
    /// `None` when the rejected completion had no parseable answer span.
    pub rejected_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub context: Context,
    pub rationale: EnsCotRationale,
    /// Ground-truth response, not the sampled one.
    pub response: String,
    pub similarity: f64,
}

impl PseudoLabelRecord {
    pub fn dedup_key(&self) -> (String, String) {
        (self.context.id.clone(), self.rationale.normalized_text())
    }

    pub fn to_labeled(&self) -> LabeledRecord {
        LabeledRecord {
            context: self.context.clone(),
            rationale: self.rationale.clone(),
            response: self.response.clone(),
        }
    }
}

/// Agent turns whose rationale converts cleanly; others are skipped.
pub fn labeled_from_dialogues(dialogues: &[Dialogue]) -> Vec<LabeledRecord> {
    let mut out = Vec::new();
    for d in dialogues {
        for (context, turn) in d.agent_turns() {
            if let Some(rationale) = turn.rationale.as_ref().and_then(|r| r.to_rationale().ok()) {
                out.push(LabeledRecord {
                    context,
                    rationale,
                    response: turn.utterance.clone(),
                });
            }
        }
    }
    out
}

/// Every agent turn as a (context, response) pair; rationales are ignored.
pub fn unlabeled_from_dialogues(dialogues: &[Dialogue]) -> Vec<UnlabeledRecord> {
    dialogues
        .iter()
        .flat_map(|d| {
            d.agent_turns()
                .map(|(context, turn)| UnlabeledRecord {
                    context,
                    response: turn.utterance.clone(),
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// D_L followed by pseudo-labels that are not already in D_L.
pub fn merge_corpora(labeled: &[LabeledRecord], pseudo: &[PseudoLabelRecord]) -> Vec<LabeledRecord> {
    let mut seen: HashSet<LabeledRecord> = labeled.iter().cloned().collect();
    let mut merged = labeled.to_vec();
    for p in pseudo {
        let record = p.to_labeled();
        if seen.insert(record.clone()) {
            merged.push(record);
        }
    }
    merged
}
