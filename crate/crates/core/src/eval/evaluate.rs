use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::judges::{emotion_appropriateness, strategy_consistency, EmotionJudge, StrategyJudge};
use super::metrics::{bleu4, distinct3, embedding_f1, perplexity, response_length, EvalRecord, PerplexityScope};
use super::report::MetricReport;
use super::EvalError;
use crate::catalog::{EmotionLabel, StrategyLabel};
use crate::gateway::{Embedder, GenerativeBackend};
use crate::text::stable_hash;
use crate::training::{generate_agent_turn, AgentTurn, GenerationSettings, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub corpus_id: String,
    pub generation: GenerationSettings,
    pub perplexity_scope: PerplexityScope,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            corpus_id: "test".to_string(),
            generation: GenerationSettings {
                temperature: 0.0,
                ..GenerationSettings::default()
            },
            perplexity_scope: PerplexityScope::ResponseOnly,
        }
    }
}

/// A generated turn for one record; `None` when no attempt parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedTurn {
    pub context_id: String,
    pub turn: Option<AgentTurn>,
}

pub struct Judges<'a> {
    pub embedder: &'a dyn Embedder,
    pub emotion: &'a dyn EmotionJudge,
    pub strategy: &'a dyn StrategyJudge,
}

/// Generates one agent turn per record and scores the lot.
pub fn evaluate_policy(
    policy: &dyn GenerativeBackend,
    policy_id: &str,
    records: &[EvalRecord],
    judges: &Judges<'_>,
    settings: &EvalSettings,
) -> Result<(MetricReport, Vec<GeneratedTurn>), EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyBatch);
    }
    let generated: Vec<GeneratedTurn> = records
        .par_iter()
        .map(|r| {
            let gen = GenerationSettings {
                seed: stable_hash(&[
                    &settings.generation.seed.to_le_bytes(),
                    r.context.id.as_bytes(),
                ]),
                ..settings.generation.clone()
            };
            match generate_agent_turn(policy, &r.context, &gen) {
                Ok(turn) => Ok(GeneratedTurn { context_id: r.context.id.clone(), turn: Some(turn) }),
                Err(TrainError::GenerationUnparseable { .. }) => {
                    Ok(GeneratedTurn { context_id: r.context.id.clone(), turn: None })
                }
                Err(e) => Err(EvalError::Train(Box::new(e))),
            }
        })
        .collect::<Result<_, _>>()?;

    let candidates: Vec<&str> = generated
        .iter()
        .map(|g| g.turn.as_ref().map_or("", |t| t.response.as_str()))
        .collect();
    let references: Vec<&str> = records.iter().map(|r| r.response.as_str()).collect();

    let emotions: Vec<(Option<EmotionLabel>, EmotionLabel)> = records
        .iter()
        .zip(&generated)
        .filter_map(|(r, g)| {
            r.reference_emotion
                .map(|e| (g.turn.as_ref().and_then(|t| t.rationale.emotion), e))
        })
        .collect();
    let strategies: Vec<(StrategyLabel, String)> = generated
        .iter()
        .filter_map(|g| g.turn.as_ref())
        .filter_map(|t| t.strategy.map(|s| (s, t.response.clone())))
        .collect();

    let report = MetricReport {
        corpus_id: settings.corpus_id.clone(),
        policy_id: policy_id.to_string(),
        ppl: perplexity(policy, records, settings.perplexity_scope)?,
        b4: bleu4(&candidates, &references)?,
        d3: distinct3(&candidates),
        bsf1: embedding_f1(&candidates, &references, judges.embedder)?,
        rlen: response_length(&candidates),
        ea: emotion_appropriateness(&emotions, judges.emotion),
        ensc: strategy_consistency(&strategies, judges.strategy),
        samples: records.len(),
        seed: settings.generation.seed,
        unparseable: generated.iter().filter(|g| g.turn.is_none()).count(),
    };
    Ok((report, generated))
}
