use std::collections::BTreeMap;

use super::EvalError;
use crate::catalog::{EmotionLabel, StrategyLabel};
use crate::gateway::{cosine_similarity, Embedder};

const BUNDLED_EXEMPLARS: &str = include_str!("../../data/strategy_exemplars.json");

/// Scores the emotion a rationale perceived against the reference, in [0, 1].
pub trait EmotionJudge: Send + Sync {
    fn judge(&self, predicted: Option<EmotionLabel>, reference: EmotionLabel) -> f64;
}

/// Scores whether a response realises its declared strategy, in [0, 1].
pub trait StrategyJudge: Send + Sync {
    fn judge(&self, strategy: StrategyLabel, response: &str) -> f64;
}

/// 1 on an exact label match, else 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactEmotionJudge;

impl EmotionJudge for ExactEmotionJudge {
    fn judge(&self, predicted: Option<EmotionLabel>, reference: EmotionLabel) -> f64 {
        if predicted == Some(reference) {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-strategy example responses.
pub fn bundled_strategy_exemplars() -> BTreeMap<StrategyLabel, Vec<String>> {
    parse_strategy_exemplars(BUNDLED_EXEMPLARS).expect("bundled exemplars are well formed")
}

pub fn parse_strategy_exemplars(json: &str) -> Result<BTreeMap<StrategyLabel, Vec<String>>, EvalError> {
    let raw: BTreeMap<String, Vec<String>> =
        serde_json::from_str(json).map_err(|e| EvalError::Exemplars(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (k, v) in raw {
        let label: StrategyLabel = k.parse().map_err(|e: crate::catalog::CatalogError| EvalError::Exemplars(e.to_string()))?;
        if v.is_empty() {
            return Err(EvalError::Exemplars(format!("no exemplars for {label}")));
        }
        out.insert(label, v);
    }
    Ok(out)
}

/// Nearest-centroid judge: 1 when the response embedding is strictly closer to
/// the declared strategy's centroid than to every other centroid.
pub struct CentroidStrategyJudge<E: Embedder> {
    embedder: E,
    centroids: Vec<(StrategyLabel, Vec<f64>)>,
}

impl<E: Embedder> CentroidStrategyJudge<E> {
    pub fn new(embedder: E, exemplars: &BTreeMap<StrategyLabel, Vec<String>>) -> Self {
        let centroids = exemplars
            .iter()
            .map(|(label, texts)| {
                let mut c = vec![0.0; embedder.dim()];
                for t in texts {
                    for (a, b) in c.iter_mut().zip(embedder.embed(t)) {
                        *a += b;
                    }
                }
                for a in &mut c {
                    *a /= texts.len() as f64;
                }
                (*label, c)
            })
            .collect();
        Self { embedder, centroids }
    }

    pub fn with_bundled(embedder: E) -> Self {
        Self::new(embedder, &bundled_strategy_exemplars())
    }

    /// Cosine similarity to every centroid.
    pub fn similarities(&self, response: &str) -> Vec<(StrategyLabel, f64)> {
        let v = self.embedder.embed(response);
        self.centroids
            .iter()
            .map(|(l, c)| (*l, cosine_similarity(&v, c).unwrap_or(0.0)))
            .collect()
    }
}

impl<E: Embedder> StrategyJudge for CentroidStrategyJudge<E> {
    fn judge(&self, strategy: StrategyLabel, response: &str) -> f64 {
        let sims = self.similarities(response);
        let Some(own) = sims.iter().find(|(l, _)| *l == strategy).map(|(_, s)| *s) else {
            return 0.0;
        };
        if sims.iter().all(|(l, s)| *l == strategy || *s < own) {
            1.0
        } else {
            0.0
        }
    }
}

/// Mean judge score; `None` when there are no records.
pub fn emotion_appropriateness(
    records: &[(Option<EmotionLabel>, EmotionLabel)],
    judge: &dyn EmotionJudge,
) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let sum: f64 = records.iter().map(|(p, r)| judge.judge(*p, *r)).sum();
    Some(sum / records.len() as f64)
}

/// Mean judge score; `None` (insufficient data) when there are no records.
pub fn strategy_consistency(
    records: &[(StrategyLabel, String)],
    judge: &dyn StrategyJudge,
) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let sum: f64 = records.iter().map(|(s, r)| judge.judge(*s, r)).sum();
    Some(sum / records.len() as f64)
}
