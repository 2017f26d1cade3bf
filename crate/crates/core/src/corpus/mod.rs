//! Scenario pools, dialogue corpora, quality filtering and splits.

mod synthesis;
mod template;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::Dialogue;
use crate::gateway::ChatError;
use crate::jsonl::JsonlError;
use crate::text::normalize_for_dedup;

pub use synthesis::{
    expand_scenarios, format_transcript, generate_scenarios, parse_transcript, synthesize_corpus,
    synthesize_dialogue, ScenarioBatch, SynthesisDecoding, SynthesisError, SynthesisProvenance,
    SynthesizedDialogue,
};
pub use template::{PromptTemplate, TemplateError, ADHERENCE_SENTENCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    JobInterview,
    ResourceAllocation,
    Other,
}

impl DomainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::JobInterview => "job_interview",
            DomainTag::ResourceAllocation => "resource_allocation",
            DomainTag::Other => "other",
        }
    }

    /// Unknown tags map to `Other`.
    pub fn parse(raw: &str) -> DomainTag {
        match raw.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "job_interview" | "job" => DomainTag::JobInterview,
            "resource_allocation" | "resource" => DomainTag::ResourceAllocation,
            _ => DomainTag::Other,
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioOrigin {
    Seeded,
    Expanded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub text: String,
    pub domain_tag: DomainTag,
    pub provenance: ScenarioOrigin,
}

pub const MIN_SCENARIO_WORDS: usize = 20;

/// Mechanical stand-in for "enough information, complete sentences": at
/// least 20 words and a terminal sentence boundary.
pub fn is_adequate_scenario(text: &str) -> bool {
    let text = text.trim();
    let words = text.split_whitespace().count();
    let last = text
        .trim_end_matches(['"', '\'', ')', '”', '’'])
        .chars()
        .last();
    words >= MIN_SCENARIO_WORDS && matches!(last, Some('.' | '!' | '?'))
}

/// Keeps the first scenario of each normalised-text class.
pub fn dedup_scenarios(pool: Vec<Scenario>) -> Vec<Scenario> {
    let mut seen = HashSet::new();
    pool.into_iter()
        .filter(|s| seen.insert(normalize_for_dedup(&s.text)))
        .collect()
}

/// One scenario id per line; blank lines and `#` comments ignored.
pub fn read_reject_list(path: &Path) -> std::io::Result<BTreeSet<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub fn apply_reject_list(pool: Vec<Scenario>, rejected: &BTreeSet<String>) -> Vec<Scenario> {
    pool.into_iter().filter(|s| !rejected.contains(&s.id)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Criterion {
    EI,
    SA,
    IN,
    F,
    C,
    N,
    I,
}

impl Criterion {
    pub const ALL: [Criterion; 7] = [
        Criterion::EI,
        Criterion::SA,
        Criterion::IN,
        Criterion::F,
        Criterion::C,
        Criterion::N,
        Criterion::I,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityRating {
    pub dialogue_id: String,
    pub rater_id: String,
    pub scores: BTreeMap<Criterion, u8>,
}

impl QualityRating {
    pub fn uniform(dialogue_id: &str, rater_id: &str, score: u8) -> Self {
        Self {
            dialogue_id: dialogue_id.into(),
            rater_id: rater_id.into(),
            scores: Criterion::ALL.iter().map(|c| (*c, score)).collect(),
        }
    }

    pub fn check(&self) -> Result<(), CorpusError> {
        for c in Criterion::ALL {
            match self.scores.get(&c) {
                Some(s) if (1..=5).contains(s) => {}
                Some(s) => {
                    return Err(CorpusError::InvalidRating(format!(
                        "{} by {}: {c:?} = {s}",
                        self.dialogue_id, self.rater_id
                    )))
                }
                None => {
                    return Err(CorpusError::InvalidRating(format!(
                        "{} by {}: {c:?} missing",
                        self.dialogue_id, self.rater_id
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("dialogue {0} has no rating")]
    MissingRating(String),
    #[error("invalid rating: {0}")]
    InvalidRating(String),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    Ratio((f64, f64, f64)),
    #[error(transparent)]
    Client(#[from] ChatError),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub dialogue_id: String,
    pub means: BTreeMap<Criterion, f64>,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub retained: Vec<Dialogue>,
    pub decisions: Vec<FilterDecision>,
}

pub const DEFAULT_QUALITY_THRESHOLD: f64 = 3.0;

/// Keeps dialogues whose per-criterion mean over all raters is at least
/// `threshold` on every criterion. Retained dialogues carry those means in
/// `quality_ratings`.
pub fn filter_corpus(
    dialogues: &[Dialogue],
    ratings: &[QualityRating],
    threshold: f64,
) -> Result<FilterOutcome, CorpusError> {
    let mut by_dialogue: BTreeMap<&str, Vec<&QualityRating>> = BTreeMap::new();
    for r in ratings {
        r.check()?;
        by_dialogue.entry(r.dialogue_id.as_str()).or_default().push(r);
    }
    let mut outcome = FilterOutcome {
        retained: Vec::new(),
        decisions: Vec::new(),
    };
    for d in dialogues {
        let rs = by_dialogue
            .get(d.id.as_str())
            .ok_or_else(|| CorpusError::MissingRating(d.id.clone()))?;
        let means: BTreeMap<Criterion, f64> = Criterion::ALL
            .iter()
            .map(|c| {
                let sum: f64 = rs.iter().map(|r| f64::from(r.scores[c])).sum();
                (*c, sum / rs.len() as f64)
            })
            .collect();
        let retained = means.values().all(|m| *m >= threshold);
        if retained {
            let mut kept = d.clone();
            kept.quality_ratings = Some(
                means
                    .iter()
                    .map(|(c, m)| (format!("{c:?}"), *m))
                    .collect(),
            );
            outcome.retained.push(kept);
        }
        outcome.decisions.push(FilterDecision {
            dialogue_id: d.id.clone(),
            means,
            retained,
        });
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle then cut at rounded ratio boundaries; test takes the rest.
pub fn split_corpus<T: Clone>(
    items: &[T],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Splits<T>, CorpusError> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(CorpusError::Ratio(ratios));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (((n as f64) * a).round() as usize).min(n);
    let n_dev = (((n as f64) * b).round() as usize).min(n - n_train);
    let pick = |range: std::ops::Range<usize>| -> Vec<T> {
        order[range].iter().map(|&i| items[i].clone()).collect()
    };
    Ok(Splits {
        train: pick(0..n_train),
        dev: pick(n_train..n_train + n_dev),
        test: pick(n_train + n_dev..n),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub split: String,
    pub dialogues: usize,
    pub utterances: usize,
    pub mean_utterances: f64,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} dialogues, {} utterances, {:.2} per dialogue",
            self.split, self.dialogues, self.utterances, self.mean_utterances
        )
    }
}

pub fn corpus_stats(split: &str, corpus: &[Dialogue]) -> CorpusStats {
    let utterances: usize = corpus.iter().map(Dialogue::utterance_count).sum();
    CorpusStats {
        split: split.into(),
        dialogues: corpus.len(),
        utterances,
        mean_utterances: if corpus.is_empty() {
            0.0
        } else {
            utterances as f64 / corpus.len() as f64
        },
    }
}
