//! Pluggable model capabilities: a trainable generator, a text embedder and a
//! chat-completion client, plus the scoring helpers built on them.

mod chat;
mod embed;
mod mock;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rationale::parse_tagged_target;

pub use chat::{ChatClient, ChatError, ChatRequest, FnClient, HttpChatClient, RetryingClient};
pub use embed::{cosine_similarity, Embedder, HashEmbedder, OneHotEmbedder, SimilarityError};
pub use mock::{CompletionScript, MockBackend, MockConfig};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("target tokenizes to zero tokens")]
    EmptyTarget,
    #[error("no completion candidates for prompt {0}")]
    NoCandidates(String),
    #[error("checkpoint payload rejected: {0}")]
    BadPayload(String),
    #[error("stage transition {from} -> {to} is not allowed")]
    StageTransition { from: Stage, to: Stage },
    #[error("backend: {0}")]
    Other(String),
}

/// Decoding parameters for sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl Decoding {
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            seed: 0,
        }
    }
}

/// One weighted sequence in a training batch. The backend lowers
/// `sum(weight * NLL(target | prompt))`; negative weights push likelihood down.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub prompt: String,
    pub target: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSettings {
    pub learning_rate: f64,
    pub grad_clip: f64,
}

/// A trainable text generator treated as a black box.
pub trait GenerativeBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn tokenize(&self, text: &str) -> Vec<String>;
    /// Per-token log-probabilities of `target` given `prompt`.
    fn score(&self, prompt: &str, target: &str) -> Result<Vec<f64>, BackendError>;
    fn sample(
        &self,
        prompt: &str,
        decoding: &Decoding,
        count: usize,
    ) -> Result<Vec<String>, BackendError>;
    fn train_step(&mut self, batch: &[TrainItem], step: &StepSettings) -> Result<(), BackendError>;
    fn snapshot(&self) -> Vec<u8>;
    fn restore(&mut self, payload: &[u8]) -> Result<(), BackendError>;
}

pub type BackendFactory = dyn Fn() -> Box<dyn GenerativeBackend> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Base,
    Sft,
    Dpo,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Base => "base",
            Stage::Sft => "sft",
            Stage::Dpo => "dpo",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub base_model_id: String,
    pub iteration: u32,
    pub stage: Stage,
    /// Id of the checkpoint this one was trained from.
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub provenance: Provenance,
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
}

mod b64 {
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let raw = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(raw)
            .map_err(serde::de::Error::custom)
    }
}

impl PolicyCheckpoint {
    pub fn base(backend: &dyn GenerativeBackend, iteration: u32) -> Self {
        Self {
            provenance: Provenance {
                base_model_id: backend.model_id().to_string(),
                iteration,
                stage: Stage::Base,
                parent: None,
            },
            payload: backend.snapshot(),
        }
    }

    /// `<stage>-<iteration>`, also the file stem under `checkpoints/`.
    pub fn id(&self) -> String {
        format!("{}-{}", self.provenance.stage, self.provenance.iteration)
    }

    /// Checkpoint trained from `self`. Only base→sft and sft→dpo are allowed.
    pub fn derive(
        &self,
        stage: Stage,
        iteration: u32,
        backend: &dyn GenerativeBackend,
    ) -> Result<PolicyCheckpoint, BackendError> {
        let ok = matches!(
            (self.provenance.stage, stage),
            (Stage::Base, Stage::Sft) | (Stage::Sft, Stage::Dpo)
        );
        if !ok {
            return Err(BackendError::StageTransition {
                from: self.provenance.stage,
                to: stage,
            });
        }
        Ok(PolicyCheckpoint {
            provenance: Provenance {
                base_model_id: self.provenance.base_model_id.clone(),
                iteration,
                stage,
                parent: Some(self.id()),
            },
            payload: backend.snapshot(),
        })
    }

    pub fn payload_digest(&self) -> String {
        let h = crate::text::stable_hash(&[&self.payload]);
        format!("{h:016x}")
    }
}

/// Per-token log-probabilities and their sum.
pub fn sequence_logprob(
    backend: &dyn GenerativeBackend,
    prompt: &str,
    target: &str,
) -> Result<(Vec<f64>, f64), BackendError> {
    let per_token = backend.score(prompt, target)?;
    if per_token.is_empty() {
        return Err(BackendError::EmptyTarget);
    }
    let total = per_token.iter().sum();
    Ok((per_token, total))
}

/// Outcome of comparing a sampled completion's answer span to a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Score(f64),
    Unparseable,
}

impl Similarity {
    pub fn score(self) -> Option<f64> {
        match self {
            Similarity::Score(s) => Some(s),
            Similarity::Unparseable => None,
        }
    }
}

/// Cosine similarity between the completion's answer span and `reference`.
/// An all-zero embedding on either side scores 0.
pub fn response_similarity(completion: &str, reference: &str, embedder: &dyn Embedder) -> Similarity {
    match parse_tagged_target(completion) {
        Ok((_, answer)) => Similarity::Score(text_similarity(&answer, reference, embedder)),
        Err(_) => Similarity::Unparseable,
    }
}

pub fn text_similarity(a: &str, b: &str, embedder: &dyn Embedder) -> f64 {
    cosine_similarity(&embedder.embed(a), &embedder.embed(b)).unwrap_or(0.0)
}
