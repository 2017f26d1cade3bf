//! Deterministic desk-scale backend.
//!
//! A hashed-vocabulary bigram softmax model. Scoring is closed form, training
//! is plain gradient descent on the weighted NLL, and sampling chooses among
//! scripted completions (looked up by prompt hash) according to the model's
//! own scores, so training visibly shifts what gets sampled.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendError, Decoding, GenerativeBackend, StepSettings, TrainItem};
use crate::text::{prompt_key, stable_hash};

const MAGIC: &[u8; 4] = b"ENSM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    pub model_id: String,
    pub vocab_size: usize,
    /// Half-width of the uniform initialisation; 0 gives a uniform model.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            model_id: "mock-bigram".into(),
            vocab_size: 128,
            init_scale: 0.01,
            seed: 0,
        }
    }
}

/// Candidate completions keyed by prompt hash, with a fallback list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompletionScript {
    pub entries: BTreeMap<String, Vec<String>>,
    pub fallback: Vec<String>,
}

impl CompletionScript {
    pub fn with_fallback(fallback: Vec<String>) -> Self {
        Self {
            entries: BTreeMap::new(),
            fallback,
        }
    }

    pub fn insert(&mut self, prompt: &str, completions: Vec<String>) {
        self.entries.insert(prompt_key(prompt), completions);
    }

    pub fn candidates(&self, prompt: &str) -> &[String] {
        self.entries
            .get(&prompt_key(prompt))
            .map(Vec::as_slice)
            .unwrap_or(&self.fallback)
    }
}

pub struct MockBackend {
    config: MockConfig,
    script: Arc<CompletionScript>,
    /// (vocab + 1) rows of `vocab` logits; the last row follows BOS.
    logits: Vec<f64>,
}

fn token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"</?[RA]>|[\p{L}\p{N}']+|[^\s\p{L}\p{N}]").expect("regex"))
}

impl MockBackend {
    pub fn new(config: MockConfig, script: Arc<CompletionScript>) -> Self {
        let v = config.vocab_size.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let logits = (0..(v + 1) * v)
            .map(|_| {
                if config.init_scale == 0.0 {
                    0.0
                } else {
                    rng.random_range(-config.init_scale..=config.init_scale)
                }
            })
            .collect();
        Self {
            config: MockConfig {
                vocab_size: v,
                ..config
            },
            script,
            logits,
        }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    pub fn script(&self) -> &Arc<CompletionScript> {
        &self.script
    }

    fn vocab(&self) -> usize {
        self.config.vocab_size
    }

    fn ids(&self, text: &str) -> Vec<usize> {
        let v = self.vocab() as u64;
        token_regex()
            .find_iter(text)
            .map(|m| (stable_hash(&[m.as_str().as_bytes()]) % v) as usize)
            .collect()
    }

    fn row(&self, prev: usize) -> &[f64] {
        let v = self.vocab();
        &self.logits[prev * v..(prev + 1) * v]
    }

    fn softmax(&self, prev: usize) -> Vec<f64> {
        let row = self.row(prev);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    fn log_prob(&self, prev: usize, token: usize) -> f64 {
        let row = self.row(prev);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row[token] - lse
    }

    /// (previous-token row, target token) transitions scored for `target`.
    fn transitions(&self, prompt: &str, target: &str) -> Vec<(usize, usize)> {
        let mut prev = self.ids(prompt).last().copied().unwrap_or(self.vocab());
        self.ids(target)
            .into_iter()
            .map(|t| {
                let step = (prev, t);
                prev = t;
                step
            })
            .collect()
    }

    fn mean_logprob(&self, prompt: &str, target: &str) -> f64 {
        let steps = self.transitions(prompt, target);
        if steps.is_empty() {
            return f64::NEG_INFINITY;
        }
        steps.iter().map(|&(p, t)| self.log_prob(p, t)).sum::<f64>() / steps.len() as f64
    }
}

impl GenerativeBackend for MockBackend {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        token_regex()
            .find_iter(text)
            .map(|m| m.as_str().to_string())
            .collect()
    }

    fn score(&self, prompt: &str, target: &str) -> Result<Vec<f64>, BackendError> {
        Ok(self
            .transitions(prompt, target)
            .into_iter()
            .map(|(p, t)| self.log_prob(p, t))
            .collect())
    }

    fn sample(
        &self,
        prompt: &str,
        decoding: &Decoding,
        count: usize,
    ) -> Result<Vec<String>, BackendError> {
        let candidates = self.script.candidates(prompt);
        if candidates.is_empty() {
            return Err(BackendError::NoCandidates(prompt_key(prompt)));
        }
        let scores: Vec<f64> = candidates
            .iter()
            .map(|c| self.mean_logprob(prompt, c))
            .collect();
        if decoding.temperature <= 0.0 {
            let mut best = 0;
            for (i, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = i;
                }
            }
            return Ok(vec![candidates[best].clone(); count]);
        }

        let finite_max = scores
            .iter()
            .cloned()
            .filter(|s| s.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<(usize, f64)> = scores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let w = if s.is_finite() {
                    ((s - finite_max) / decoding.temperature).exp()
                } else {
                    0.0
                };
                (i, w)
            })
            .collect();
        let total: f64 = probs.iter().map(|p| p.1).sum();
        if total <= 0.0 {
            return Err(BackendError::NoCandidates(prompt_key(prompt)));
        }
        probs.iter_mut().for_each(|p| p.1 /= total);
        probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut nucleus = Vec::new();
        let mut mass = 0.0;
        for p in probs {
            nucleus.push(p);
            mass += p.1;
            if mass >= decoding.top_p {
                break;
            }
        }
        let dist = WeightedIndex::new(nucleus.iter().map(|p| p.1))
            .map_err(|e| BackendError::Other(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[
            &decoding.seed.to_le_bytes(),
            prompt.as_bytes(),
        ]));
        Ok((0..count)
            .map(|_| candidates[nucleus[dist.sample(&mut rng)].0].clone())
            .collect())
    }

    fn train_step(&mut self, batch: &[TrainItem], step: &StepSettings) -> Result<(), BackendError> {
        // Identical sequences are merged first so that opposite weights cancel
        // exactly.
        let mut merged: Vec<(&str, &str, f64)> = Vec::new();
        let mut index: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for item in batch {
            let key = (item.prompt.as_str(), item.target.as_str());
            match index.get(&key) {
                Some(&i) => merged[i].2 += item.weight,
                None => {
                    index.insert(key, merged.len());
                    merged.push((key.0, key.1, item.weight));
                }
            }
        }

        let v = self.vocab();
        let mut grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut probs: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (prompt, target, weight) in merged {
            if weight == 0.0 {
                continue;
            }
            for (prev, tok) in self.transitions(prompt, target) {
                let p = probs.entry(prev).or_insert_with(|| self.softmax(prev));
                let g = grads.entry(prev).or_insert_with(|| vec![0.0; v]);
                for (j, pj) in p.iter().enumerate() {
                    let indicator = if j == tok { 1.0 } else { 0.0 };
                    g[j] += weight * (pj - indicator);
                }
            }
        }
        let norm = grads
            .values()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let scale = if step.grad_clip > 0.0 && norm > step.grad_clip {
            step.grad_clip / norm
        } else {
            1.0
        };
        for (row, g) in grads {
            let base = row * v;
            for (j, gj) in g.into_iter().enumerate() {
                self.logits[base + j] -= step.learning_rate * scale * gj;
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.logits.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.vocab() as u64).to_le_bytes());
        for x in &self.logits {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    fn restore(&mut self, payload: &[u8]) -> Result<(), BackendError> {
        if payload.len() < 12 || &payload[..4] != MAGIC {
            return Err(BackendError::BadPayload("not a mock checkpoint".into()));
        }
        let v = u64::from_le_bytes(payload[4..12].try_into().expect("8 bytes")) as usize;
        if v != self.vocab() || payload.len() != 12 + (v + 1) * v * 8 {
            return Err(BackendError::BadPayload(format!(
                "vocabulary {v} does not match backend vocabulary {}",
                self.vocab()
            )));
        }
        self.logits = payload[12..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(())
    }
}
