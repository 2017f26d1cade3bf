use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dialogue::{Context, Dialogue, Speaker};
use crate::catalog::EmotionLabel;
use crate::gateway::{cosine_similarity, Embedder, GenerativeBackend};
use crate::rationale::{render_tagged_target, AblationMask, TaggedTarget};
use crate::text::eval_tokens;

/// One held-out agent turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub context: Context,
    pub response: String,
    /// Reference target when the turn carries a rationale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TaggedTarget>,
    /// Emotion of the user turn being answered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_emotion: Option<EmotionLabel>,
}

/// Every agent turn that answers a user turn. Targets are rendered under `mask`;
/// turns whose rationale does not render keep `target: None`.
pub fn eval_records_from_dialogues(dialogues: &[Dialogue], mask: &AblationMask) -> Vec<EvalRecord> {
    let mut out = Vec::new();
    for d in dialogues {
        for (i, turn) in d.turns.iter().enumerate() {
            if turn.speaker != Speaker::Agent || i == 0 || d.turns[i - 1].speaker != Speaker::User {
                continue;
            }
            let target = turn
                .rationale
                .as_ref()
                .and_then(|r| r.to_rationale().ok())
                .and_then(|r| render_tagged_target(&r, &turn.utterance, mask).ok());
            out.push(EvalRecord {
                context: d.context_at(i),
                response: turn.utterance.clone(),
                target,
                reference_emotion: d.user_emotion_before(i),
            });
        }
    }
    out
}

/// Which tokens perplexity is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerplexityScope {
    /// Answer span only, conditioned on the reference rationale when present.
    #[default]
    ResponseOnly,
    /// The whole tagged target; records without one fall back to the response.
    WithRationale,
}

/// exp of the token-weighted mean NLL.
pub fn perplexity(
    backend: &dyn GenerativeBackend,
    records: &[EvalRecord],
    scope: PerplexityScope,
) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyBatch);
    }
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for r in records {
        let prompt = r.context.prompt();
        let lps = match (&r.target, scope) {
            (Some(t), PerplexityScope::ResponseOnly) => {
                backend.score(&format!("{prompt}\n{}", t.rationale_prefix()), &r.response)?
            }
            (Some(t), PerplexityScope::WithRationale) => backend.score(&prompt, t.as_str())?,
            (None, _) => backend.score(&prompt, &r.response)?,
        };
        tokens += lps.len();
        nll -= lps.iter().sum::<f64>();
    }
    if tokens == 0 {
        return Err(EvalError::EmptyBatch);
    }
    Ok((nll / tokens as f64).exp())
}

fn check_aligned(candidates: usize, references: usize) -> Result<(), EvalError> {
    if candidates != references {
        return Err(EvalError::LengthMismatch {
            candidates,
            references,
        });
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Corpus BLEU-4 with uniform weights and a brevity penalty. A zero match
/// count at order n >= 2 is smoothed to 1 / (candidate n-grams + 1).
pub fn bleu4<S: AsRef<str>, R: AsRef<str>>(candidates: &[S], references: &[R]) -> Result<f64, EvalError> {
    check_aligned(candidates.len(), references.len())?;
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        let c = eval_tokens(c.as_ref());
        let r = eval_tokens(r.as_ref());
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(&r, n);
            for (g, k) in ngram_counts(&c, n) {
                matches[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if cand_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if matches[n] == 0 {
            1.0 / (totals[n] + 1) as f64
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok((bp * (log_sum / 4.0).exp()).clamp(0.0, 1.0))
}

/// Unique trigrams over all trigrams, pooled across utterances. No trigrams gives 0.
pub fn distinct3<S: AsRef<str>>(candidates: &[S]) -> f64 {
    let mut unique = HashSet::new();
    let mut total = 0usize;
    for c in candidates {
        let toks = eval_tokens(c.as_ref());
        for g in toks.windows(3) {
            unique.insert(g.to_vec());
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        unique.len() as f64 / total as f64
    }
}

/// Greedy token matching F1 for one pair. Two empty texts score 1, one empty text 0.
pub fn pair_embedding_f1(candidate: &str, reference: &str, embedder: &dyn Embedder) -> f64 {
    let c: Vec<Vec<f64>> = eval_tokens(candidate).iter().map(|t| embedder.embed(t)).collect();
    let r: Vec<Vec<f64>> = eval_tokens(reference).iter().map(|t| embedder.embed(t)).collect();
    match (c.is_empty(), r.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let sim: Vec<Vec<f64>> = c
        .iter()
        .map(|u| {
            r.iter()
                .map(|v| cosine_similarity(u, v).unwrap_or(0.0).max(0.0))
                .collect()
        })
        .collect();
    let precision = sim
        .iter()
        .map(|row| row.iter().cloned().fold(0.0, f64::max))
        .sum::<f64>()
        / c.len() as f64;
    let recall = (0..r.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(0.0, f64::max))
        .sum::<f64>()
        / r.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        (2.0 * precision * recall / (precision + recall)).clamp(0.0, 1.0)
    }
}

/// Corpus mean of [`pair_embedding_f1`]; an empty corpus gives 0.
pub fn embedding_f1<S: AsRef<str>, R: AsRef<str>>(
    candidates: &[S],
    references: &[R],
    embedder: &dyn Embedder,
) -> Result<f64, EvalError> {
    check_aligned(candidates.len(), references.len())?;
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| pair_embedding_f1(c.as_ref(), r.as_ref(), embedder))
        .sum();
    Ok(sum / candidates.len() as f64)
}

/// Mean token count; 0 for no candidates.
pub fn response_length<S: AsRef<str>>(candidates: &[S]) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    let total: usize = candidates.iter().map(|c| eval_tokens(c.as_ref()).len()).sum();
    total as f64 / candidates.len() as f64
}
