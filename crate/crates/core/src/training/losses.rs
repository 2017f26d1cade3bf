use super::config::DpoScoring;
use super::records::PreferencePair;
use super::TrainError;
use crate::gateway::{sequence_logprob, GenerativeBackend};

/// log(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log σ(β · gap)` for one pair, where `gap` is the preferred-minus-rejected
/// policy/reference log-ratio difference.
pub fn dpo_pair_loss(gap: f64, beta: f64) -> f64 {
    softplus(-beta * gap)
}

/// Mean over records of the summed token NLL of the target.
pub fn sft_loss<T: AsRef<str>>(
    backend: &dyn GenerativeBackend,
    batch: &[(String, T)],
) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut total = 0.0;
    for (prompt, target) in batch {
        let (_, logprob) = sequence_logprob(backend, prompt, target.as_ref())?;
        total -= logprob;
    }
    Ok(total / batch.len() as f64)
}

pub(crate) fn scored_text(completion: &str, scoring: DpoScoring) -> &str {
    match scoring {
        DpoScoring::FullSequence => completion,
        DpoScoring::RationaleOnly => match completion.find(crate::rationale::CLOSE_RATIONALE) {
            Some(pos) => &completion[..pos + crate::rationale::CLOSE_RATIONALE.len()],
            None => completion,
        },
    }
}

/// Log-ratio gap of one pair.
pub fn pair_gap(
    policy: &dyn GenerativeBackend,
    reference: &dyn GenerativeBackend,
    pair: &PreferencePair,
    scoring: DpoScoring,
) -> Result<f64, TrainError> {
    let prompt = pair.context.prompt();
    let lp = |b: &dyn GenerativeBackend, text: &str| -> Result<f64, TrainError> {
        Ok(sequence_logprob(b, &prompt, scored_text(text, scoring))?.1)
    };
    let preferred = lp(policy, &pair.preferred)? - lp(reference, &pair.preferred)?;
    let rejected = lp(policy, &pair.rejected)? - lp(reference, &pair.rejected)?;
    Ok(preferred - rejected)
}

/// Mean DPO loss over `pairs`.
pub fn dpo_loss(
    policy: &dyn GenerativeBackend,
    reference: &dyn GenerativeBackend,
    pairs: &[PreferencePair],
    beta: f64,
    scoring: DpoScoring,
) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut total = 0.0;
    for pair in pairs {
        total += dpo_pair_loss(pair_gap(policy, reference, pair, scoring)?, beta);
    }
    Ok(total / pairs.len() as f64)
}
