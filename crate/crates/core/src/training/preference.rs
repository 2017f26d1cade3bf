use std::collections::HashSet;

use rayon::prelude::*;

use super::config::TrainingConfig;
use super::records::{PreferencePair, UnlabeledRecord};
use super::TrainError;
use crate::gateway::{response_similarity, Decoding, Embedder, GenerativeBackend, Similarity};
use crate::text::stable_hash;

/// Index pairs (preferred, rejected) for one context's scored completions.
///
/// Preferred: score > `tau1`, best first. Rejected: unparseable (in input
/// order) then score < `tau2`, worst first. Pairs are the cross product in
/// that order, truncated to `cap`.
pub fn select_pairs(
    scored: &[Similarity],
    tau1: f64,
    tau2: f64,
    cap: Option<usize>,
) -> Vec<(usize, usize)> {
    let mut preferred: Vec<(usize, f64)> = scored
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.score().filter(|v| *v > tau1).map(|v| (i, v)))
        .collect();
    preferred.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut rejected: Vec<(usize, f64)> = scored
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match s {
            Similarity::Unparseable => Some((i, f64::NEG_INFINITY)),
            Similarity::Score(v) if *v < tau2 => Some((i, *v)),
            Similarity::Score(_) => None,
        })
        .collect();
    rejected.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let pairs = preferred
        .iter()
        .flat_map(|p| rejected.iter().map(move |r| (p.0, r.0)));
    match cap {
        Some(cap) => pairs.take(cap).collect(),
        None => pairs.collect(),
    }
}

/// Distinct completions in first-seen order.
pub(crate) fn dedup_completions(samples: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    samples
        .into_iter()
        .filter(|s| seen.insert(s.clone()))
        .collect()
}

pub(crate) fn context_decoding(config: &TrainingConfig, seed: u64, context_id: &str) -> Decoding {
    Decoding {
        temperature: config.sample_temperature,
        top_p: config.top_p,
        seed: stable_hash(&[&seed.to_le_bytes(), context_id.as_bytes()]),
    }
}

/// Samples `k` completions per context and pairs them by response similarity.
pub fn build_preference_set(
    policy: &dyn GenerativeBackend,
    embedder: &dyn Embedder,
    corpus: &[UnlabeledRecord],
    config: &TrainingConfig,
    seed: u64,
) -> Result<Vec<PreferencePair>, TrainError> {
    let per_context: Vec<Vec<PreferencePair>> = corpus
        .par_iter()
        .map(|record| -> Result<Vec<PreferencePair>, TrainError> {
            let prompt = record.context.prompt();
            let decoding = context_decoding(config, seed, &record.context.id);
            let samples = dedup_completions(policy.sample(&prompt, &decoding, config.k)?);
            let scored: Vec<Similarity> = samples
                .iter()
                .map(|c| response_similarity(c, &record.response, embedder))
                .collect();
            Ok(select_pairs(&scored, config.tau1, config.tau2, config.pair_cap)
                .into_iter()
                .map(|(p, r)| PreferencePair {
                    context: record.context.clone(),
                    preferred: samples[p].clone(),
                    rejected: samples[r].clone(),
                    preferred_similarity: scored[p].score().unwrap_or(f64::NAN),
                    rejected_similarity: scored[r].score(),
                })
                .collect())
        })
        .collect::<Result<_, _>>()?;
    Ok(per_context.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[f64]) -> Vec<Similarity> {
        v.iter().map(|x| Similarity::Score(*x)).collect()
    }

    #[test]
    fn two_by_two() {
        let pairs = select_pairs(&s(&[0.9, 0.85, 0.6, 0.3, 0.1]), 0.8, 0.4, None);
        assert_eq!(pairs, vec![(0, 4), (0, 3), (1, 4), (1, 3)]);
        assert!(pairs.iter().all(|(p, r)| *p != 2 && *r != 2));
    }

    #[test]
    fn middle_band_gives_nothing() {
        assert!(select_pairs(&s(&[0.5, 0.6, 0.7, 0.45, 0.79]), 0.8, 0.4, None).is_empty());
    }

    #[test]
    fn unparseable_is_rejected_never_preferred() {
        let mut v = s(&[0.95]);
        v.push(Similarity::Unparseable);
        assert_eq!(select_pairs(&v, 0.8, 0.4, None), vec![(0, 1)]);
        assert!(select_pairs(&[Similarity::Unparseable; 3], 0.0, 0.0, None).is_empty());
    }

    #[test]
    fn cap_truncates() {
        let pairs = select_pairs(&s(&[0.9, 0.95, 0.99, 0.1, 0.2]), 0.8, 0.4, Some(4));
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[0], (2, 3));
    }

    #[test]
    fn threshold_boundaries_are_strict() {
        assert!(select_pairs(&s(&[0.8, 0.4]), 0.8, 0.4, None).is_empty());
    }
}
