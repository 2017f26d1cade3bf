//! Scenario and dialogue synthesis through a chat-completion client.
//!
//! Transcripts exchanged with the generator use one line per turn:
//!
//! ```text
//! User [anxiety]: I was hoping for a higher base salary.
//! <R> The user feels anxiety. ... Agent: I understand. </R> <A> I understand. </A>
//! ```

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::template::{PromptTemplate, TemplateError};
use super::{dedup_scenarios, is_adequate_scenario, DomainTag, Scenario, ScenarioOrigin};
use crate::catalog::{EmotionLabel, StrategyLabel};
use crate::dialogue::{validate_dialogue, Dialogue, Speaker, Turn, ValidationReport};
use crate::gateway::{ChatClient, ChatError, ChatRequest};
use crate::rationale::{
    parse_with_mask, render_tagged_target, AblationMask, Component, RationaleError,
};
use crate::text::normalize_for_dedup;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("{context}: {source}")]
    Client {
        context: String,
        #[source]
        source: ChatError,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("expansion needs at least 3 scenario/dialogue exemplars, got {0}")]
    Exemplars(usize),
    #[error("turn {turn}: {detail}")]
    Parse {
        turn: usize,
        component: Option<Component>,
        detail: String,
        raw: String,
    },
    #[error("synthesized dialogue failed validation: {}", report.violations.len())]
    Invalid {
        report: ValidationReport,
        raw: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisDecoding {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for SynthesisDecoding {
    fn default() -> Self {
        Self {
            temperature: 0.9,
            top_p: 0.95,
        }
    }
}

impl SynthesisDecoding {
    fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest {
            prompt,
            temperature: self.temperature,
            top_p: self.top_p,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioBatch {
    pub scenarios: Vec<Scenario>,
    pub empty_skipped: usize,
    pub inadequate: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisProvenance {
    pub scenario_id: String,
    pub template: String,
    pub temperature: f64,
    pub top_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedDialogue {
    pub dialogue: Dialogue,
    pub provenance: SynthesisProvenance,
}

/// Renders a dialogue in the line-per-turn transcript format. Agent turns
/// without a rationale are written as plain `Agent: ...` lines.
pub fn format_transcript(dialogue: &Dialogue) -> String {
    let mut lines = Vec::new();
    for turn in &dialogue.turns {
        match turn.speaker {
            Speaker::User => match &turn.emotion {
                Some(e) => lines.push(format!("User [{}]: {}", e, turn.utterance)),
                None => lines.push(format!("User: {}", turn.utterance)),
            },
            Speaker::Agent => {
                let tagged = turn
                    .rationale
                    .as_ref()
                    .and_then(|r| r.to_rationale().ok())
                    .and_then(|r| render_tagged_target(&r, &turn.utterance, &AblationMask::full()).ok());
                match tagged {
                    Some(t) => lines.push(t.into_string()),
                    None => lines.push(format!("Agent: {}", turn.utterance)),
                }
            }
        }
    }
    lines.join("\n")
}

fn user_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^User\s*(?:\[([^\]]*)\])?\s*:\s*(.+)$").expect("regex"))
}

fn component_of(err: &RationaleError) -> Option<Component> {
    match err {
        RationaleError::LeadIn { component, .. }
        | RationaleError::EmptyComponent(component)
        | RationaleError::MissingComponent(component)
        | RationaleError::AmbiguousContent(component) => Some(*component),
        RationaleError::Catalog(crate::catalog::CatalogError::UnknownEmotion(_)) => {
            Some(Component::Emotion)
        }
        RationaleError::Catalog(crate::catalog::CatalogError::UnknownStrategy(_)) => {
            Some(Component::Strategy)
        }
        _ => None,
    }
}

/// Parses a generated transcript. Every agent line must carry a complete
/// rationale.
pub fn parse_transcript(raw: &str) -> Result<Vec<Turn>, SynthesisError> {
    let fail = |turn: usize, component: Option<Component>, detail: String| SynthesisError::Parse {
        turn,
        component,
        detail,
        raw: raw.to_string(),
    };
    let mut turns = Vec::new();
    for line in raw.lines().map(str::trim) {
        if line.is_empty() || line.starts_with("```") {
            continue;
        }
        let index = turns.len();
        let tagged = line
            .strip_prefix("Agent:")
            .map(str::trim_start)
            .filter(|rest| rest.starts_with("<R>"))
            .unwrap_or(line);
        if tagged.starts_with("<R>") {
            let (rationale, answer) = parse_with_mask(tagged, &AblationMask::full())
                .map_err(|e| fail(index, component_of(&e), e.to_string()))?;
            if rationale.response != answer {
                return Err(fail(
                    index,
                    Some(Component::Response),
                    "RG text differs from the answer span".into(),
                ));
            }
            turns.push(Turn::agent(&rationale));
        } else if let Some(caps) = user_line().captures(line) {
            let emotion = caps
                .get(1)
                .map(|m| m.as_str().trim().to_string())
                .filter(|s| !s.is_empty());
            turns.push(Turn {
                speaker: Speaker::User,
                utterance: caps[2].trim().to_string(),
                emotion,
                rationale: None,
            });
        } else if line.starts_with("Agent:") {
            return Err(fail(
                index,
                None,
                "agent turn has no tagged rationale".into(),
            ));
        } else {
            let preview: String = line.chars().take(40).collect();
            return Err(fail(index, None, format!("unrecognised line '{preview}'")));
        }
    }
    Ok(turns)
}

fn call(
    client: &dyn ChatClient,
    decoding: &SynthesisDecoding,
    prompt: String,
    context: impl FnOnce() -> String,
) -> Result<String, SynthesisError> {
    client
        .complete(&decoding.request(prompt))
        .map_err(|source| SynthesisError::Client {
            context: context(),
            source,
        })
}

/// Accepts non-empty, adequate replies not already in `seen`.
fn admit(
    reply: &str,
    batch: &mut ScenarioBatch,
    seen: &mut HashSet<String>,
    make: impl FnOnce(String) -> Scenario,
) {
    let text = reply.trim();
    if text.is_empty() {
        batch.empty_skipped += 1;
        tracing::info!(skipped = batch.empty_skipped, "empty scenario generation skipped");
    } else if !is_adequate_scenario(text) {
        batch.inadequate += 1;
    } else if !seen.insert(normalize_for_dedup(text)) {
        batch.duplicates += 1;
    } else {
        batch.scenarios.push(make(text.to_string()));
    }
}

/// Zero-shot scenario summaries, one request per seed dialogue (first `n`).
pub fn generate_scenarios(
    seeds: &[Dialogue],
    template: &PromptTemplate,
    client: &dyn ChatClient,
    n: usize,
    domain: DomainTag,
) -> Result<ScenarioBatch, SynthesisError> {
    let decoding = SynthesisDecoding::default();
    let mut batch = ScenarioBatch::default();
    let mut seen = HashSet::new();
    for (i, seed) in seeds.iter().take(n).enumerate() {
        let mut values = BTreeMap::new();
        values.insert("domain", domain.as_str().replace('_', " "));
        values.insert("dialogue", format_transcript(seed));
        let prompt = template.instantiate(&values)?;
        let reply = call(client, &decoding, prompt, || {
            format!("scenario request for seed dialogue {}", seed.id)
        })?;
        admit(&reply, &mut batch, &mut seen, |text| Scenario {
            id: format!("{}-s{:04}", domain, i),
            text,
            domain_tag: domain,
            provenance: ScenarioOrigin::Seeded,
        });
    }
    batch.scenarios = dedup_scenarios(batch.scenarios);
    Ok(batch)
}

/// Few-shot expansion: each of the `n` requests draws 3 fresh exemplars.
pub fn expand_scenarios(
    existing: &[Scenario],
    exemplars: &[(Scenario, Dialogue)],
    template: &PromptTemplate,
    client: &dyn ChatClient,
    n: usize,
    domain: DomainTag,
    seed: u64,
) -> Result<ScenarioBatch, SynthesisError> {
    if exemplars.len() < 3 {
        return Err(SynthesisError::Exemplars(exemplars.len()));
    }
    let decoding = SynthesisDecoding::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = ScenarioBatch::default();
    let mut seen: HashSet<String> = existing.iter().map(|s| normalize_for_dedup(&s.text)).collect();
    for request in 0..n {
        let picked = rand::seq::index::sample(&mut rng, exemplars.len(), 3);
        let mut values = BTreeMap::new();
        values.insert("domain", domain.as_str().replace('_', " "));
        for (slot, idx) in ["exemplar_1", "exemplar_2", "exemplar_3"].iter().zip(picked.iter()) {
            let (scenario, dialogue) = &exemplars[idx];
            values.insert(
                *slot,
                format!("{}\nDialogue:\n{}", scenario.text, format_transcript(dialogue)),
            );
        }
        let prompt = template.instantiate(&values)?;
        let reply = call(client, &decoding, prompt, || {
            format!("expansion request {request}")
        })?;
        let next_id = existing.len() + batch.scenarios.len();
        admit(&reply, &mut batch, &mut seen, |text| Scenario {
            id: format!("{}-x{:04}", domain, next_id),
            text,
            domain_tag: domain,
            provenance: ScenarioOrigin::Expanded,
        });
    }
    Ok(batch)
}

fn catalog_lists() -> (String, String) {
    let emotions = EmotionLabel::ALL
        .iter()
        .map(|e| e.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let strategies = StrategyLabel::ALL
        .iter()
        .map(|s| format!("- {}: {}", s.as_str(), s.definition()))
        .collect::<Vec<_>>()
        .join("\n");
    (emotions, strategies)
}

/// Requests one annotated dialogue for `scenario` and parses it.
pub fn synthesize_dialogue(
    scenario: &Scenario,
    exemplars: &[Dialogue],
    template: &PromptTemplate,
    client: &dyn ChatClient,
    decoding: &SynthesisDecoding,
    turns: usize,
) -> Result<SynthesizedDialogue, SynthesisError> {
    let (emotions, strategies) = catalog_lists();
    let mut values = BTreeMap::new();
    values.insert("scenario", scenario.text.clone());
    values.insert("emotions", emotions);
    values.insert("strategies", strategies);
    values.insert("turns", turns.to_string());
    values.insert(
        "exemplars",
        exemplars
            .iter()
            .map(|d| format!("Scenario: {}\n{}", d.scenario, format_transcript(d)))
            .collect::<Vec<_>>()
            .join("\n\n"),
    );
    let prompt = template.instantiate(&values)?;
    let raw = call(client, decoding, prompt, || {
        format!("dialogue request for scenario {}", scenario.id)
    })?;
    let turns = parse_transcript(&raw)?;
    let dialogue = Dialogue {
        id: format!("{}-dlg", scenario.id),
        scenario: scenario.text.clone(),
        domain_tag: scenario.domain_tag.as_str().into(),
        turns,
        quality_ratings: None,
    };
    let report = validate_dialogue(&dialogue);
    if !report.is_valid() {
        return Err(SynthesisError::Invalid { report, raw });
    }
    Ok(SynthesizedDialogue {
        dialogue,
        provenance: SynthesisProvenance {
            scenario_id: scenario.id.clone(),
            template: template.name.clone(),
            temperature: decoding.temperature,
            top_p: decoding.top_p,
        },
    })
}

/// Synthesizes one dialogue per scenario with at most `parallelism` requests
/// in flight. Results keep scenario order.
pub fn synthesize_corpus(
    scenarios: &[Scenario],
    exemplars: &[Dialogue],
    template: &PromptTemplate,
    client: &dyn ChatClient,
    decoding: &SynthesisDecoding,
    turns: usize,
    parallelism: usize,
) -> Vec<Result<SynthesizedDialogue, SynthesisError>> {
    let run = || {
        scenarios
            .par_iter()
            .map(|s| synthesize_dialogue(s, exemplars, template, client, decoding, turns))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}
