//! Offline stand-ins for the desk-scale pipeline: a bundled sample corpus, a
//! deterministic chat client for corpus synthesis and a completion-script
//! builder for the mock backend.

use crate::catalog::{EmotionLabel, StrategyLabel};
use crate::dialogue::{Context, Dialogue};
use crate::gateway::{ChatClient, ChatError, ChatRequest, CompletionScript};
use crate::rationale::{render_tagged_target, AblationMask, EnsCotRationale, CLOSE_RATIONALE, OPEN_RATIONALE};
use crate::text::stable_hash;

const SAMPLE_CORPUS: &str = include_str!("../data/sample_corpus.jsonl");

/// The bundled 20-dialogue annotated corpus.
pub fn sample_corpus() -> Vec<Dialogue> {
    SAMPLE_CORPUS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("bundled corpus is valid JSON"))
        .collect()
}

fn pick<'a, T>(items: &'a [T], key: u64, salt: u64) -> &'a T {
    &items[(key.wrapping_add(salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)) % items.len() as u64) as usize]
}

const ROLES: [&str; 6] = [
    "a logistics coordinator and a warehouse manager",
    "a junior developer and a hiring lead",
    "two housemates",
    "a festival volunteer and the event organiser",
    "a freelance photographer and a magazine editor",
    "two neighbouring farmers",
];
const ISSUES: [&str; 6] = [
    "pay, working hours and the start date",
    "storage space, delivery slots and equipment",
    "a shared budget, cleaning duties and guest rules",
    "overtime, travel costs and training",
    "image rights, fees and deadlines",
    "water access, machinery and harvest help",
];
const LIMITS: [&str; 4] = [
    "the budget was cut this quarter",
    "time is short before the season starts",
    "both sides depend on the same limited supply",
    "a previous agreement fell through",
];

/// Deterministic chat client that answers the three synthesis prompts without
/// a network. Scenario replies are built from small phrase pools keyed by a
/// hash of the prompt; dialogue replies reuse rationale shapes from the
/// sample corpus.
#[derive(Debug, Clone, Default)]
pub struct DeskChatClient;

impl DeskChatClient {
    fn scenario(&self, key: u64) -> String {
        format!(
            "The user and the agent are {} who need to settle {}. The talks are difficult because {}, and each side wants an outcome it can defend.",
            pick(&ROLES, key, 1),
            pick(&ISSUES, key, 2),
            pick(&LIMITS, key, 3),
        )
    }

    fn dialogue(&self, scenario: &str, turns: usize) -> String {
        let key = stable_hash(&[scenario.as_bytes()]);
        let mut lines = Vec::new();
        for pair in 0..turns.div_ceil(2) {
            let emotion = *pick(&EmotionLabel::ALL, key, pair as u64 * 2 + 1);
            let strategy = *pick(&StrategyLabel::ALL, key, pair as u64 * 2 + 2);
            lines.push(format!(
                "User [{emotion}]: I want to talk about point {} of this deal before we go further.",
                pair + 1
            ));
            if lines.len() >= turns {
                break;
            }
            let response = format!(
                "Thanks for raising point {}, let us work through it together.",
                pair + 1
            );
            let rationale = EnsCotRationale::full(
                emotion,
                format!("the way point {} was presented.", pair + 1),
                "this point decides whether the deal is fair.",
                "the point can be traded against other parts of the deal.",
                "a flexible stance can lead to a better overall result.",
                strategy,
                format!("respond to the user's {emotion}, the agent uses {strategy}."),
                response.clone(),
            );
            match render_tagged_target(&rationale, &response, &AblationMask::full()) {
                Ok(t) => lines.push(t.into_string()),
                Err(e) => return format!("Agent: could not render ({e})"),
            }
        }
        lines.join("\n")
    }
}

fn first_line_after<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    text.lines()
        .find_map(|l| l.trim().strip_prefix(marker))
        .map(str::trim)
}

impl ChatClient for DeskChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let prompt = &request.prompt;
        let key = stable_hash(&[prompt.as_bytes()]);
        if prompt.contains(OPEN_RATIONALE) && prompt.contains("turns in total") {
            let scenario = first_line_after(prompt, "Scenario:")
                .ok_or_else(|| ChatError::Malformed("dialogue prompt without a scenario line".into()))?;
            let turns = prompt
                .split("Write ")
                .filter_map(|s| s.split_whitespace().next()?.parse::<usize>().ok())
                .next()
                .unwrap_or(4);
            Ok(self.dialogue(scenario, turns))
        } else {
            Ok(self.scenario(key))
        }
    }
}

/// Answer-span variants offered to the mock policy for one context.
fn response_variants(reference: &str, other: &str) -> [String; 3] {
    [
        reference.to_string(),
        format!("{reference} Does that sound fair to you?"),
        other.to_string(),
    ]
}

/// Completion candidates for every agent turn in `dialogues`, rendered under `mask`.
///
/// Each context gets its reference answer, a lightly extended answer, an answer
/// borrowed from another context and one malformed completion. Turns without a
/// rationale borrow one from an annotated turn. Unknown prompts fall back to
/// generic completions.
pub fn build_desk_script(dialogues: &[Dialogue], mask: &AblationMask) -> CompletionScript {
    let turns: Vec<(Context, String, Option<EnsCotRationale>)> = dialogues
        .iter()
        .flat_map(|d| {
            d.agent_turns()
                .map(|(c, t)| {
                    let r = t.rationale.as_ref().and_then(|r| r.to_rationale().ok());
                    (c, t.utterance.clone(), r)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let donors: Vec<EnsCotRationale> = turns.iter().filter_map(|(_, _, r)| r.clone()).collect();
    let donors = if donors.is_empty() {
        vec![generic_rationale()]
    } else {
        donors
    };
    let render = |r: &EnsCotRationale, answer: &str| {
        let mut r = r.clone();
        r.response = answer.to_string();
        render_tagged_target(&r, answer, mask).ok().map(|t| t.into_string())
    };

    let mut script = CompletionScript::with_fallback(
        donors
            .iter()
            .take(4)
            .filter_map(|r| render(r, &r.response))
            .collect(),
    );
    for (i, (context, reference, own)) in turns.iter().enumerate() {
        let key = stable_hash(&[context.id.as_bytes()]);
        let rationale = own.clone().unwrap_or_else(|| pick(&donors, key, 0).clone());
        let other = &turns[(i + 1 + (key % turns.len().max(1) as u64) as usize) % turns.len()].1;
        let other = if other == reference {
            "I need to check with my team before I can answer that."
        } else {
            other.as_str()
        };
        let mut candidates: Vec<String> = response_variants(reference, other)
            .iter()
            .filter_map(|a| render(&rationale, a))
            .collect();
        candidates.push(format!(
            "The user feels {}. Agent: {reference}",
            rationale.emotion.map_or("neutral", |e| e.as_str()),
        ));
        candidates.push(format!("{CLOSE_RATIONALE} {reference}"));
        script.insert(&context.prompt(), candidates);
    }
    script
}

fn generic_rationale() -> EnsCotRationale {
    EnsCotRationale::full(
        EmotionLabel::Neutral,
        "the latest proposal.",
        "the proposal needs more detail.",
        "there may be room for both sides.",
        "an open question can lead to a better offer.",
        StrategyLabel::ProblemSolving,
        "find an option that suits both sides, the agent uses problem solving.",
        "Let us look for an option that works for both of us.",
    )
}
